//! Hamiltonian and momentum constraints of an initial data set, the
//! backreaction fields they define, and admissible initial data.

use std::f64::consts::PI;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chart::GridChart;
use crate::error::{Error, Result};
use crate::field::{CovectorField, MetricField, ScalarField, SymTensorField};
use crate::flow::FlowTrajectory;
use crate::geometry::Geometry;
use crate::homogeneous::{fmt, HomogeneousState};
use crate::kernel::{pair_scalar, pair_tensor, KernelField};
use crate::tensor::{self, IDENTITY6};

/// Cosmological constant and gravitational coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "unit")]
    pub newton: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            lambda: 0.0,
            newton: 1.0,
        }
    }
}

/// `(g, K, rho, J)` with `(Lambda, G)`.
#[derive(Clone, Debug)]
pub struct InitialDataSet {
    pub metric: MetricField,
    pub extrinsic: SymTensorField,
    pub density: ScalarField,
    pub momentum: CovectorField,
    pub constants: Constants,
}

impl InitialDataSet {
    pub fn new(
        metric: MetricField,
        extrinsic: SymTensorField,
        density: ScalarField,
        momentum: CovectorField,
        constants: Constants,
    ) -> Result<Self> {
        metric.field().same_chart(&extrinsic)?;
        metric.field().same_chart(&density)?;
        metric.field().same_chart(&momentum)?;
        Ok(InitialDataSet {
            metric,
            extrinsic,
            density,
            momentum,
            constants,
        })
    }

    /// Mean curvature `k = g^ab K_ab`.
    pub fn mean_curvature(&self) -> ScalarField {
        ScalarField::from_nodes(*self.metric.chart(), |n| {
            let ginv = tensor::inverse(&self.metric.at(n)).unwrap_or([[0.0; 3]; 3]);
            tensor::contract(&ginv, &tensor::unpack(&self.extrinsic.at(n)))
        })
    }
}

/// `R + k^2 - K^a_b K^b_a` at every node.
pub fn geometric_energy(geo: &Geometry, k: &SymTensorField) -> Result<ScalarField> {
    geo.metric().field().same_chart(k)?;
    Ok(ScalarField::from_nodes(*geo.chart(), |n| {
        let ginv = &geo.local(n).ginv;
        let km = tensor::unpack(&k.at(n));
        let mixed = tensor::mul(ginv, &km);
        let tr = mixed[0][0] + mixed[1][1] + mixed[2][2];
        let sq = tensor::contract(&tensor::transpose(&mixed), &mixed);
        geo.scalar_at(n) + tr * tr - sq
    }))
}

/// `R + k^2 - K.K - 16 pi G rho - 2 Lambda`.
pub fn hamiltonian_residual_with(
    geo: &Geometry,
    k: &SymTensorField,
    rho: &ScalarField,
    c: &Constants,
) -> Result<ScalarField> {
    geo.metric().field().same_chart(rho)?;
    let e = geometric_energy(geo, k)?;
    Ok(ScalarField::from_nodes(*geo.chart(), |n| {
        e.at(n) - 16.0 * PI * c.newton * rho.at(n) - 2.0 * c.lambda
    }))
}

/// `nabla_b K^b_a - nabla_a k - 8 pi G J_a`.
pub fn momentum_residual_with(
    geo: &Geometry,
    k: &SymTensorField,
    j: &CovectorField,
    c: &Constants,
) -> Result<CovectorField> {
    geo.metric().field().same_chart(j)?;
    let div = geo.divergence(k)?;
    let tr = geo.trace(k);
    let dtr = geo.gradient(&tr)?;
    Ok(CovectorField::from_nodes(*geo.chart(), |n| {
        let (d, t, jj) = (div.at(n), dtr.at(n), j.at(n));
        [0, 1, 2].map(|a| d[a] - t[a] - 8.0 * PI * c.newton * jj[a])
    }))
}

pub fn hamiltonian_residual(data: &InitialDataSet) -> Result<ScalarField> {
    let geo = Geometry::new(&data.metric)?;
    hamiltonian_residual_with(&geo, &data.extrinsic, &data.density, &data.constants)
}

pub fn momentum_residual(data: &InitialDataSet) -> Result<CovectorField> {
    let geo = Geometry::new(&data.metric)?;
    momentum_residual_with(&geo, &data.extrinsic, &data.momentum, &data.constants)
}

/// `phi = rho - (R + k^2 - K.K - 2 Lambda) / (16 pi G)`.
pub fn backreaction_phi_with(
    geo: &Geometry,
    k: &SymTensorField,
    rho: &ScalarField,
    c: &Constants,
) -> Result<ScalarField> {
    geo.metric().field().same_chart(rho)?;
    let e = geometric_energy(geo, k)?;
    let s = 1.0 / (16.0 * PI * c.newton);
    Ok(ScalarField::from_nodes(*geo.chart(), |n| {
        rho.at(n) - s * (e.at(n) - 2.0 * c.lambda)
    }))
}

/// `psi_a = J_a - (nabla_b K^b_a - nabla_a k) / (8 pi G)`.
pub fn backreaction_psi_with(
    geo: &Geometry,
    k: &SymTensorField,
    j: &CovectorField,
    c: &Constants,
) -> Result<CovectorField> {
    geo.metric().field().same_chart(j)?;
    let div = geo.divergence(k)?;
    let dtr = geo.gradient(&geo.trace(k))?;
    let s = 1.0 / (8.0 * PI * c.newton);
    Ok(CovectorField::from_nodes(*geo.chart(), |n| {
        let (d, t, jj) = (div.at(n), dtr.at(n), j.at(n));
        [0, 1, 2].map(|a| jj[a] - s * (d[a] - t[a]))
    }))
}

pub fn backreaction_phi(data: &InitialDataSet) -> Result<ScalarField> {
    let geo = Geometry::new(&data.metric)?;
    backreaction_phi_with(&geo, &data.extrinsic, &data.density, &data.constants)
}

pub fn backreaction_psi(data: &InitialDataSet) -> Result<CovectorField> {
    let geo = Geometry::new(&data.metric)?;
    backreaction_psi_with(&geo, &data.extrinsic, &data.momentum, &data.constants)
}

/// Background curvature `C` and the fluctuation `Ric - 2 C g`.
#[derive(Clone, Debug)]
pub struct ConstantCurvatureFit {
    pub c: f64,
    pub delta_ricci: SymTensorField,
}

/// `C = <R> / 6` from the volume average.
pub fn constant_curvature_fit(geo: &Geometry) -> ConstantCurvatureFit {
    let c = geo.mean_scalar_curvature() / 6.0;
    let g = geo.metric().field();
    let delta_ricci = SymTensorField::from_nodes(*geo.chart(), |n| {
        let ric = tensor::pack(geo.ricci_at(n));
        let gm = g.at(n);
        std::array::from_fn(|p| ric[p] - 2.0 * c * gm[p])
    });
    ConstantCurvatureFit { c, delta_ricci }
}

/// `rho` that makes the Hamiltonian constraint hold for a homogeneous model.
pub fn homogeneous_density(state: &HomogeneousState, c: &Constants) -> f64 {
    let mut energy = state.scalar_curvature();
    if let Some(k) = state.extrinsic() {
        let f = state.frame_metric();
        let mixed = [k[0] / f[0], k[1] / f[1], k[2] / f[2]];
        let tr: f64 = mixed.iter().sum();
        energy += tr * tr - mixed.iter().map(|x| x * x).sum::<f64>();
    }
    (energy - 2.0 * c.lambda) / (16.0 * PI * c.newton)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Background {
    Flat {},
    /// `g = a^2 delta`, `K = -H g`.
    Flrw {
        a: f64,
        hubble: f64,
    },
}

/// Recipe for admissible grid initial data.
///
/// `rho` and `J` are never prescribed; they are solved from the constraints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataSpec {
    pub background: Background,
    /// Amplitude of the metric perturbation `a^2 eps h_ab`.
    #[serde(default)]
    pub metric_amplitude: f64,
    /// Amplitude of a trace-free-ish perturbation added to `K`.
    #[serde(default)]
    pub extrinsic_amplitude: f64,
    /// Amplitude of `lambda(x) g` added to `K`; its gradient sources `J`.
    #[serde(default)]
    pub trace_amplitude: f64,
    /// Fourier mode number of all perturbations.
    #[serde(default = "one")]
    pub mode: u32,
    #[serde(default)]
    pub constants: Constants,
}

fn one() -> u32 {
    1
}

impl InitialDataSpec {
    pub fn new(background: Background) -> Self {
        InitialDataSpec {
            background,
            metric_amplitude: 0.0,
            extrinsic_amplitude: 0.0,
            trace_amplitude: 0.0,
            mode: 1,
            constants: Constants::default(),
        }
    }
}

/// Smooth periodic symmetric pattern of unit size.
fn pattern(chart: &GridChart, mode: u32, x: [f64; 3]) -> [f64; 6] {
    let p = chart.period();
    let m = mode as f64;
    let t: [f64; 3] = std::array::from_fn(|i| 2.0 * PI * m * x[i] / p[i]);
    let s = t[0].sin();
    let c = (t[1] + t[2]).cos();
    [
        s,
        0.5 * c,
        0.25 * (t[0] - t[1]).sin(),
        0.3 * c - 0.2 * s,
        0.2 * t[2].sin(),
        0.4 * c,
    ]
}

pub fn generate_initial_data(chart: GridChart, spec: &InitialDataSpec) -> Result<InitialDataSet> {
    let c = spec.constants;
    if !(c.newton > 0.0) {
        return Err(Error::Config("newton constant must be positive".into()));
    }
    if spec.mode == 0 {
        return Err(Error::Config("perturbation mode must be at least 1".into()));
    }
    let (a2, hubble) = match spec.background {
        Background::Flat {} => (1.0, 0.0),
        Background::Flrw { a, hubble } => {
            if !(a > 0.0) {
                return Err(Error::Config(format!("scale factor must be positive, got {a}")));
            }
            (a * a, hubble)
        }
    };
    let eps = spec.metric_amplitude;
    let metric = MetricField::new(SymTensorField::from_fn(chart, |x| {
        let h = pattern(&chart, spec.mode, x);
        std::array::from_fn(|p| a2 * (IDENTITY6[p] + eps * h[p]))
    }))?;
    let p = chart.period();
    let m = spec.mode as f64;
    let extrinsic = SymTensorField::from_nodes(chart, |n| {
        let x = chart.position(n);
        let g = metric.field().at(n);
        let lam = spec.trace_amplitude * (2.0 * PI * m * x[2] / p[2]).sin();
        let s = pattern(&chart, spec.mode, [x[1], x[2], x[0]]);
        std::array::from_fn(|q| (lam - hubble) * g[q] + spec.extrinsic_amplitude * a2 * s[q])
    });
    let geo = Geometry::new(&metric)?;
    let energy = geometric_energy(&geo, &extrinsic)?;
    let density = energy.map(|e| (e - 2.0 * c.lambda) / (16.0 * PI * c.newton));
    let div = geo.divergence(&extrinsic)?;
    let dtr = geo.gradient(&geo.trace(&extrinsic))?;
    let momentum = CovectorField::from_nodes(chart, |n| {
        let (d, t) = (div.at(n), dtr.at(n));
        [0, 1, 2].map(|a| (d[a] - t[a]) / (8.0 * PI * c.newton))
    });
    let data = InitialDataSet::new(metric, extrinsic, density, momentum, c)?;
    let ec = validate(&data);
    if let Some(e) = ec.violation() {
        return Err(e);
    }
    Ok(data)
}

/// Weak (`rho >= 0`) and dominant (`rho >= |J|_g`) energy conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyConditions {
    pub weak: bool,
    pub dominant: bool,
    /// `min rho` and where it occurs.
    pub weak_margin: f64,
    pub weak_node: usize,
    /// `min (rho - |J|_g)` and where it occurs.
    pub dominant_margin: f64,
    pub dominant_node: usize,
}

impl EnergyConditions {
    pub fn violation(&self) -> Option<Error> {
        if !self.weak {
            Some(Error::Inadmissible {
                condition: "weak energy",
                node: self.weak_node,
                margin: self.weak_margin,
            })
        } else if !self.dominant {
            Some(Error::Inadmissible {
                condition: "dominant energy",
                node: self.dominant_node,
                margin: self.dominant_margin,
            })
        } else {
            None
        }
    }
}

/// Round-off allowance of the energy-condition flags, relative to the field scale.
const FLAG_TOLERANCE: f64 = 1e-12;

pub fn validate(data: &InitialDataSet) -> EnergyConditions {
    energy_conditions(&data.metric, &data.density, &data.momentum)
}

pub fn energy_conditions(g: &MetricField, rho: &ScalarField, j: &CovectorField) -> EnergyConditions {
    let mut out = EnergyConditions {
        weak: true,
        dominant: true,
        weak_margin: f64::INFINITY,
        weak_node: 0,
        dominant_margin: f64::INFINITY,
        dominant_node: 0,
    };
    let mut scale = 0.0f64;
    for n in 0..g.chart().node_count() {
        let r = rho.at(n);
        let jn = covector_norm(&g.at(n), &j.at(n));
        scale = scale.max(r.abs()).max(jn);
        if r < out.weak_margin {
            out.weak_margin = r;
            out.weak_node = n;
        }
        if r - jn < out.dominant_margin {
            out.dominant_margin = r - jn;
            out.dominant_node = n;
        }
    }
    let tol = FLAG_TOLERANCE * scale.max(1.0);
    out.weak = out.weak_margin >= -tol;
    out.dominant = out.dominant_margin >= -tol;
    out
}

fn covector_norm(g: &tensor::Mat3, v: &[f64; 3]) -> f64 {
    let gi = tensor::inverse(g).unwrap_or([[0.0; 3]; 3]);
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += gi[a][b] * v[a] * v[b];
        }
    }
    s.max(0.0).sqrt()
}

/// `L^1`, `L^2` (Riemannian) and sup norms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

/// Norms of the pointwise magnitude `m >= 0`.
pub fn norms_of(geo: &Geometry, m: &ScalarField) -> Result<Norms> {
    Ok(Norms {
        l1: geo.integrate(&m.map(f64::abs))?,
        l2: geo.integrate(&m.map(|x| x * x))?.sqrt(),
        linf: m.max_abs(),
    })
}

#[derive(Clone, Debug)]
pub struct BackreactionReport {
    pub phi: ScalarField,
    pub psi: CovectorField,
    pub phi_norms: Norms,
    pub psi_norms: Norms,
    pub fit: ConstantCurvatureFit,
    pub delta_ricci_norms: Norms,
    pub energy: EnergyConditions,
}

pub fn backreaction_report_with(
    geo: &Geometry,
    k: &SymTensorField,
    rho: &ScalarField,
    j: &CovectorField,
    c: &Constants,
) -> Result<BackreactionReport> {
    let phi = backreaction_phi_with(geo, k, rho, c)?;
    let psi = backreaction_psi_with(geo, k, j, c)?;
    let chart = *geo.chart();
    let psi_mag = ScalarField::from_nodes(chart, |n| covector_norm(&geo.local(n).g, &psi.at(n)));
    let fit = constant_curvature_fit(geo);
    let dr_mag = ScalarField::from_nodes(chart, |n| {
        let gi = &geo.local(n).ginv;
        let d = tensor::unpack(&fit.delta_ricci.at(n));
        let mixed = tensor::mul(gi, &d);
        tensor::contract(&tensor::transpose(&mixed), &mixed).max(0.0).sqrt()
    });
    Ok(BackreactionReport {
        phi_norms: norms_of(geo, &phi)?,
        psi_norms: norms_of(geo, &psi_mag)?,
        delta_ricci_norms: norms_of(geo, &dr_mag)?,
        energy: energy_conditions(geo.metric(), rho, j),
        phi,
        psi,
        fit,
    })
}

pub fn backreaction_report(data: &InitialDataSet) -> Result<BackreactionReport> {
    let geo = Geometry::new(&data.metric)?;
    backreaction_report_with(&geo, &data.extrinsic, &data.density, &data.momentum, &data.constants)
}

/// How `J` was obtained on the slices of a backreaction table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumTreatment {
    Held,
    KernelSmoothed,
}

impl MomentumTreatment {
    pub fn label(self) -> &'static str {
        match self {
            MomentumTreatment::Held => "held",
            MomentumTreatment::KernelSmoothed => "kernel-smoothed",
        }
    }
}

/// One row per flow parameter.
pub fn write_backreaction_csv<W: Write>(
    rows: &[(f64, BackreactionReport)],
    momentum: MomentumTreatment,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "beta",
        "phi_l1",
        "phi_l2",
        "phi_linf",
        "psi_l1",
        "psi_l2",
        "psi_linf",
        "c",
        "delta_ricci_l1",
        "delta_ricci_l2",
        "delta_ricci_linf",
        "weak_margin",
        "dominant_margin",
        "momentum",
    ])?;
    for (beta, r) in rows {
        w.write_record([
            fmt(*beta),
            fmt(r.phi_norms.l1),
            fmt(r.phi_norms.l2),
            fmt(r.phi_norms.linf),
            fmt(r.psi_norms.l1),
            fmt(r.psi_norms.l2),
            fmt(r.psi_norms.linf),
            fmt(r.fit.c),
            fmt(r.delta_ricci_norms.l1),
            fmt(r.delta_ricci_norms.l2),
            fmt(r.delta_ricci_norms.linf),
            fmt(r.energy.weak_margin),
            fmt(r.energy.dominant_margin),
            momentum.label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Kernel-smoothed `phi` at the source, in the full and fluctuation forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothedPhi {
    pub eta: f64,
    /// `int E rho - (16 pi G)^{-1} int g^{i'k'} E^ab_{i'k'} R_ab`.
    pub full: f64,
    /// `-(16 pi G)^{-1} int g^{i'k'} E^ab_{i'k'} dR_ab`.
    pub fluctuation: f64,
    pub difference: f64,
    pub background_c: f64,
    /// `int E rho - (6 C - 2 Lambda) / (16 pi G)`: the Hamiltonian constraint at scale `eta`.
    pub scale_constraint_residual: f64,
    pub extrinsic_vanishes: bool,
    pub lambda_vanishes: bool,
}

/// `g^{i'k'} v_{i'k'}` for packed `v`.
fn trace_packed(ginv: &tensor::Mat3, v: &[f64; 6]) -> f64 {
    tensor::contract(ginv, &tensor::unpack(v))
}

pub fn smoothed_phi(
    traj: &FlowTrajectory,
    scalar: &KernelField,
    tensor_kernel: &KernelField,
    eta: f64,
    c: &Constants,
) -> Result<SmoothedPhi> {
    if scalar.source() != tensor_kernel.source() || scalar.beta_star() != tensor_kernel.beta_star() {
        return Err(Error::Config(
            "scalar and tensor kernels must share source and beta*".into(),
        ));
    }
    let y = scalar.source();
    let beta = scalar.slice_beta(eta);
    let g = traj.metric_at(beta)?;
    let geo = Geometry::new(&g)?;
    let rho = traj.density_at(beta)?;
    let k = traj.extrinsic_at(beta)?;
    let gy = traj.metric_at(scalar.beta_star())?.at(y);
    let ginv_y = tensor::inverse(&gy).ok_or(Error::SingularMetric {
        node: y,
        coords: g.chart().coords(y),
    })?;
    let s = 1.0 / (16.0 * PI * c.newton);
    let smoothed_rho = pair_scalar(scalar, &g, &rho, eta)?;
    let ric = pair_tensor(tensor_kernel, &g, &geo.ricci(), eta)?;
    let fit = constant_curvature_fit(&geo);
    let dr = pair_tensor(tensor_kernel, &g, &fit.delta_ricci, eta)?;
    let full = smoothed_rho - s * trace_packed(&ginv_y, &ric);
    let fluctuation = -s * trace_packed(&ginv_y, &dr);
    Ok(SmoothedPhi {
        eta,
        full,
        fluctuation,
        difference: full - fluctuation,
        background_c: fit.c,
        scale_constraint_residual: smoothed_rho - s * (6.0 * fit.c - 2.0 * c.lambda),
        extrinsic_vanishes: k.max_abs() == 0.0,
        lambda_vanishes: c.lambda == 0.0,
    })
}

//! Conjugate backward heat kernels on a stored flow, their representation
//! formulas and the leading Gaussian parametrix.
//!
//! A kernel sourced at `y` is labelled by `eta = beta* - beta` and lives on the
//! slice `g(beta* - eta)`. Tensor kernels `E^ab_{i'k'}` are stored as one
//! contravariant field per source pair `(i'k')` in `11,12,13,22,23,33` order.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chart::{GridChart, PAIRS};
use crate::error::{Error, Result};
use crate::field::{MetricField, ScalarField, SymTensorField};
use crate::flow::ode::{rk4_field_step, Memo};
use crate::flow::{parabolic_bound, FlowTrajectory};
use crate::geometry::distance::{geodesic_distance, DistanceField};
use crate::geometry::transport::{parallel_transport, TransportField};
use crate::geometry::Geometry;
use crate::snapshot::{self, SnapshotHeader};
use crate::tensor::{self, Mat3, Sym6};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rank {
    Scalar,
    Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelControls {
    /// Mollification scale; must be at least `4 h^2`.
    pub eta0: f64,
    pub eta_max: f64,
    /// Extra labels at which the kernel is kept.
    pub etas: Vec<f64>,
    /// Defaults to the end of the trajectory.
    pub beta_star: Option<f64>,
    pub safety: f64,
    /// Lower bound on the number of steps per unit `eta`.
    pub min_steps_per_unit: Option<f64>,
}

impl KernelControls {
    pub fn new(eta0: f64, eta_max: f64) -> Self {
        KernelControls {
            eta0,
            eta_max,
            etas: Vec::new(),
            beta_star: None,
            safety: 0.5,
            min_steps_per_unit: None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum KernelSlice {
    Scalar(ScalarField),
    Tensor(Box<[SymTensorField; 6]>),
}

#[derive(Clone, Debug)]
pub struct KernelField {
    source: usize,
    eta0: f64,
    beta_star: f64,
    rank: Rank,
    slices: Vec<(f64, KernelSlice)>,
}

/// `1/2 (e_i e_k + e_k e_i)` for the source pair `p`, packed.
pub fn pair_block(p: usize) -> Sym6 {
    let (i, k) = PAIRS[p];
    let mut m = [[0.0; 3]; 3];
    m[i][k] += 0.5;
    m[k][i] += 0.5;
    tensor::pack(&m)
}

impl KernelField {
    pub fn source(&self) -> usize {
        self.source
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn beta_star(&self) -> f64 {
        self.beta_star
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn etas(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.0).collect()
    }

    pub fn chart(&self) -> &GridChart {
        match &self.slices[0].1 {
            KernelSlice::Scalar(f) => f.chart(),
            KernelSlice::Tensor(f) => f[0].chart(),
        }
    }

    /// Flow parameter of the slice carrying label `eta`.
    pub fn slice_beta(&self, eta: f64) -> f64 {
        self.beta_star - eta
    }

    fn find(&self, eta: f64) -> Result<&KernelSlice> {
        let tol = 1e-12 * eta.abs().max(1.0);
        self.slices
            .iter()
            .find(|s| (s.0 - eta).abs() <= tol)
            .map(|s| &s.1)
            .ok_or(Error::MissingKernel(eta))
    }

    pub fn slice(&self, eta: f64) -> Result<&KernelSlice> {
        self.find(eta)
    }

    pub fn scalar(&self, eta: f64) -> Result<&ScalarField> {
        match self.find(eta)? {
            KernelSlice::Scalar(f) => Ok(f),
            KernelSlice::Tensor(_) => Err(Error::Config("scalar kernel requested from a tensor kernel".into())),
        }
    }

    pub fn tensor(&self, eta: f64) -> Result<&[SymTensorField; 6]> {
        match self.find(eta)? {
            KernelSlice::Tensor(f) => Ok(f),
            KernelSlice::Scalar(_) => Err(Error::Config("tensor kernel requested from a scalar kernel".into())),
        }
    }

    /// Writes one snapshot per label (and source pair) and returns the manifest entries.
    pub fn write_snapshots(&self, dir: &Path, stem: &str) -> Result<Vec<KernelManifestEntry>> {
        let chart = *self.chart();
        let mut out = Vec::new();
        for (idx, (eta, slice)) in self.slices.iter().enumerate() {
            match slice {
                KernelSlice::Scalar(f) => {
                    let file = format!("{stem}_y{}_eta{idx:03}.snap", self.source);
                    let header = SnapshotHeader::for_field::<f64>(&chart)
                        .with_label(*eta)
                        .with_source(self.source)
                        .with_quantity("scalar-kernel");
                    snapshot::write(&dir.join(&file), f, &header)?;
                    out.push(KernelManifestEntry::new(self, *eta, None, file));
                }
                KernelSlice::Tensor(fs) => {
                    for (p, f) in fs.iter().enumerate() {
                        let (i, k) = PAIRS[p];
                        let pair = format!("{}{}", i + 1, k + 1);
                        let file = format!("{stem}_y{}_eta{idx:03}_p{pair}.snap", self.source);
                        let header = SnapshotHeader::for_field::<Sym6>(&chart)
                            .with_label(*eta)
                            .with_source(self.source)
                            .with_quantity(&format!("tensor-kernel-{pair}"));
                        snapshot::write(&dir.join(&file), f, &header)?;
                        out.push(KernelManifestEntry::new(self, *eta, Some(pair), file));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One available `(y, eta)` kernel file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelManifestEntry {
    pub source: usize,
    pub source_coords: [usize; 3],
    pub eta: f64,
    pub beta: f64,
    pub eta0: f64,
    pub rank: Rank,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<String>,
    pub file: PathBuf,
}

impl KernelManifestEntry {
    fn new(k: &KernelField, eta: f64, pair: Option<String>, file: String) -> Self {
        KernelManifestEntry {
            source: k.source,
            source_coords: k.chart().coords(k.source),
            eta,
            beta: k.slice_beta(eta),
            eta0: k.eta0,
            rank: k.rank,
            pair,
            file: PathBuf::from(file),
        }
    }
}

/// Metric Gaussian of variance `2 eta0` frozen at `y`, summed over periodic
/// images and scaled to unit discrete mass under `g`.
pub fn mollifier(g: &MetricField, y: usize, eta0: f64) -> Result<ScalarField> {
    let chart = *g.chart();
    let h = chart.min_spacing();
    if !(eta0 >= 4.0 * h * h) {
        return Err(Error::UnderResolvedMollifier { eta0, min: 4.0 * h * h });
    }
    let gy = g.at(y);
    let lam_min = tensor::symmetric_eigenvalues(&gy)[0];
    let reach = (4.0 * eta0 * 80.0 / lam_min).sqrt();
    let period = chart.period();
    let images: [i64; 3] = std::array::from_fn(|a| (reach / period[a]).ceil() as i64 + 1);
    let ypos = chart.position(y);
    let raw = ScalarField::from_fn(chart, |x| {
        let base = chart.displacement(ypos, x);
        let mut s = 0.0;
        for i in -images[0]..=images[0] {
            for j in -images[1]..=images[1] {
                for k in -images[2]..=images[2] {
                    let d = [
                        base[0] + i as f64 * period[0],
                        base[1] + j as f64 * period[1],
                        base[2] + k as f64 * period[2],
                    ];
                    let mut q = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            q += gy[a][b] * d[a] * d[b];
                        }
                    }
                    s += (-q / (4.0 * eta0)).exp();
                }
            }
        }
        s
    });
    let mass = crate::geometry::integrate(g, &raw)?;
    Ok(raw.scaled(1.0 / mass))
}

/// Geometry of the slice at label `eta`, rebuilt only when the flow moves.
struct Slices<'a> {
    traj: &'a FlowTrajectory,
    beta_star: f64,
    frozen: Option<Geometry>,
    memo: Memo<Geometry>,
}

impl<'a> Slices<'a> {
    fn new(traj: &'a FlowTrajectory, beta_star: f64) -> Result<Self> {
        let first = traj.states[0].metric.field();
        let frozen = if traj.states.iter().all(|s| s.metric.field().data() == first.data()) {
            Some(Geometry::new(&traj.states[0].metric)?)
        } else {
            None
        };
        Ok(Slices {
            traj,
            beta_star,
            frozen,
            memo: Memo::default(),
        })
    }

    fn at(&mut self, eta: f64) -> Result<&Geometry> {
        if let Some(g) = &self.frozen {
            let b = self.beta_star - eta;
            let (lo, hi) = (self.traj.first_beta(), self.traj.last_beta());
            let tol = 1e-12 * (hi - lo).abs().max(1.0);
            if b < lo - tol || b > hi + tol {
                return Err(Error::MissingCoverage { beta: b, lo, hi });
            }
            return Ok(g);
        }
        let (traj, bs) = (self.traj, self.beta_star);
        self.memo.get(eta, |e| Geometry::new(&traj.metric_at(bs - e)?))
    }
}

/// Marches `dE/deta = Delta_L E - R E` from the mollified delta at `eta0`.
pub fn conjugate_kernel(traj: &FlowTrajectory, y: usize, rank: Rank, controls: &KernelControls) -> Result<KernelField> {
    let beta_star = controls.beta_star.unwrap_or(traj.last_beta());
    let (eta0, eta_max) = (controls.eta0, controls.eta_max);
    if !(controls.safety > 0.0) || !(eta_max >= eta0) {
        return Err(Error::Config(format!(
            "need eta_max >= eta0 and positive safety (eta0 {eta0}, eta_max {eta_max})"
        )));
    }
    let chart = *traj.states[0].chart();
    if y >= chart.node_count() {
        return Err(Error::Config(format!("source node {y} outside the grid")));
    }
    let mut labels: Vec<f64> = controls
        .etas
        .iter()
        .copied()
        .filter(|e| *e > eta0 && *e < eta_max)
        .collect();
    labels.push(eta_max);
    labels.sort_by(f64::total_cmp);
    labels.dedup();

    let mut slices = Slices::new(traj, beta_star)?;
    slices.at(eta_max)?;
    let g0 = traj.metric_at(beta_star - eta0)?;
    let bound =
        parabolic_bound(slices.at(eta0)?, controls.safety).min(parabolic_bound(slices.at(eta_max)?, controls.safety));
    let per_unit = (1.0 / bound).max(controls.min_steps_per_unit.unwrap_or(0.0));

    let m = mollifier(&g0, y, eta0)?;
    let mut state: Vec<KernelSlice> = match rank {
        Rank::Scalar => vec![KernelSlice::Scalar(m)],
        Rank::Tensor => {
            let fields: [SymTensorField; 6] = std::array::from_fn(|p| {
                let b = pair_block(p);
                SymTensorField::from_nodes(chart, |n| b.map(|v| v * m.at(n)))
            });
            vec![KernelSlice::Tensor(Box::new(fields))]
        }
    };
    let mut out = KernelField {
        source: y,
        eta0,
        beta_star,
        rank,
        slices: vec![(eta0, state.pop().expect("initial slice"))],
    };
    let mut eta = eta0;
    for &target in labels.iter().filter(|t| **t > eta0) {
        let span = target - eta;
        let steps = ((span * per_unit).ceil() as usize).max(usize::from(span > 0.0));
        let mut current = out.slices.last().expect("non-empty").1.clone();
        for i in 0..steps {
            let e0 = eta + span * i as f64 / steps as f64;
            let e1 = if i + 1 == steps {
                target
            } else {
                eta + span * (i + 1) as f64 / steps as f64
            };
            current = step(&mut slices, current, e0, e1 - e0)?;
        }
        eta = target;
        out.slices.push((target, current));
    }
    Ok(out)
}

fn step(slices: &mut Slices, current: KernelSlice, e0: f64, de: f64) -> Result<KernelSlice> {
    Ok(match current {
        KernelSlice::Scalar(f) => KernelSlice::Scalar(rk4_field_step(&f, e0, de, |e, u| {
            let geo = slices.at(e)?;
            let lap = geo.laplace_beltrami(u)?;
            Ok(ScalarField::from_nodes(*u.chart(), |n| {
                lap.at(n) - geo.scalar_at(n) * u.at(n)
            }))
        })?),
        KernelSlice::Tensor(fs) => {
            let mut next = Vec::with_capacity(6);
            for f in fs.iter() {
                next.push(rk4_field_step(f, e0, de, |e, u| {
                    let geo = slices.at(e)?;
                    let lap = geo.lichnerowicz_laplacian_upper(u)?;
                    Ok(SymTensorField::from_nodes(*u.chart(), |n| {
                        let r = geo.scalar_at(n);
                        let (l, v) = (lap.at(n), u.at(n));
                        std::array::from_fn(|q| l[q] - r * v[q])
                    }))
                })?);
            }
            KernelSlice::Tensor(Box::new(next.try_into().expect("six pairs")))
        }
    })
}

/// `int E dmu` on the slice at `eta`.
pub fn kernel_mass(kernel: &KernelField, traj: &FlowTrajectory, eta: f64) -> Result<f64> {
    let g = traj.metric_at(kernel.slice_beta(eta))?;
    crate::geometry::integrate(&g, kernel.scalar(eta)?)
}

/// `int E u dmu` against the slice metric `g`.
pub fn pair_scalar(kernel: &KernelField, g: &MetricField, u: &ScalarField, eta: f64) -> Result<f64> {
    let e = kernel.scalar(eta)?;
    e.same_chart(u)?;
    let prod = ScalarField::from_nodes(*u.chart(), |n| e.at(n) * u.at(n));
    crate::geometry::integrate(g, &prod)
}

/// `int E^ab_{i'k'} X_ab dmu`, packed over `(i'k')`.
pub fn pair_tensor(kernel: &KernelField, g: &MetricField, x: &SymTensorField, eta: f64) -> Result<Sym6> {
    let fs = kernel.tensor(eta)?;
    let mut out = [0.0; 6];
    for (p, e) in fs.iter().enumerate() {
        e.same_chart(x)?;
        let prod = ScalarField::from_nodes(*x.chart(), |n| {
            tensor::contract(&tensor::unpack(&e.at(n)), &tensor::unpack(&x.at(n)))
        });
        out[p] = crate::geometry::integrate(g, &prod)?;
    }
    Ok(out)
}

/// Quantity recovered at the source on the final slice (`eta = 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// `int E [g - 2 eta Ric] dmu`.
    Metric,
    /// `int E K dmu`.
    Extrinsic,
    /// `int E Ric dmu`.
    Ricci,
    /// `int E rho dmu`.
    Density,
}

impl Target {
    pub fn rank(self) -> Rank {
        match self {
            Target::Density => Rank::Scalar,
            _ => Rank::Tensor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Represented {
    Scalar(f64),
    Tensor(Sym6),
}

/// Representation formula evaluated with the kernel at label `eta`.
pub fn represent_field(kernel: &KernelField, traj: &FlowTrajectory, target: Target, eta: f64) -> Result<Represented> {
    let beta = kernel.slice_beta(eta);
    let g = traj.metric_at(beta)?;
    match target {
        Target::Density => Ok(Represented::Scalar(pair_scalar(
            kernel,
            &g,
            &traj.density_at(beta)?,
            eta,
        )?)),
        Target::Extrinsic => Ok(Represented::Tensor(pair_tensor(
            kernel,
            &g,
            &traj.extrinsic_at(beta)?,
            eta,
        )?)),
        Target::Ricci => {
            let ric = Geometry::new(&g)?.ricci();
            Ok(Represented::Tensor(pair_tensor(kernel, &g, &ric, eta)?))
        }
        Target::Metric => {
            let ric = Geometry::new(&g)?.ricci();
            let x = g.field().axpy(-2.0 * eta, &ric);
            Ok(Represented::Tensor(pair_tensor(kernel, &g, &x, eta)?))
        }
    }
}

/// Leading term `(4 pi eta)^{-3/2} exp(-d^2 / 4 eta)` (times transport) about a source.
#[derive(Clone, Debug)]
pub struct Parametrix {
    distance: DistanceField,
    transport: Option<TransportField>,
}

impl Parametrix {
    pub fn new(g0: &MetricField, y: usize, rank: Rank) -> Result<Self> {
        Ok(Parametrix {
            distance: geodesic_distance(g0, y)?,
            transport: match rank {
                Rank::Scalar => None,
                Rank::Tensor => Some(parallel_transport(g0, y)?),
            },
        })
    }

    pub fn source(&self) -> usize {
        self.distance.source()
    }

    pub fn distance(&self) -> &DistanceField {
        &self.distance
    }

    pub fn scalar(&self, x: usize, eta: f64) -> Result<f64> {
        let d = self.distance.at(x)?;
        Ok((4.0 * PI * eta).powf(-1.5) * (-d * d / (4.0 * eta)).exp())
    }

    /// `[p][ab]`: the block `1/2 (P^a_i' P^b_k' + P^a_k' P^b_i')` times the scalar term.
    pub fn tensor(&self, x: usize, eta: f64) -> Result<[Sym6; 6]> {
        let s = self.scalar(x, eta)?;
        let t = self
            .transport
            .as_ref()
            .ok_or_else(|| Error::Config("parametrix built without transport".into()))?;
        Ok(transport_blocks(&t.at(x)?).map(|b| b.map(|v| v * s)))
    }
}

/// Symmetrized `P (x) P` for every source pair.
pub fn transport_blocks(p: &Mat3) -> [Sym6; 6] {
    std::array::from_fn(|q| {
        let (i, k) = PAIRS[q];
        let mut m = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] = 0.5 * (p[a][i] * p[b][k] + p[a][k] * p[b][i]);
            }
        }
        tensor::pack(&m)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParametrixValue {
    Scalar(f64),
    Tensor([Sym6; 6]),
}

pub fn gaussian_parametrix(g0: &MetricField, y: usize, x: usize, eta: f64, rank: Rank) -> Result<ParametrixValue> {
    let p = Parametrix::new(g0, y, rank)?;
    match rank {
        Rank::Scalar => Ok(ParametrixValue::Scalar(p.scalar(x, eta)?)),
        Rank::Tensor => Ok(ParametrixValue::Tensor(p.tensor(x, eta)?)),
    }
}

#[cfg(test)]
mod tests;

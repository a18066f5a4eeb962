//! Explicit RK4 method of lines with parabolic step control and monitors.

use std::io::Write;

use serde::Serialize;

use super::{rates, FlowState, Rates};
use crate::chart::Linear;
use crate::constraints::{hamiltonian_residual_with, momentum_residual_with};
use crate::error::{Error, Result};
use crate::field::{Components, Field, MetricField, ScalarField, SymTensorField};
use crate::geometry::Geometry;
use crate::homogeneous::fmt;
use crate::pinching::{self, PinchingReport};
use crate::tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowControls {
    pub target_beta: f64,
    /// Fraction of the parabolic bound `h^2 / (6 max g^ii)`.
    pub safety: f64,
    pub max_step: Option<f64>,
    /// Use this step throughout; must satisfy the bound initially.
    pub fixed_step: Option<f64>,
    /// `None` selects `1e6 (sup|Rm|_0 + 1)`.
    pub rm_ceiling: Option<f64>,
    pub det_floor: f64,
    pub min_step: f64,
    /// Keep every n-th state (the first and last are always kept).
    pub store_every: usize,
    /// Stop with a positivity error instead of flagging negative density.
    pub strict_positivity: bool,
    /// The `alpha1` whose margin is monitored.
    pub pinching_alpha1: f64,
    /// Used when the samples cannot determine `alpha3`.
    pub pinching_alpha3: f64,
}

impl Default for FlowControls {
    fn default() -> Self {
        FlowControls {
            target_beta: 0.0,
            safety: 0.5,
            max_step: None,
            fixed_step: None,
            rm_ceiling: None,
            det_floor: 1e-12,
            min_step: 1e-12,
            store_every: 1,
            strict_positivity: false,
            pinching_alpha1: 0.1,
            pinching_alpha3: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPinching {
    pub report: PinchingReport,
    /// Min over nodes of the smallest eigenvalue of `g^-1 (Ric - alpha1 R g)`.
    pub alpha1_margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub beta: f64,
    pub step: f64,
    pub volume: f64,
    pub sup_rm: f64,
    pub min_det: f64,
    pub min_density: f64,
    pub max_density: f64,
    /// `int rho dmu`.
    pub mass: f64,
    pub mean_scalar: f64,
    pub hamiltonian_residual: f64,
    pub momentum_residual: f64,
    pub weak_energy: bool,
    pub pinching: GridPinching,
}

/// Stored states with per-step diagnostics.
#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub states: Vec<FlowState>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// A trajectory together with the reason it ended early, if any.
#[derive(Debug)]
pub struct Evolution {
    pub trajectory: FlowTrajectory,
    pub stop: Option<Error>,
}

impl Evolution {
    pub fn into_result(self) -> Result<FlowTrajectory> {
        match self.stop {
            None => Ok(self.trajectory),
            Some(e) => Err(e),
        }
    }
}

/// Pinching diagnostics from sampled `g` and `Ric`.
pub fn grid_pinching_report_from(
    g: &MetricField,
    ric: &SymTensorField,
    alpha1: f64,
    fallback_alpha3: f64,
) -> Result<GridPinching> {
    g.field().same_chart(ric)?;
    let mut samples = Vec::with_capacity(ric.data().len());
    let mut margin = f64::INFINITY;
    for n in 0..g.chart().node_count() {
        let gm = g.at(n);
        let eig = tensor::relative_eigenvalues(&tensor::unpack(&ric.at(n)), &gm).ok_or(Error::SingularMetric {
            node: n,
            coords: g.chart().coords(n),
        })?;
        let s = pinching::pointwise(eig);
        margin = margin.min(eig[0] - alpha1 * s.0);
        samples.push(s);
    }
    Ok(GridPinching {
        report: pinching::aggregate(&samples, fallback_alpha3),
        alpha1_margin: margin,
    })
}

pub fn grid_pinching_report(state: &FlowState, alpha1: f64, fallback_alpha3: f64) -> Result<GridPinching> {
    let geo = Geometry::new(&state.metric)?;
    grid_pinching_report_from(&state.metric, &geo.ricci(), alpha1, fallback_alpha3)
}

/// `safety h^2 / (6 max g^ii)`, the explicit step limit for the heat-type operators.
pub fn parabolic_bound(geo: &Geometry, safety: f64) -> f64 {
    let h = geo.chart().min_spacing();
    let mut m = 0.0f64;
    for n in 0..geo.chart().node_count() {
        let gi = &geo.local(n).ginv;
        m = m.max(gi[0][0]).max(gi[1][1]).max(gi[2][2]);
    }
    safety * h * h / (6.0 * m)
}

fn diagnostics(state: &FlowState, geo: &Geometry, step: f64, controls: &FlowControls) -> Result<StepDiagnostics> {
    let sup_rm = geo.riemann_norm_sup();
    let ham = hamiltonian_residual_with(geo, &state.extrinsic, &state.density, &state.constants)?;
    let mom = momentum_residual_with(geo, &state.extrinsic, &state.momentum, &state.constants)?;
    let min_density = state.density.min();
    let pinching = grid_pinching_report_from(
        &state.metric,
        &geo.ricci(),
        controls.pinching_alpha1,
        controls.pinching_alpha3,
    )?;
    Ok(StepDiagnostics {
        beta: state.beta,
        step,
        volume: geo.volume(),
        sup_rm,
        min_det: state.metric.min_det(),
        min_density,
        max_density: state.density.max(),
        mass: geo.integrate(&state.density)?,
        mean_scalar: geo.mean_scalar_curvature(),
        hamiltonian_residual: ham.max_abs(),
        momentum_residual: mom.max_abs(),
        weak_energy: min_density >= 0.0,
        pinching,
    })
}

fn finite<T: Linear + Components>(f: &Field<T>) -> bool {
    f.data().iter().all(|v| v.components().iter().all(|x| x.is_finite()))
}

/// `state + w * r` for the evolved fields.
fn advance(state: &FlowState, w: f64, r: &Rates, beta: f64) -> std::result::Result<FlowState, SymTensorField> {
    let g = state.metric.field().axpy(w, &r.metric);
    let metric = MetricField::new(g.clone()).map_err(|_| g)?;
    Ok(FlowState {
        beta,
        metric,
        extrinsic: state.extrinsic.axpy(w, &r.extrinsic),
        density: state.density.axpy(w, &r.density),
        momentum: state.momentum.clone(),
        constants: state.constants,
        gauge: state.gauge.clone(),
    })
}

enum StepFailure {
    Singular,
    Other(Error),
}

fn rk4(state: &FlowState, geo: &Geometry, dt: f64) -> std::result::Result<(FlowState, Geometry), StepFailure> {
    let stage =
        |s: &FlowState, w: f64, r: &Rates, beta: f64| -> std::result::Result<(FlowState, Geometry), StepFailure> {
            let next = advance(s, w, r, beta).map_err(|_| StepFailure::Singular)?;
            let g = Geometry::new(&next.metric).map_err(|_| StepFailure::Singular)?;
            Ok((next, g))
        };
    let b = state.beta;
    let k1 = rates(state, geo).map_err(StepFailure::Other)?;
    let (s2, g2) = stage(state, 0.5 * dt, &k1, b + 0.5 * dt)?;
    let k2 = rates(&s2, &g2).map_err(StepFailure::Other)?;
    let (s3, g3) = stage(state, 0.5 * dt, &k2, b + 0.5 * dt)?;
    let k3 = rates(&s3, &g3).map_err(StepFailure::Other)?;
    let (s4, g4) = stage(state, dt, &k3, b + dt)?;
    let k4 = rates(&s4, &g4).map_err(StepFailure::Other)?;
    drop((s2, g2, s3, g3, s4, g4));
    let w = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
    let combined = Rates {
        metric: SymTensorField::combine(&[
            (w[0], &k1.metric),
            (w[1], &k2.metric),
            (w[2], &k3.metric),
            (w[3], &k4.metric),
        ]),
        extrinsic: SymTensorField::combine(&[
            (w[0], &k1.extrinsic),
            (w[1], &k2.extrinsic),
            (w[2], &k3.extrinsic),
            (w[3], &k4.extrinsic),
        ]),
        density: ScalarField::combine(&[
            (w[0], &k1.density),
            (w[1], &k2.density),
            (w[2], &k3.density),
            (w[3], &k4.density),
        ]),
    };
    stage(state, 1.0, &combined, b + dt)
}

pub fn evolve(initial: FlowState, controls: &FlowControls) -> Result<Evolution> {
    if !(controls.safety > 0.0) || controls.store_every == 0 {
        return Err(Error::Config("safety and store_every must be positive".into()));
    }
    let target = controls.target_beta;
    let mut geo = Geometry::new(&initial.metric)?;
    let bound0 = parabolic_bound(&geo, controls.safety);
    if let Some(fixed) = controls.fixed_step {
        if !(fixed > 0.0) || fixed > bound0 * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "fixed step {fixed} violates the parabolic bound {bound0}"
            )));
        }
    }
    let d0 = diagnostics(&initial, &geo, 0.0, controls)?;
    let ceiling = controls.rm_ceiling.unwrap_or(1e6 * (d0.sup_rm + 1.0));
    let mut traj = FlowTrajectory {
        states: vec![initial.clone()],
        diagnostics: vec![d0],
    };
    let mut state = initial;
    let mut count = 0usize;
    let end_tol = 1e-12 * target.abs().max(1.0);
    let finish = |traj: FlowTrajectory, stop| Ok(Evolution { trajectory: traj, stop });
    while state.beta < target - end_tol {
        let bound = parabolic_bound(&geo, controls.safety);
        let mut dt = controls.fixed_step.unwrap_or(bound);
        if let Some(m) = controls.max_step {
            dt = dt.min(m);
        }
        let remaining = target - state.beta;
        if dt >= remaining - end_tol {
            dt = remaining;
        }
        if dt < controls.min_step {
            return finish(
                traj,
                Some(Error::StepUnderflow {
                    beta: state.beta,
                    step: dt,
                }),
            );
        }
        let beta_next = state.beta + dt;
        let (next, next_geo) = match rk4(&state, &geo, dt) {
            Ok(v) => v,
            Err(StepFailure::Singular) => {
                return finish(
                    traj,
                    Some(Error::BlowUp {
                        beta: beta_next,
                        sup_rm: f64::INFINITY,
                    }),
                )
            }
            Err(StepFailure::Other(e)) => return finish(traj, Some(e)),
        };
        for (ok, field) in [
            (finite(next.metric.field()), "metric"),
            (finite(&next.extrinsic), "extrinsic curvature"),
            (finite(&next.density), "density"),
        ] {
            if !ok {
                return finish(traj, Some(Error::NonFinite { beta: beta_next, field }));
            }
        }
        let d = diagnostics(&next, &next_geo, dt, controls)?;
        if d.sup_rm > ceiling || d.min_det < controls.det_floor {
            return finish(
                traj,
                Some(Error::BlowUp {
                    beta: beta_next,
                    sup_rm: d.sup_rm,
                }),
            );
        }
        if controls.strict_positivity && d.min_density < 0.0 {
            return finish(
                traj,
                Some(Error::PositivityLoss {
                    beta: beta_next,
                    detail: format!("min rho = {:e}", d.min_density),
                }),
            );
        }
        count += 1;
        traj.diagnostics.push(d);
        state = next;
        geo = next_geo;
        let last = state.beta >= target - end_tol;
        if count % controls.store_every == 0 || last {
            traj.states.push(state.clone());
        }
    }
    finish(traj, None)
}

/// Four-point Lagrange weights at `x` for nodes `xs`.
fn lagrange_weights(xs: &[f64], x: f64) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let mut w = 1.0;
            for j in 0..xs.len() {
                if j != i {
                    w *= (x - xs[j]) / (xs[i] - xs[j]);
                }
            }
            w
        })
        .collect()
}

impl FlowTrajectory {
    pub fn first_beta(&self) -> f64 {
        self.states.first().map(|s| s.beta).unwrap_or(0.0)
    }

    pub fn last_beta(&self) -> f64 {
        self.states.last().map(|s| s.beta).unwrap_or(0.0)
    }

    pub fn final_state(&self) -> &FlowState {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// Cubic Lagrange stencil (fewer points on short trajectories) around `beta`.
    fn stencil(&self, beta: f64) -> Result<Vec<(usize, f64)>> {
        let (lo, hi) = (self.first_beta(), self.last_beta());
        let tol = 1e-12 * (hi - lo).abs().max(1.0);
        if beta < lo - tol || beta > hi + tol {
            return Err(Error::MissingCoverage { beta, lo, hi });
        }
        let n = self.states.len();
        if let Some(i) = self.states.iter().position(|s| s.beta == beta) {
            return Ok(vec![(i, 1.0)]);
        }
        let idx = self.states.partition_point(|s| s.beta <= beta).clamp(1, n.max(2) - 1);
        let width = n.min(4);
        let start = (idx as isize - 2).clamp(0, (n - width) as isize) as usize;
        let xs: Vec<f64> = (start..start + width).map(|i| self.states[i].beta).collect();
        Ok(lagrange_weights(&xs, beta)
            .into_iter()
            .enumerate()
            .map(|(k, w)| (start + k, w))
            .collect())
    }

    fn blend<T: Linear>(&self, beta: f64, pick: impl Fn(&FlowState) -> &Field<T>) -> Result<Field<T>> {
        let st = self.stencil(beta)?;
        if st.len() == 1 {
            return Ok(pick(&self.states[st[0].0]).clone());
        }
        let terms: Vec<(f64, &Field<T>)> = st.iter().map(|&(i, w)| (w, pick(&self.states[i]))).collect();
        Ok(Field::combine(&terms))
    }

    pub fn metric_at(&self, beta: f64) -> Result<MetricField> {
        MetricField::new(self.blend(beta, |s| s.metric.field())?)
    }

    pub fn extrinsic_at(&self, beta: f64) -> Result<SymTensorField> {
        self.blend(beta, |s| &s.extrinsic)
    }

    pub fn density_at(&self, beta: f64) -> Result<ScalarField> {
        self.blend(beta, |s| &s.density)
    }

    /// Diagnostics CSV, one row per step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "beta",
            "step",
            "volume",
            "sup_rm",
            "min_det",
            "min_density",
            "max_density",
            "mass",
            "mean_scalar",
            "hamiltonian_residual",
            "momentum_residual",
            "weak_energy",
            "r_positive",
            "alpha1",
            "alpha2",
            "alpha3",
            "alpha1_margin",
        ])?;
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        for d in &self.diagnostics {
            let p = &d.pinching.report;
            w.write_record([
                fmt(d.beta),
                fmt(d.step),
                fmt(d.volume),
                fmt(d.sup_rm),
                fmt(d.min_det),
                fmt(d.min_density),
                fmt(d.max_density),
                fmt(d.mass),
                fmt(d.mean_scalar),
                fmt(d.hamiltonian_residual),
                fmt(d.momentum_residual),
                d.weak_energy.to_string(),
                p.positive_scalar.to_string(),
                opt(p.alpha1),
                opt(p.alpha2),
                opt(p.alpha3),
                fmt(d.pinching.alpha1_margin),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

//! Locally homogeneous model geometries and the exact ODE reductions of the
//! coupled flows on them.
//!
//! Metrics are diagonal on a left-invariant coframe, `g = sum_i A_i sigma_i^2`.
//! On `SU(2)` the dual frame obeys `[X_i, X_j] = 2 eps_ijk X_k`, so `A = (1,1,1)`
//! is the unit round sphere with `Ric = 2 g`. The flat torus uses an abelian
//! frame. Extrinsic curvature is kept diagonal on the same coframe,
//! `K = sum_i k_i sigma_i^2`, and the matter density is a constant.
//!
//! For diagonal metrics the DeTurck field against any other diagonal metric
//! vanishes, so the DeTurck gauge reduces to the plain one here.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ode::rk4_step;
use crate::pinching::{self, PinchingReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    FlatTorus,
    RoundSphere,
    BergerSphere,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    Plain,
    /// Adds `(2/3) R g` (and `(2/3) R K`), which fixes the volume.
    Volume,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomogeneousState {
    model: Model,
    metric: [f64; 3],
    extrinsic: Option<[f64; 3]>,
    density: Option<f64>,
}

fn check_positive(c: f64) -> Result<f64> {
    if c > 0.0 && c.is_finite() {
        Ok(c)
    } else {
        Err(Error::NonPositiveCoefficient(c))
    }
}

impl HomogeneousState {
    pub fn flat(c: f64) -> Result<Self> {
        Self::with_frame(Model::FlatTorus, [c; 3])
    }

    /// `c` times the unit round metric.
    pub fn round(c: f64) -> Result<Self> {
        Self::with_frame(Model::RoundSphere, [c; 3])
    }

    /// `a (sigma_1^2 + sigma_2^2) + c sigma_3^2`.
    pub fn berger(a: f64, c: f64) -> Result<Self> {
        Self::with_frame(Model::BergerSphere, [a, a, c])
    }

    fn with_frame(model: Model, metric: [f64; 3]) -> Result<Self> {
        for c in metric {
            check_positive(c)?;
        }
        Ok(HomogeneousState {
            model,
            metric,
            extrinsic: None,
            density: None,
        })
    }

    /// Builds a state from the reduced coefficients of [`Self::coefficients`].
    pub fn from_coefficients(model: Model, coefficients: &[f64]) -> Result<Self> {
        match (model, coefficients) {
            (Model::FlatTorus, [c]) => Self::flat(*c),
            (Model::RoundSphere, [c]) => Self::round(*c),
            (Model::BergerSphere, [a, c]) => Self::berger(*a, *c),
            _ => Err(Error::Config(format!(
                "{model:?} takes {} coefficient(s), got {}",
                if model == Model::BergerSphere { 2 } else { 1 },
                coefficients.len()
            ))),
        }
    }

    /// Sets `K = kappa g`.
    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.extrinsic = Some(self.metric.map(|a| kappa * a));
        self
    }

    pub fn with_density(mut self, rho: f64) -> Self {
        self.density = Some(rho);
        self
    }

    pub fn model(&self) -> Model {
        self.model
    }

    /// Metric coefficients on the coframe, `(A_1, A_2, A_3)`.
    pub fn frame_metric(&self) -> [f64; 3] {
        self.metric
    }

    /// `[c]` for flat and round models, `[a, c]` for Berger.
    pub fn coefficients(&self) -> Vec<f64> {
        match self.model {
            Model::BergerSphere => vec![self.metric[0], self.metric[2]],
            _ => vec![self.metric[0]],
        }
    }

    pub fn extrinsic(&self) -> Option<[f64; 3]> {
        self.extrinsic
    }

    /// `kappa` when `K = kappa g` holds to roundoff.
    pub fn kappa(&self) -> Option<f64> {
        let k = self.extrinsic?;
        let ratios = [0, 1, 2].map(|i| k[i] / self.metric[i]);
        let spread = ratios.iter().fold(0.0f64, |m, r| m.max((r - ratios[0]).abs()));
        (spread <= 1e-12 * (1.0 + ratios[0].abs())).then_some(ratios[0])
    }

    pub fn density(&self) -> Option<f64> {
        self.density
    }

    /// Eigenvalues of `g^-1 Ric`, one per frame direction.
    pub fn ricci_eigenvalues(&self) -> [f64; 3] {
        if self.model == Model::FlatTorus {
            return [0.0; 3];
        }
        let [a1, a2, a3] = self.metric;
        let root = (a1 * a2 * a3).sqrt();
        let lam = [2.0 * a1 / root, 2.0 * a2 / root, 2.0 * a3 / root];
        let half = 0.5 * (lam[0] + lam[1] + lam[2]);
        let mu = lam.map(|l| half - l);
        [2.0 * mu[1] * mu[2], 2.0 * mu[0] * mu[2], 2.0 * mu[0] * mu[1]]
    }

    pub fn scalar_curvature(&self) -> f64 {
        self.ricci_eigenvalues().iter().sum()
    }

    /// `|Rm|`, using `|Rm|^2 = 4 |Ric|^2 - R^2` in three dimensions.
    pub fn riemann_norm(&self) -> f64 {
        let e = self.ricci_eigenvalues();
        let ric2 = e.iter().map(|x| x * x).sum::<f64>();
        let r = e.iter().sum::<f64>();
        (4.0 * ric2 - r * r).max(0.0).sqrt()
    }

    fn pack(&self) -> [f64; 7] {
        let k = self.extrinsic.unwrap_or([0.0; 3]);
        [
            self.metric[0],
            self.metric[1],
            self.metric[2],
            k[0],
            k[1],
            k[2],
            self.density.unwrap_or(0.0),
        ]
    }

    fn unpack(&self, p: &[f64; 7]) -> Result<Self> {
        let metric = [p[0], p[1], p[2]];
        for c in metric {
            check_positive(c)?;
        }
        Ok(HomogeneousState {
            model: self.model,
            metric,
            extrinsic: self.extrinsic.map(|_| [p[3], p[4], p[5]]),
            density: self.density.map(|_| p[6]),
        })
    }
}

/// Orthonormal-frame structure constants `C[i][j][k]`, `[e_i, e_j] = C_ij^k e_k`.
fn structure_constants(model: Model, a: &[f64; 3]) -> [[[f64; 3]; 3]; 3] {
    let mut c = [[[0.0; 3]; 3]; 3];
    if model == Model::FlatTorus {
        return c;
    }
    for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        let v = 2.0 * (a[k] / (a[i] * a[j])).sqrt();
        c[i][j][k] = v;
        c[j][i][k] = -v;
    }
    c
}

/// Left-invariant Levi-Civita calculus in the orthonormal frame.
struct FrameCalculus {
    c: [[[f64; 3]; 3]; 3],
    /// `G[i][j][k] = <nabla_{e_i} e_j, e_k>`.
    g: [[[f64; 3]; 3]; 3],
}

type Frame4 = [[[[f64; 3]; 3]; 3]; 3];

impl FrameCalculus {
    fn new(model: Model, a: &[f64; 3]) -> Self {
        let c = structure_constants(model, a);
        let mut g = [[[0.0; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    g[i][j][k] = 0.5 * (c[i][j][k] - c[j][k][i] + c[k][i][j]);
                }
            }
        }
        FrameCalculus { c, g }
    }

    /// `rm[i][j][k][m] = <R(e_i, e_j) e_k, e_m>`.
    fn riemann(&self) -> Frame4 {
        let (c, g) = (&self.c, &self.g);
        let mut rm = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for m in 0..3 {
                        let mut s = 0.0;
                        for l in 0..3 {
                            s += g[j][k][l] * g[i][l][m] - g[i][k][l] * g[j][l][m] - c[i][j][l] * g[l][k][m];
                        }
                        rm[i][j][k][m] = s;
                    }
                }
            }
        }
        rm
    }

    fn ricci(rm: &Frame4) -> [[f64; 3]; 3] {
        let mut ric = [[0.0; 3]; 3];
        for j in 0..3 {
            for k in 0..3 {
                ric[j][k] = (0..3).map(|i| rm[i][j][k][i]).sum();
            }
        }
        ric
    }

    /// Lichnerowicz Laplacian of a left-invariant symmetric tensor with
    /// orthonormal-frame components `t`.
    fn lichnerowicz(&self, t: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let g = &self.g;
        let mut nt = [[[0.0; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    nt[i][j][k] = -(0..3).map(|l| g[i][j][l] * t[l][k] + g[i][k][l] * t[j][l]).sum::<f64>();
                }
            }
        }
        let rm = self.riemann();
        let ric = Self::ricci(&rm);
        let mut out = [[0.0; 3]; 3];
        for j in 0..3 {
            for k in 0..3 {
                let mut rough = 0.0;
                for i in 0..3 {
                    for l in 0..3 {
                        rough -= g[i][i][l] * nt[l][j][k] + g[i][j][l] * nt[i][l][k] + g[i][k][l] * nt[i][j][l];
                    }
                }
                let mut curv = 0.0;
                for l in 0..3 {
                    curv -= ric[j][l] * t[l][k] + ric[k][l] * t[j][l];
                }
                for s in 0..3 {
                    for u in 0..3 {
                        // R_{j s k u} with g^{su} R_{jsku} = Ric_jk
                        curv += 2.0 * rm[u][j][k][s] * t[s][u];
                    }
                }
                out[j][k] = rough + curv;
            }
        }
        out
    }
}

fn rates(model: Model, p: &[f64; 7], norm: Normalization) -> Result<[f64; 7]> {
    let a = [p[0], p[1], p[2]];
    for c in a {
        check_positive(c)?;
    }
    let probe = HomogeneousState {
        model,
        metric: a,
        extrinsic: None,
        density: None,
    };
    let eig = probe.ricci_eigenvalues();
    let r: f64 = eig.iter().sum();
    let shift = match norm {
        Normalization::Plain => 0.0,
        Normalization::Volume => 2.0 * r / 3.0,
    };
    let mut out = [0.0; 7];
    for i in 0..3 {
        out[i] = -2.0 * eig[i] * a[i] + shift * a[i];
    }
    let k = [p[3], p[4], p[5]];
    if k.iter().any(|&x| x != 0.0) && model != Model::FlatTorus {
        let calc = FrameCalculus::new(model, &a);
        let mut t = [[0.0; 3]; 3];
        for i in 0..3 {
            t[i][i] = k[i] / a[i];
        }
        let lk = calc.lichnerowicz(&t);
        for i in 0..3 {
            out[3 + i] = lk[i][i] * a[i];
        }
    }
    for i in 0..3 {
        out[3 + i] += shift * k[i];
    }
    Ok(out)
}

/// Reduced metric-coefficient rates `d/dbeta` of [`HomogeneousState::coefficients`].
pub fn ode_rhs(state: &HomogeneousState) -> Result<Vec<f64>> {
    ode_rhs_with(state, Normalization::Plain)
}

pub fn ode_rhs_with(state: &HomogeneousState, norm: Normalization) -> Result<Vec<f64>> {
    let r = rates(state.model, &state.pack(), norm)?;
    Ok(match state.model {
        Model::BergerSphere => vec![r[0], r[2]],
        _ => vec![r[0]],
    })
}

/// Rates of every channel, as a state-shaped value
/// (`metric`, `extrinsic`, `density` hold derivatives).
pub fn full_rhs(state: &HomogeneousState, norm: Normalization) -> Result<[f64; 7]> {
    rates(state.model, &state.pack(), norm)
}

/// Lichnerowicz Laplacian of a diagonal left-invariant `K`, as coframe coefficients.
pub fn lichnerowicz_diagonal(state: &HomogeneousState, k: [f64; 3]) -> [f64; 3] {
    let a = state.metric;
    let calc = FrameCalculus::new(state.model, &a);
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        t[i][i] = k[i] / a[i];
    }
    let lk = calc.lichnerowicz(&t);
    [0, 1, 2].map(|i| lk[i][i] * a[i])
}

/// Plain-flow extinction time, or `None` for the flat model.
pub fn extinction_time(state: &HomogeneousState) -> Option<f64> {
    match state.model {
        Model::FlatTorus => None,
        Model::RoundSphere => Some(state.metric[0] / 4.0),
        Model::BergerSphere => berger_extinction(state),
    }
}

fn berger_extinction(state: &HomogeneousState) -> Option<f64> {
    let mut p = [state.metric[0], state.metric[1], state.metric[2], 0.0, 0.0, 0.0, 0.0];
    let scale = p[0].max(p[2]);
    let mut beta = 0.0;
    let remaining = |p: &[f64; 7]| -> Option<f64> {
        let r = rates(Model::BergerSphere, p, Normalization::Plain).ok()?;
        (0..3)
            .filter(|&i| r[i] < 0.0)
            .map(|i| p[i] / -r[i])
            .min_by(f64::total_cmp)
    };
    for _ in 0..200_000 {
        let tau = match remaining(&p) {
            Some(t) => t,
            None => {
                // Not yet shrinking in every direction; take a bounded step.
                let step = 0.01 * scale;
                p = rk4_step(&p, beta, step, |_, s| {
                    rates(Model::BergerSphere, s, Normalization::Plain)
                })
                .ok()?;
                beta += step;
                continue;
            }
        };
        if tau < 1e-13 * scale {
            return Some(beta + tau);
        }
        let step = 0.05 * tau;
        p = rk4_step(&p, beta, step, |_, s| {
            rates(Model::BergerSphere, s, Normalization::Plain)
        })
        .ok()?;
        beta += step;
    }
    None
}

/// Richardson tolerance of the Berger reference integration.
pub const REFERENCE_TOLERANCE: f64 = 1e-12;

/// Exact (flat, round) or reference (Berger) plain-flow state at `beta`.
pub fn analytic_solution(state: &HomogeneousState, beta: f64) -> Result<HomogeneousState> {
    if let Some(beta_star) = extinction_time(state) {
        if beta >= beta_star {
            return Err(Error::Extinction { beta, beta_star });
        }
    }
    let p0 = state.pack();
    let has_k = state.extrinsic.is_some_and(|k| k.iter().any(|&x| x != 0.0));
    match state.model {
        Model::FlatTorus => Ok(*state),
        Model::RoundSphere if !has_k => {
            let c = state.metric[0] - 4.0 * beta;
            let mut out = *state;
            out.metric = [c; 3];
            Ok(out)
        }
        _ => {
            let run = |n: usize| {
                crate::flow::ode::integrate_fixed(&p0, 0.0, beta, n, |_, s| rates(state.model, s, Normalization::Plain))
            };
            let mut n = 64;
            let mut coarse = run(n)?;
            loop {
                let fine = run(2 * n)?;
                let scale = fine.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                let err = coarse.iter().zip(&fine).fold(0.0f64, |m, (c, f)| m.max((f - c).abs())) / 15.0;
                if err <= REFERENCE_TOLERANCE * scale {
                    let mut best = fine;
                    for (b, c) in best.iter_mut().zip(&coarse) {
                        *b += (*b - c) / 15.0;
                    }
                    return state.unpack(&best);
                }
                n *= 2;
                if n > 1 << 24 {
                    return Err(Error::StepUnderflow {
                        beta,
                        step: beta / n as f64,
                    });
                }
                coarse = fine;
            }
        }
    }
}

/// Pinching diagnostics from the exact curvature. A single homogeneous state
/// cannot determine `alpha3`, so it is supplied.
pub fn pinching_report(state: &HomogeneousState, alpha3: f64) -> PinchingReport {
    pinching::aggregate(&[pinching::pointwise(state.ricci_eigenvalues())], alpha3)
}

/// Fixed-step RK4 run of a model with blow-up monitoring.
#[derive(Debug)]
pub struct HomogeneousRun {
    pub samples: Vec<(f64, HomogeneousState)>,
    /// Why the run stopped early, if it did.
    pub stop: Option<Error>,
}

#[derive(Clone, Copy, Debug)]
pub struct RunControls {
    pub step: f64,
    pub target: f64,
    pub normalization: Normalization,
    /// `None` selects `1e6 (|Rm|_0 + 1)`.
    pub rm_ceiling: Option<f64>,
}

pub fn evolve(state: &HomogeneousState, controls: &RunControls) -> Result<HomogeneousRun> {
    if !(controls.step > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {}", controls.step)));
    }
    let ceiling = controls.rm_ceiling.unwrap_or(1e6 * (state.riemann_norm() + 1.0));
    let mut samples = vec![(0.0, *state)];
    let mut p = state.pack();
    let mut beta = 0.0;
    let n = (controls.target / controls.step).round().max(0.0) as usize;
    for i in 1..=n {
        let next_beta = if i == n {
            controls.target
        } else {
            i as f64 * controls.step
        };
        let dt = next_beta - beta;
        let stepped = rk4_step(&p, beta, dt, |_, s| rates(state.model, s, controls.normalization));
        let next = stepped.and_then(|q| state.unpack(&q).map(|s| (q, s)));
        match next {
            Ok((q, s)) if s.riemann_norm() <= ceiling => {
                p = q;
                beta = next_beta;
                samples.push((beta, s));
            }
            Ok((_, s)) => {
                return Ok(HomogeneousRun {
                    samples,
                    stop: Some(Error::BlowUp {
                        beta: next_beta,
                        sup_rm: s.riemann_norm(),
                    }),
                })
            }
            Err(_) => {
                return Ok(HomogeneousRun {
                    samples,
                    stop: Some(Error::BlowUp {
                        beta: next_beta,
                        sup_rm: f64::INFINITY,
                    }),
                })
            }
        }
    }
    Ok(HomogeneousRun { samples, stop: None })
}

/// CSV with one row per sample: beta, coefficients, R, |Rm|, pinching.
pub fn write_csv<W: Write>(run: &HomogeneousRun, alpha3: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let model = run.samples.first().map(|s| s.1.model).unwrap_or(Model::FlatTorus);
    let mut header = vec!["beta".to_string()];
    match model {
        Model::BergerSphere => header.extend(["a".to_string(), "c".to_string()]),
        _ => header.push("c".to_string()),
    }
    header.extend(
        [
            "scalar_curvature",
            "rm_norm",
            "r_positive",
            "alpha1",
            "alpha2",
            "alpha3",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for (beta, s) in &run.samples {
        let rep = pinching_report(s, alpha3);
        let mut row = vec![fmt(*beta)];
        row.extend(s.coefficients().into_iter().map(fmt));
        row.push(fmt(s.scalar_curvature()));
        row.push(fmt(s.riemann_norm()));
        row.push(rep.positive_scalar.to_string());
        for v in [rep.alpha1, rep.alpha2, rep.alpha3] {
            row.push(v.map(fmt).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Round-trip float formatting for CSV output.
pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests;

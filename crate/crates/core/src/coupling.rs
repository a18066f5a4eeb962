//! Backward localization `(f, tau)` along a stored forward trajectory.
//!
//! The measure is `dw = (4 pi tau)^{-3/2} e^{-f} dmu`, with `dtau/dbeta = -1`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::flow::ode::{rk4_field_step, Memo};
use crate::flow::{parabolic_bound, FlowTrajectory};
use crate::geometry::Geometry;
use crate::homogeneous::fmt;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `df/dbeta = -Delta f - R + 3/(2 tau)`.
    AsWritten,
    /// `df/dbeta = -Delta f + |grad f|^2 - R + 3/(2 tau)`.
    #[default]
    GradientSquared,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::AsWritten => "as-written",
            Variant::GradientSquared => "gradient-squared",
        }
    }
}

/// `tau(beta) = tau* + beta* - beta`.
pub fn tau_schedule(tau_star: f64, beta_star: f64, beta: f64) -> Result<f64> {
    let tau = tau_star + (beta_star - beta);
    if tau > 0.0 {
        Ok(tau)
    } else {
        Err(Error::NonPositiveTau { beta, tau })
    }
}

/// `df/dbeta` on the slice described by `geo`.
pub fn f_backward_rhs(geo: &Geometry, f: &ScalarField, tau: f64, variant: Variant) -> Result<ScalarField> {
    let lap = geo.laplace_beltrami(f)?;
    let grad = match variant {
        Variant::AsWritten => None,
        Variant::GradientSquared => Some(geo.gradient_norm_sq(f)?),
    };
    let c = 1.5 / tau;
    Ok(ScalarField::from_nodes(*geo.chart(), |n| {
        let g2 = grad.as_ref().map_or(0.0, |g| g.at(n));
        -lap.at(n) + g2 - geo.scalar_at(n) + c
    }))
}

/// Density of the measure against `dmu`.
pub fn perelman_measure(f: &ScalarField, tau: f64) -> ScalarField {
    let pre = (4.0 * PI * tau).powf(-1.5);
    f.map(|v| pre * (-v).exp())
}

/// `int dw`.
pub fn normalization_check(geo: &Geometry, f: &ScalarField, tau: f64) -> Result<f64> {
    geo.integrate(&perelman_measure(f, tau))
}

/// `f + ln(check)`, which has unit total measure.
pub fn renormalize(geo: &Geometry, f: &ScalarField, tau: f64) -> Result<ScalarField> {
    let shift = normalization_check(geo, f, tau)?.ln();
    Ok(f.map(|v| v + shift))
}

/// `int rho dw`.
pub fn localized_mass(geo: &Geometry, rho: &ScalarField, f: &ScalarField, tau: f64) -> Result<f64> {
    rho.same_chart(f)?;
    let w = perelman_measure(f, tau);
    geo.integrate(&ScalarField::from_nodes(*rho.chart(), |n| rho.at(n) * w.at(n)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FinalData {
    /// Constant `f` with unit measure.
    Normalizing,
    /// `f = |x - x_node|^2 / (4 width)` (coordinate distance, minimal image), then normalized.
    Bump { node: usize, width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CouplingControls {
    pub variant: Variant,
    pub tau_star: f64,
    /// Defaults to the end of the trajectory.
    pub beta_star: Option<f64>,
    pub final_data: FinalData,
    /// Lower bound on the number of backward steps.
    pub steps: Option<usize>,
    pub safety: f64,
    pub store_every: usize,
}

impl Default for CouplingControls {
    fn default() -> Self {
        CouplingControls {
            variant: Variant::GradientSquared,
            tau_star: 1.0,
            beta_star: None,
            final_data: FinalData::Normalizing,
            steps: None,
            safety: 0.5,
            store_every: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CouplingState {
    pub beta: f64,
    pub tau: f64,
    pub f: ScalarField,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CouplingSample {
    pub beta: f64,
    pub tau: f64,
    pub check: f64,
    pub mass: f64,
    pub min_f: f64,
    pub max_f: f64,
}

#[derive(Clone, Debug)]
pub struct CouplingRun {
    pub variant: Variant,
    /// One sample per backward step, starting at `beta*`.
    pub samples: Vec<CouplingSample>,
    pub states: Vec<CouplingState>,
}

impl CouplingRun {
    /// Largest `|check - check(beta*)|` over the run.
    pub fn normalization_drift(&self) -> f64 {
        let c0 = self.samples[0].check;
        self.samples.iter().map(|s| (s.check - c0).abs()).fold(0.0, f64::max)
    }

    pub fn mass_drift(&self) -> f64 {
        let m0 = self.samples[0].mass;
        self.samples.iter().map(|s| (s.mass - m0).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "beta",
            "tau",
            "normalization_check",
            "localized_mass",
            "min_f",
            "max_f",
            "variant",
        ])?;
        for s in &self.samples {
            w.write_record([
                fmt(s.beta),
                fmt(s.tau),
                fmt(s.check),
                fmt(s.mass),
                fmt(s.min_f),
                fmt(s.max_f),
                self.variant.name().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn final_f(geo: &Geometry, data: FinalData, tau: f64) -> Result<ScalarField> {
    let chart = *geo.chart();
    let raw = match data {
        FinalData::Normalizing => ScalarField::zeros(chart),
        FinalData::Bump { node, width } => {
            if node >= chart.node_count() || !(width > 0.0) {
                return Err(Error::Config(format!("bad bump: node {node}, width {width}")));
            }
            let y = chart.position(node);
            ScalarField::from_fn(chart, |x| {
                let d = chart.displacement(y, x);
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / (4.0 * width)
            })
        }
    };
    renormalize(geo, &raw, tau)
}

fn sample(geo: &Geometry, traj: &FlowTrajectory, beta: f64, tau: f64, f: &ScalarField) -> Result<CouplingSample> {
    let rho = traj.density_at(beta)?;
    Ok(CouplingSample {
        beta,
        tau,
        check: normalization_check(geo, f, tau)?,
        mass: localized_mass(geo, &rho, f, tau)?,
        min_f: f.min(),
        max_f: f.max(),
    })
}

fn f_from_density(w: &ScalarField, tau: f64, beta: f64) -> Result<ScalarField> {
    if let Some(n) = (0..w.chart().node_count()).find(|&n| !(w.at(n) > 0.0)) {
        return Err(Error::PositivityLoss {
            beta,
            detail: format!("measure density {:e} at node {n}", w.at(n)),
        });
    }
    let c = 1.5 * (4.0 * PI * tau).ln();
    Ok(w.map(|v| -v.ln() - c))
}

/// Marches `(f, tau)` from `beta*` down to the start of `traj`.
///
/// The gradient-squared system is advanced through its density
/// `(4 pi tau)^{-3/2} e^{-f}`, which obeys `d/ds = Delta - R` with `s = beta* - beta`.
pub fn backward_march(traj: &FlowTrajectory, controls: &CouplingControls) -> Result<CouplingRun> {
    if !(controls.safety > 0.0) || controls.store_every == 0 {
        return Err(Error::Config("safety and store_every must be positive".into()));
    }
    if !(controls.tau_star > 0.0) {
        return Err(Error::NonPositiveTau {
            beta: controls.beta_star.unwrap_or(traj.last_beta()),
            tau: controls.tau_star,
        });
    }
    let beta_star = controls.beta_star.unwrap_or(traj.last_beta());
    let geo_star = Geometry::new(&traj.metric_at(beta_star)?)?;
    let f = final_f(&geo_star, controls.final_data, controls.tau_star)?;
    backward_march_from(traj, controls, f)
}

/// As [`backward_march`] with explicit final data `f(beta*)`.
pub fn backward_march_from(
    traj: &FlowTrajectory,
    controls: &CouplingControls,
    f_star: ScalarField,
) -> Result<CouplingRun> {
    if !(controls.safety > 0.0) || controls.store_every == 0 {
        return Err(Error::Config("safety and store_every must be positive".into()));
    }
    let beta0 = traj.first_beta();
    let beta_star = controls.beta_star.unwrap_or(traj.last_beta());
    let geo_star = Geometry::new(&traj.metric_at(beta_star)?)?;
    geo_star.metric().field().same_chart(&f_star)?;
    if !(controls.tau_star > 0.0) {
        return Err(Error::NonPositiveTau {
            beta: beta_star,
            tau: controls.tau_star,
        });
    }
    let span = beta_star - beta0;
    let bound = parabolic_bound(&geo_star, controls.safety).min(parabolic_bound(
        &Geometry::new(&traj.metric_at(beta0)?)?,
        controls.safety,
    ));
    let mut steps = (span / bound).ceil() as usize;
    steps = steps.max(controls.steps.unwrap_or(0)).max(usize::from(span > 0.0));
    let ds = if steps == 0 { 0.0 } else { span / steps as f64 };

    let tau_of = |s: f64| tau_schedule(controls.tau_star, beta_star, beta_star - s);
    let mut f = f_star;
    let mut memo: Memo<Geometry> = Memo::default();
    let geo_at = |s: f64| -> Result<Geometry> { Geometry::new(&traj.metric_at(beta_star - s)?) };
    let mut run = CouplingRun {
        variant: controls.variant,
        samples: vec![sample(&geo_star, traj, beta_star, controls.tau_star, &f)?],
        states: vec![CouplingState {
            beta: beta_star,
            tau: controls.tau_star,
            f: f.clone(),
        }],
    };
    let mut w = perelman_measure(&f, controls.tau_star);
    for i in 0..steps {
        let s0 = i as f64 * ds;
        let s1 = if i + 1 == steps { span } else { (i + 1) as f64 * ds };
        let h = s1 - s0;
        let beta1 = beta_star - s1;
        let tau1 = tau_of(s1)?;
        match controls.variant {
            Variant::GradientSquared => {
                w = rk4_field_step(&w, s0, h, |s, u| {
                    let geo = memo.get(s, &geo_at)?;
                    let lap = geo.laplace_beltrami(u)?;
                    Ok(ScalarField::from_nodes(*u.chart(), |n| {
                        lap.at(n) - geo.scalar_at(n) * u.at(n)
                    }))
                })?;
                f = f_from_density(&w, tau1, beta1)?;
            }
            Variant::AsWritten => {
                f = rk4_field_step(&f, s0, h, |s, u| {
                    let tau = tau_of(s)?;
                    let geo = memo.get(s, &geo_at)?;
                    Ok(f_backward_rhs(geo, u, tau, Variant::AsWritten)?.scaled(-1.0))
                })?;
            }
        }
        if f.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                beta: beta1,
                field: "f",
            });
        }
        let geo = memo.get(s1, &geo_at)?;
        run.samples.push(sample(geo, traj, beta1, tau1, &f)?);
        if (i + 1) % controls.store_every == 0 || i + 1 == steps {
            run.states.push(CouplingState {
                beta: beta1,
                tau: tau1,
                f: f.clone(),
            });
        }
    }
    Ok(run)
}

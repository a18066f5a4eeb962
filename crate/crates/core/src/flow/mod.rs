//! Coupled deformation of `(g, K, rho)` along the Ricci flow.
//!
//! `dg = -2 Ric`, `dK = Delta_L K`, `drho = Delta rho`, with optional DeTurck or
//! volume-normalizing terms applied consistently to all three fields.

mod evolve;
pub mod ode;

use std::sync::Arc;

use crate::chart::pair;
use crate::constraints::Constants;
use crate::error::Result;
use crate::field::{ConnectionField, CovectorField, MetricField, ScalarField, SymTensorField};
use crate::geometry::{christoffel, Geometry};
use crate::tensor::{self, Mat3};

pub use evolve::{
    evolve, grid_pinching_report, grid_pinching_report_from, parabolic_bound, Evolution, FlowControls, FlowTrajectory,
    GridPinching, StepDiagnostics,
};

#[derive(Clone, Debug)]
pub enum Gauge {
    Plain,
    /// Adds `L_W g` with `W^k = g^ij (Gamma^k_ij - Gamma~^k_ij)` against a fixed background.
    DeTurck {
        background: ConnectionField,
    },
    /// Adds `(2/3) <R> g`, with `<R>` the volume-averaged scalar curvature.
    VolumeNormalized,
}

impl Gauge {
    pub fn deturck(background: &MetricField) -> Result<Gauge> {
        Ok(Gauge::DeTurck {
            background: christoffel(background)?,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Gauge::Plain => "plain",
            Gauge::DeTurck { .. } => "deturck",
            Gauge::VolumeNormalized => "volume-normalized",
        }
    }
}

/// One slice `(g, K, rho)` of the deformation at flow parameter `beta`.
///
/// `momentum` is carried along unchanged; it only enters constraint diagnostics.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub beta: f64,
    pub metric: MetricField,
    pub extrinsic: SymTensorField,
    pub density: ScalarField,
    pub momentum: CovectorField,
    pub constants: Constants,
    pub gauge: Arc<Gauge>,
}

impl FlowState {
    pub fn new(metric: MetricField, extrinsic: SymTensorField, density: ScalarField, gauge: Gauge) -> Result<Self> {
        metric.field().same_chart(&extrinsic)?;
        metric.field().same_chart(&density)?;
        let momentum = CovectorField::zeros(*metric.chart());
        Ok(FlowState {
            beta: 0.0,
            metric,
            extrinsic,
            density,
            momentum,
            constants: Constants::default(),
            gauge: Arc::new(gauge),
        })
    }

    /// Flat metric with vanishing `K` and `rho`.
    pub fn flat(chart: crate::GridChart, gauge: Gauge) -> Self {
        FlowState::new(
            MetricField::flat(chart),
            SymTensorField::zeros(chart),
            ScalarField::zeros(chart),
            gauge,
        )
        .expect("fields share the chart")
    }

    pub fn with_momentum(mut self, j: CovectorField) -> Result<Self> {
        self.metric.field().same_chart(&j)?;
        self.momentum = j;
        Ok(self)
    }

    pub fn with_constants(mut self, c: Constants) -> Self {
        self.constants = c;
        self
    }

    pub fn chart(&self) -> &crate::GridChart {
        self.metric.chart()
    }
}

/// Time derivatives of the evolved fields.
#[derive(Clone, Debug)]
pub struct Rates {
    pub metric: SymTensorField,
    pub extrinsic: SymTensorField,
    pub density: ScalarField,
}

/// DeTurck vector field, upper and lowered.
fn deturck_field(geo: &Geometry, background: &ConnectionField) -> (CovectorField, CovectorField) {
    let chart = *geo.chart();
    let upper = CovectorField::from_nodes(chart, |n| {
        let loc = geo.local(n);
        let bg = background.at(n);
        let mut w = [0.0; 3];
        for (k, wk) in w.iter_mut().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    *wk += loc.ginv[i][j] * (loc.gamma[k][i][j] - bg[k][pair(i, j)]);
                }
            }
        }
        w
    });
    let lower = CovectorField::from_nodes(chart, |n| {
        let g = &geo.local(n).g;
        let w = upper.at(n);
        [0, 1, 2].map(|a| g[a][0] * w[0] + g[a][1] * w[1] + g[a][2] * w[2])
    });
    (upper, lower)
}

fn all_zero<T: crate::chart::Linear + crate::field::Components>(f: &crate::field::Field<T>) -> bool {
    f.data().iter().all(|v| v.components().iter().all(|&x| x == 0.0))
}

/// All three rates from one geometry evaluation.
pub fn rates(state: &FlowState, geo: &Geometry) -> Result<Rates> {
    let chart = *state.chart();
    state.metric.field().same_chart(&state.extrinsic)?;
    let ric = geo.ricci();
    let mut metric = SymTensorField::combine(&[(-2.0, &ric)]);
    let k_zero = all_zero(&state.extrinsic);
    let rho_zero = all_zero(&state.density);
    let mut extrinsic = if k_zero {
        SymTensorField::zeros(chart)
    } else {
        geo.lichnerowicz_laplacian(&state.extrinsic)?
    };
    let mut density = if rho_zero {
        ScalarField::zeros(chart)
    } else {
        geo.laplace_beltrami(&state.density)?
    };
    match state.gauge.as_ref() {
        Gauge::Plain => {}
        Gauge::VolumeNormalized => {
            let s = 2.0 * geo.mean_scalar_curvature() / 3.0;
            metric = metric.axpy(s, state.metric.field());
            if !k_zero {
                extrinsic = extrinsic.axpy(s, &state.extrinsic);
            }
        }
        Gauge::DeTurck { background } => {
            background.same_chart(&state.density)?;
            let (wu, wl) = deturck_field(geo, background);
            let wl_data = wl.data();
            let wu_data = wu.data();
            let kd = state.extrinsic.data();
            let rd = state.density.data();
            let lie_g = SymTensorField::from_nodes(chart, |n| {
                let dw = chart.gradient(n, |m| wl_data[m]);
                let gm = &geo.local(n).gamma;
                let w = wl_data[n];
                let mut out = [[0.0; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        let mut v = dw[a][b] + dw[b][a];
                        for c in 0..3 {
                            v -= 2.0 * gm[c][a][b] * w[c];
                        }
                        out[a][b] = v;
                    }
                }
                tensor::pack(&out)
            });
            metric = metric.axpy(1.0, &lie_g);
            if !k_zero {
                let lie_k = SymTensorField::from_nodes(chart, |n| {
                    let dk = chart.gradient(n, |m| kd[m]);
                    let dw = chart.gradient(n, |m| wu_data[m]);
                    let w = wu_data[n];
                    let k: Mat3 = tensor::unpack(&kd[n]);
                    let mut out = [[0.0; 3]; 3];
                    for a in 0..3 {
                        for b in 0..3 {
                            let mut v = 0.0;
                            for c in 0..3 {
                                v += w[c] * dk[c][pair(a, b)] + k[c][b] * dw[a][c] + k[a][c] * dw[b][c];
                            }
                            out[a][b] = v;
                        }
                    }
                    tensor::pack(&out)
                });
                extrinsic = extrinsic.axpy(1.0, &lie_k);
            }
            if !rho_zero {
                let drift = ScalarField::from_nodes(chart, |n| {
                    let d = chart.gradient(n, |m| rd[m]);
                    let w = wu_data[n];
                    w[0] * d[0] + w[1] * d[1] + w[2] * d[2]
                });
                density = density.axpy(1.0, &drift);
            }
        }
    }
    Ok(Rates {
        metric,
        extrinsic,
        density,
    })
}

pub fn ricci_rhs(state: &FlowState) -> Result<SymTensorField> {
    Ok(rates(state, &Geometry::new(&state.metric)?)?.metric)
}

pub fn k_rhs(state: &FlowState) -> Result<SymTensorField> {
    Ok(rates(state, &Geometry::new(&state.metric)?)?.extrinsic)
}

pub fn matter_rhs(state: &FlowState) -> Result<ScalarField> {
    Ok(rates(state, &Geometry::new(&state.metric)?)?.density)
}

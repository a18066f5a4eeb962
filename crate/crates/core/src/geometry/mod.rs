//! Discrete Riemannian calculus on periodic grids.
//!
//! [`Geometry`] evaluates the metric jet once per node and keeps the connection,
//! its derivatives and the Ricci tensor, so that repeated operator applications
//! against the same metric are cheap.

pub mod distance;
pub mod local;
pub mod transport;

use crate::chart::GridChart;
use crate::error::{Error, Result};
use crate::field::{ConnectionField, CovectorField, MetricField, ScalarField, SymTensorField};
use crate::tensor::{self, Mat3};

pub use distance::geodesic_distance;
pub use local::Local;
pub use transport::parallel_transport;

#[derive(Clone, Debug)]
pub struct Geometry {
    metric: MetricField,
    local: Vec<Local>,
    ricci: Vec<Mat3>,
    scalar: Vec<f64>,
}

impl Geometry {
    pub fn new(metric: &MetricField) -> Result<Self> {
        let chart = *metric.chart();
        let data = metric.field().data();
        let mut local = Vec::with_capacity(chart.node_count());
        let mut ricci = Vec::with_capacity(chart.node_count());
        let mut scalar = Vec::with_capacity(chart.node_count());
        for node in 0..chart.node_count() {
            let jet = chart.jet(node, |m| data[m]);
            let loc = Local::new(&jet, true).ok_or(Error::SingularMetric {
                node,
                coords: chart.coords(node),
            })?;
            let r = loc.ricci();
            scalar.push(loc.scalar_from(&r));
            ricci.push(r);
            local.push(loc);
        }
        Ok(Geometry {
            metric: metric.clone(),
            local,
            ricci,
            scalar,
        })
    }

    pub fn chart(&self) -> &GridChart {
        self.metric.chart()
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn local(&self, node: usize) -> &Local {
        &self.local[node]
    }

    pub fn ricci_at(&self, node: usize) -> &Mat3 {
        &self.ricci[node]
    }

    pub fn scalar_at(&self, node: usize) -> f64 {
        self.scalar[node]
    }

    pub fn ricci(&self) -> SymTensorField {
        SymTensorField::from_nodes(*self.chart(), |n| tensor::pack(&self.ricci[n]))
    }

    pub fn scalar_curvature(&self) -> ScalarField {
        ScalarField::from_nodes(*self.chart(), |n| self.scalar[n])
    }

    pub fn connection(&self) -> ConnectionField {
        ConnectionField::from_nodes(*self.chart(), |n| {
            let gm = &self.local[n].gamma;
            [tensor::pack(&gm[0]), tensor::pack(&gm[1]), tensor::pack(&gm[2])]
        })
    }

    /// Pointwise Frobenius norm of the full Riemann tensor.
    pub fn riemann_norm(&self) -> ScalarField {
        ScalarField::from_nodes(*self.chart(), |n| {
            let loc = &self.local[n];
            loc.riemann_norm(&loc.riemann())
        })
    }

    pub fn riemann_norm_sup(&self) -> f64 {
        self.riemann_norm().max()
    }

    pub fn sqrt_det(&self, node: usize) -> f64 {
        self.local[node].sqrt_det
    }

    /// Volume-weighted mean of the scalar curvature.
    pub fn mean_scalar_curvature(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (loc, r) in self.local.iter().zip(&self.scalar) {
            num += r * loc.sqrt_det;
            den += loc.sqrt_det;
        }
        num / den
    }

    pub fn laplace_beltrami(&self, u: &ScalarField) -> Result<ScalarField> {
        self.metric.field().same_chart(u)?;
        let chart = *self.chart();
        let d = u.data();
        Ok(ScalarField::from_nodes(chart, |n| {
            self.local[n].laplace_beltrami(&chart.jet(n, |m| d[m]))
        }))
    }

    /// `|grad u|^2_g`.
    pub fn gradient_norm_sq(&self, u: &ScalarField) -> Result<ScalarField> {
        self.metric.field().same_chart(u)?;
        let chart = *self.chart();
        let d = u.data();
        Ok(ScalarField::from_nodes(chart, |n| {
            self.local[n].gradient_norm_sq(&chart.gradient(n, |m| d[m]))
        }))
    }

    pub fn lichnerowicz_laplacian(&self, k: &SymTensorField) -> Result<SymTensorField> {
        self.metric.field().same_chart(k)?;
        let chart = *self.chart();
        let d = k.data();
        Ok(SymTensorField::from_nodes(chart, |n| {
            let loc = &self.local[n];
            let jet = chart.jet(n, |m| d[m]);
            tensor::pack(&loc.lichnerowicz_lower(&jet, &self.ricci[n], &loc.riemann()))
        }))
    }

    /// Lichnerowicz Laplacian of a contravariant symmetric field `E^ab`.
    pub fn lichnerowicz_laplacian_upper(&self, e: &SymTensorField) -> Result<SymTensorField> {
        self.metric.field().same_chart(e)?;
        let chart = *self.chart();
        let d = e.data();
        Ok(SymTensorField::from_nodes(chart, |n| {
            let loc = &self.local[n];
            let jet = chart.jet(n, |m| d[m]);
            tensor::pack(&loc.lichnerowicz_upper(&jet, &self.ricci[n], &loc.riemann()))
        }))
    }

    /// `nabla_b K^b_a = g^bc nabla_b K_ca`.
    pub fn divergence(&self, k: &SymTensorField) -> Result<CovectorField> {
        self.metric.field().same_chart(k)?;
        let chart = *self.chart();
        let d = k.data();
        Ok(CovectorField::from_nodes(chart, |n| {
            let loc = &self.local[n];
            let g1 = chart.gradient(n, |m| d[m]);
            let dk = [tensor::unpack(&g1[0]), tensor::unpack(&g1[1]), tensor::unpack(&g1[2])];
            let cov = loc.covariant_derivative_lower(&tensor::unpack(&d[n]), &dk);
            let mut out = [0.0; 3];
            for (a, o) in out.iter_mut().enumerate() {
                for b in 0..3 {
                    for c in 0..3 {
                        *o += loc.ginv[b][c] * cov[b][c][a];
                    }
                }
            }
            out
        }))
    }

    /// Coordinate gradient `d_a u` (a covector).
    pub fn gradient(&self, u: &ScalarField) -> Result<CovectorField> {
        self.metric.field().same_chart(u)?;
        let chart = *self.chart();
        let d = u.data();
        Ok(CovectorField::from_nodes(chart, |n| chart.gradient(n, |m| d[m])))
    }

    /// `g^ab K_ab`.
    pub fn trace(&self, k: &SymTensorField) -> ScalarField {
        ScalarField::from_nodes(*self.chart(), |n| {
            tensor::contract(&self.local[n].ginv, &tensor::unpack(&k.at(n)))
        })
    }

    /// Riemannian integral `sum u sqrt(det g) dV` in fixed node order.
    pub fn integrate(&self, u: &ScalarField) -> Result<f64> {
        self.metric.field().same_chart(u)?;
        let s = compensated_sum(self.local.iter().zip(u.data()).map(|(loc, x)| x * loc.sqrt_det));
        Ok(s * self.chart().cell_volume())
    }

    pub fn volume(&self) -> f64 {
        compensated_sum(self.local.iter().map(|l| l.sqrt_det)) * self.chart().cell_volume()
    }
}

/// Neumaier summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn christoffel(g: &MetricField) -> Result<ConnectionField> {
    let chart = *g.chart();
    let data = g.field().data();
    let mut out = Vec::with_capacity(chart.node_count());
    for node in 0..chart.node_count() {
        let jet = chart.jet(node, |m| data[m]);
        let loc = Local::new(&jet, false).ok_or(Error::SingularMetric {
            node,
            coords: chart.coords(node),
        })?;
        out.push([
            tensor::pack(&loc.gamma[0]),
            tensor::pack(&loc.gamma[1]),
            tensor::pack(&loc.gamma[2]),
        ]);
    }
    ConnectionField::from_vec(chart, out)
}

pub fn ricci(g: &MetricField) -> Result<SymTensorField> {
    Ok(Geometry::new(g)?.ricci())
}

pub fn scalar_curvature(g: &MetricField) -> Result<ScalarField> {
    Ok(Geometry::new(g)?.scalar_curvature())
}

pub fn riemann_norm_sup(g: &MetricField) -> Result<f64> {
    Ok(Geometry::new(g)?.riemann_norm_sup())
}

pub fn laplace_beltrami(g: &MetricField, u: &ScalarField) -> Result<ScalarField> {
    Geometry::new(g)?.laplace_beltrami(u)
}

pub fn lichnerowicz_laplacian(g: &MetricField, k: &SymTensorField) -> Result<SymTensorField> {
    Geometry::new(g)?.lichnerowicz_laplacian(k)
}

/// Integral of `u` against the Riemannian measure. Needs only `sqrt(det g)`.
pub fn integrate(g: &MetricField, u: &ScalarField) -> Result<f64> {
    g.field().same_chart(u)?;
    let chart = g.chart();
    let mut terms = Vec::with_capacity(chart.node_count());
    for (node, x) in u.data().iter().enumerate() {
        let det = g.det_at(node);
        if det <= 0.0 {
            return Err(Error::SingularMetric {
                node,
                coords: chart.coords(node),
            });
        }
        terms.push(x * det.sqrt());
    }
    Ok(compensated_sum(terms) * chart.cell_volume())
}

pub fn volume(g: &MetricField) -> Result<f64> {
    integrate(g, &ScalarField::constant(*g.chart(), 1.0))
}

#[cfg(test)]
pub(crate) mod tests;

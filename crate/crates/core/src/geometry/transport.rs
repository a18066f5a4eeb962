//! Parallel transport from a source node along approximate minimal paths.
//!
//! Paths are grid polylines obtained by descending the distance field from the
//! target back to the source; the transport ODE
//! `dV^a/ds = -Gamma^a_bc V^b dx^c/ds` is integrated along them with the
//! midpoint rule and trilinearly interpolated Christoffel symbols.

use crate::chart::{GridChart, Linear};
use crate::error::{Error, Result};
use crate::field::{ConnectionField, Field, MetricField};
use crate::geometry::christoffel;
use crate::geometry::distance::{geodesic_distance, within_guard, DistanceField};
use crate::tensor::{self, Mat3, IDENTITY};

/// Transport matrices `P^a_i'` carrying vectors at the source to each node.
#[derive(Clone, Debug)]
pub struct TransportField {
    source: usize,
    chart: GridChart,
    matrices: Vec<Option<Mat3>>,
}

impl TransportField {
    pub fn source(&self) -> usize {
        self.source
    }

    pub fn at(&self, x: usize) -> Result<Mat3> {
        self.matrices[x].ok_or(Error::BeyondInjectivityGuard)
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }
}

/// Trilinear interpolation of a periodic node field at a coordinate position.
pub(crate) fn interpolate<T: Linear>(field: &Field<T>, x: [f64; 3]) -> T {
    let chart = field.chart();
    let h = chart.spacing();
    let n = chart.resolution();
    let mut base = [0isize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let s = x[a] / h[a];
        let f = s.floor();
        base[a] = f as isize;
        frac[a] = s - f;
    }
    let mut out = T::zero();
    for corner in 0..8 {
        let mut w = 1.0;
        let mut c = [0usize; 3];
        for a in 0..3 {
            let bit = (corner >> a) & 1;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            c[a] = (base[a] + bit as isize).rem_euclid(n[a] as isize) as usize;
        }
        if w != 0.0 {
            out.add_scaled(w, &field.data()[chart.index(c)]);
        }
    }
    out
}

fn gamma_matrix(conn: &[[f64; 6]; 3], dx: &[f64; 3]) -> Mat3 {
    // M^a_b = Gamma^a_bc dx^c
    let mut m = [[0.0; 3]; 3];
    for a in 0..3 {
        let g = tensor::unpack(&conn[a]);
        for b in 0..3 {
            m[a][b] = g[b][0] * dx[0] + g[b][1] * dx[1] + g[b][2] * dx[2];
        }
    }
    m
}

fn sub(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut r = *a;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] -= b[i][j];
        }
    }
    r
}

fn scale(a: &Mat3, w: f64) -> Mat3 {
    let mut r = *a;
    for row in r.iter_mut() {
        for v in row.iter_mut() {
            *v *= w;
        }
    }
    r
}

/// Polyline from `start` (absolute, unwrapped near `target`) to `target`.
fn descent_path(
    metric: &MetricField,
    grad: &Field<[f64; 3]>,
    start: [f64; 3],
    target: [f64; 3],
    step: f64,
) -> Vec<[f64; 3]> {
    let dist =
        |p: &[f64; 3]| ((p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2) + (p[2] - target[2]).powi(2)).sqrt();
    let mut path = vec![start];
    let mut p = start;
    let max_steps = (4.0 * dist(&start) / step) as usize + 16;
    let mut best = dist(&p);
    let mut stalled = 0;
    for _ in 0..max_steps {
        let r = dist(&p);
        if r <= step {
            break;
        }
        let gp = tensor::unpack(&interpolate(metric.field(), p));
        let dd = interpolate(grad, p);
        let gi = tensor::inverse(&gp).unwrap_or(IDENTITY);
        let mut v = [0.0; 3];
        for a in 0..3 {
            v[a] = gi[a][0] * dd[0] + gi[a][1] * dd[1] + gi[a][2] * dd[2];
        }
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(norm > 1e-12) {
            break;
        }
        for a in 0..3 {
            p[a] -= step * v[a] / norm;
        }
        path.push(p);
        let r = dist(&p);
        if r < best {
            best = r;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > 3 {
                break;
            }
        }
    }
    path.push(target);
    path
}

/// Transport from `y` to every node inside the half-period guard.
pub fn parallel_transport(g: &MetricField, y: usize) -> Result<TransportField> {
    parallel_transport_within(g, y, f64::INFINITY)
}

/// Transport from `y` to the guarded nodes within coordinate `radius` of it.
pub fn parallel_transport_within(g: &MetricField, y: usize, radius: f64) -> Result<TransportField> {
    let dist = geodesic_distance(g, y)?;
    let conn = christoffel(g)?;
    transport_with(g, &dist, &conn, radius)
}

pub(crate) fn transport_with(
    g: &MetricField,
    dist: &DistanceField,
    conn: &ConnectionField,
    radius: f64,
) -> Result<TransportField> {
    let chart = *g.chart();
    let y = dist.source();
    let dvals = dist.values().data();
    let grad = Field::<[f64; 3]>::from_nodes(chart, |n| chart.gradient(n, |m| dvals[m]));
    let ypos = chart.position(y);
    let step = 0.5 * chart.min_spacing();
    let mut matrices = vec![None; chart.node_count()];
    for (x, slot) in matrices.iter_mut().enumerate() {
        if !within_guard(&chart, y, x) {
            continue;
        }
        let disp = chart.displacement(ypos, chart.position(x));
        let r = (disp[0] * disp[0] + disp[1] * disp[1] + disp[2] * disp[2]).sqrt();
        if r > radius {
            continue;
        }
        if x == y {
            *slot = Some(IDENTITY);
            continue;
        }
        let start = [ypos[0] + disp[0], ypos[1] + disp[1], ypos[2] + disp[2]];
        let mut path = descent_path(g, &grad, start, ypos, step);
        path.reverse();
        let mut p = IDENTITY;
        for w in path.windows(2) {
            let dx = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
            let mid = [
                0.5 * (w[0][0] + w[1][0]),
                0.5 * (w[0][1] + w[1][1]),
                0.5 * (w[0][2] + w[1][2]),
            ];
            let m0 = gamma_matrix(&interpolate(conn, w[0]), &dx);
            let half = sub(&p, &scale(&tensor::mul(&m0, &p), 0.5));
            let mm = gamma_matrix(&interpolate(conn, mid), &dx);
            p = sub(&p, &tensor::mul(&mm, &half));
        }
        *slot = Some(p);
    }
    Ok(TransportField {
        source: y,
        chart,
        matrices,
    })
}

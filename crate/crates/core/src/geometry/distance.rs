//! First-arrival geodesic distance from a source node.
//!
//! Solves `|grad d|_g = 1` with Lax-Friedrichs fast sweeping, which handles the
//! anisotropic Hamiltonian `H(x, p) = sqrt(g^ab p_a p_b)` of a general metric.
//! A small ball around the source is initialized with the segment length under
//! the midpoint metric and kept fixed. Inside the guard the result is capped by
//! the metric length of the straight coordinate chord, which is exact for
//! constant metrics.

use crate::chart::GridChart;
use crate::error::{Error, Result};
use crate::field::{MetricField, ScalarField};
use crate::geometry::transport::interpolate;
use crate::tensor::{self, Mat3};

/// Distances from one source node, valid inside the half-period guard.
#[derive(Clone, Debug)]
pub struct DistanceField {
    source: usize,
    values: ScalarField,
}

impl DistanceField {
    pub fn source(&self) -> usize {
        self.source
    }

    pub fn chart(&self) -> &GridChart {
        self.values.chart()
    }

    /// True when `x` is strictly closer than half a period to the source on every axis.
    pub fn within_guard(&self, x: usize) -> bool {
        within_guard(self.chart(), self.source, x)
    }

    pub fn at(&self, x: usize) -> Result<f64> {
        if self.within_guard(x) {
            Ok(self.values.at(x))
        } else {
            Err(Error::BeyondInjectivityGuard)
        }
    }

    /// Raw sweep output, including nodes outside the guard.
    pub fn values(&self) -> &ScalarField {
        &self.values
    }
}

pub(crate) fn within_guard(chart: &GridChart, y: usize, x: usize) -> bool {
    let off = chart.node_offset(y, x);
    let n = chart.resolution();
    (0..3).all(|a| 2 * off[a].unsigned_abs() < n[a])
}

/// Length of the straight coordinate segment `dx` under the metric `g`.
pub(crate) fn segment_length(g: &Mat3, dx: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += g[a][b] * dx[a] * dx[b];
        }
    }
    s.max(0.0).sqrt()
}

/// Radius (in nodes along each axis) of the fixed initialization ball.
const SEED_RADIUS: isize = 3;
const MAX_SWEEPS: usize = 400;

pub fn geodesic_distance(g: &MetricField, y: usize) -> Result<DistanceField> {
    let chart = *g.chart();
    let n = chart.resolution();
    let h = chart.spacing();
    let count = chart.node_count();
    let mut ginv = Vec::with_capacity(count);
    for node in 0..count {
        ginv.push(tensor::inverse(&g.at(node)).ok_or(Error::SingularMetric {
            node,
            coords: chart.coords(node),
        })?);
    }
    let big = 10.0 * chart.period().iter().sum::<f64>() * max_diag_sqrt(g);
    let mut d = vec![big; count];
    let mut fixed = vec![false; count];
    let yc = chart.coords(y);
    let gy = g.at(y);
    for i in -SEED_RADIUS..=SEED_RADIUS {
        for j in -SEED_RADIUS..=SEED_RADIUS {
            for k in -SEED_RADIUS..=SEED_RADIUS {
                let node = chart.offset(yc, [i, j, k]);
                let gx = g.at(node);
                let mut mid = [[0.0; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        mid[a][b] = 0.5 * (gx[a][b] + gy[a][b]);
                    }
                }
                let dx = [i as f64 * h[0], j as f64 * h[1], k as f64 * h[2]];
                d[node] = segment_length(&mid, &dx);
                fixed[node] = true;
            }
        }
    }

    let half = [n[0] as isize / 2, n[1] as isize / 2, n[2] as isize / 2];
    let range = |a: usize, dir: bool| -> Vec<isize> {
        let lo = -half[a];
        let hi = n[a] as isize - half[a] - 1;
        if dir {
            (lo..=hi).collect()
        } else {
            (lo..=hi).rev().collect()
        }
    };
    let tol = 1e-13 * big;
    for _ in 0..MAX_SWEEPS {
        let mut change = 0.0f64;
        for dirs in 0..8 {
            let ri = range(0, dirs & 1 == 0);
            let rj = range(1, dirs & 2 == 0);
            let rk = range(2, dirs & 4 == 0);
            for &k in &rk {
                for &j in &rj {
                    for &i in &ri {
                        let c = chart.coords(chart.offset(yc, [i, j, k]));
                        let node = chart.index(c);
                        if fixed[node] {
                            continue;
                        }
                        let gi = &ginv[node];
                        let mut p = [0.0; 3];
                        let mut num = 1.0;
                        let mut den = 0.0;
                        let mut sum_nb = [0.0; 3];
                        for a in 0..3 {
                            let mut off = [0isize; 3];
                            off[a] = 1;
                            let up = d[chart.offset(c, off)];
                            off[a] = -1;
                            let dn = d[chart.offset(c, off)];
                            p[a] = (up - dn) / (2.0 * h[a]);
                            sum_nb[a] = up + dn;
                        }
                        let mut hp = 0.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                hp += gi[a][b] * p[a] * p[b];
                            }
                        }
                        num -= hp.max(0.0).sqrt();
                        for a in 0..3 {
                            let sigma = gi[a][a].sqrt();
                            num += sigma * sum_nb[a] / (2.0 * h[a]);
                            den += sigma / h[a];
                        }
                        let cand = num / den;
                        if cand < d[node] {
                            change = change.max(d[node] - cand);
                            d[node] = cand;
                        }
                    }
                }
            }
        }
        if change < tol {
            break;
        }
    }
    let ypos = chart.position(y);
    for (x, dx) in d.iter_mut().enumerate() {
        if within_guard(&chart, y, x) && !fixed[x] {
            *dx = dx.min(chord_length(g, ypos, chart.displacement(ypos, chart.position(x))));
        }
    }
    Ok(DistanceField {
        source: y,
        values: ScalarField::from_vec(chart, d)?,
    })
}

/// Metric length of the coordinate segment `from -> from + disp` (midpoint rule).
fn chord_length(g: &MetricField, from: [f64; 3], disp: [f64; 3]) -> f64 {
    let h = g.chart().min_spacing();
    let r = (disp[0] * disp[0] + disp[1] * disp[1] + disp[2] * disp[2]).sqrt();
    let pieces = ((4.0 * r / h).ceil() as usize).max(1);
    let dx = disp.map(|v| v / pieces as f64);
    (0..pieces)
        .map(|i| {
            let t = (i as f64 + 0.5) / pieces as f64;
            let p = [0, 1, 2].map(|a| from[a] + t * disp[a]);
            segment_length(&tensor::unpack(&interpolate(g.field(), p)), &dx)
        })
        .sum()
}

fn max_diag_sqrt(g: &MetricField) -> f64 {
    let mut m = 0.0f64;
    for node in 0..g.chart().node_count() {
        let gm = g.at(node);
        for a in 0..3 {
            m = m.max(gm[a][a]);
        }
    }
    m.sqrt()
}

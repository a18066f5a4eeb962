//! Periodic 3-torus charts and the centered difference stencils used on them.
//!
//! Nodes are numbered with the first axis fastest:
//! `index = (k * n1 + j) * n0 + i` for the coordinate triple `(i, j, k)`.
//! The coordinate of node `i` along axis `a` is `i * spacing[a]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum nodes per axis so the widest stencil never overlaps itself.
pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum StencilOrder {
    Second,
    Fourth,
}

impl StencilOrder {
    pub fn as_u8(self) -> u8 {
        match self {
            StencilOrder::Second => 2,
            StencilOrder::Fourth => 4,
        }
    }
}

impl TryFrom<u8> for StencilOrder {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            2 => Ok(StencilOrder::Second),
            4 => Ok(StencilOrder::Fourth),
            other => Err(format!("stencil order must be 2 or 4, got {other}")),
        }
    }
}

impl From<StencilOrder> for u8 {
    fn from(s: StencilOrder) -> u8 {
        s.as_u8()
    }
}

/// Uniform periodic grid on a 3-torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridChart {
    resolution: [usize; 3],
    period: [f64; 3],
    order: StencilOrder,
}

impl GridChart {
    pub fn new(resolution: [usize; 3], period: [f64; 3], order: StencilOrder) -> Result<Self> {
        for a in 0..3 {
            if resolution[a] < MIN_RESOLUTION {
                return Err(Error::InvalidChart(format!(
                    "axis {a} has {} nodes, need at least {MIN_RESOLUTION}",
                    resolution[a]
                )));
            }
            if !(period[a].is_finite() && period[a] > 0.0) {
                return Err(Error::InvalidChart(format!(
                    "axis {a} has non-positive period {}",
                    period[a]
                )));
            }
        }
        Ok(GridChart {
            resolution,
            period,
            order,
        })
    }

    /// Cubic chart with `n` nodes and period `l` on every axis.
    pub fn cubic(n: usize, l: f64, order: StencilOrder) -> Result<Self> {
        Self::new([n; 3], [l; 3], order)
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn period(&self) -> [f64; 3] {
        self.period
    }

    pub fn order(&self) -> StencilOrder {
        self.order
    }

    pub fn spacing(&self) -> [f64; 3] {
        [
            self.period[0] / self.resolution[0] as f64,
            self.period[1] / self.resolution[1] as f64,
            self.period[2] / self.resolution[2] as f64,
        ]
    }

    pub fn min_spacing(&self) -> f64 {
        let h = self.spacing();
        h[0].min(h[1]).min(h[2])
    }

    /// Volume of one grid cell in coordinate measure.
    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h[0] * h[1] * h[2]
    }

    pub fn node_count(&self) -> usize {
        self.resolution[0] * self.resolution[1] * self.resolution[2]
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.resolution[1] + c[1]) * self.resolution[0] + c[0]
    }

    pub fn coords(&self, node: usize) -> [usize; 3] {
        let n0 = self.resolution[0];
        let n1 = self.resolution[1];
        [node % n0, (node / n0) % n1, node / (n0 * n1)]
    }

    /// Index of the node displaced by `off` from `c`, wrapping periodically.
    pub fn offset(&self, c: [usize; 3], off: [isize; 3]) -> usize {
        let mut w = [0usize; 3];
        for a in 0..3 {
            let n = self.resolution[a] as isize;
            w[a] = (c[a] as isize + off[a]).rem_euclid(n) as usize;
        }
        self.index(w)
    }

    /// Physical coordinate of a node.
    pub fn position(&self, node: usize) -> [f64; 3] {
        let c = self.coords(node);
        let h = self.spacing();
        [c[0] as f64 * h[0], c[1] as f64 * h[1], c[2] as f64 * h[2]]
    }

    /// Minimal-image coordinate displacement from `from` to `to`.
    pub fn displacement(&self, from: [f64; 3], to: [f64; 3]) -> [f64; 3] {
        let mut d = [0.0; 3];
        for a in 0..3 {
            let l = self.period[a];
            let mut x = (to[a] - from[a]).rem_euclid(l);
            if x > 0.5 * l {
                x -= l;
            }
            d[a] = x;
        }
        d
    }

    /// Signed minimal-image node offsets from `from` to `to`.
    pub fn node_offset(&self, from: usize, to: usize) -> [isize; 3] {
        let a = self.coords(from);
        let b = self.coords(to);
        let mut d = [0isize; 3];
        for ax in 0..3 {
            let n = self.resolution[ax] as isize;
            let mut x = (b[ax] as isize - a[ax] as isize).rem_euclid(n);
            if 2 * x > n {
                x -= n;
            }
            d[ax] = x;
        }
        d
    }

    fn first_weights(&self) -> &'static [(isize, f64)] {
        match self.order {
            StencilOrder::Second => &[(-1, -0.5), (1, 0.5)],
            StencilOrder::Fourth => &[(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)],
        }
    }

    fn second_weights(&self) -> &'static [(isize, f64)] {
        match self.order {
            StencilOrder::Second => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
            StencilOrder::Fourth => &[
                (-2, -1.0 / 12.0),
                (-1, 16.0 / 12.0),
                (0, -30.0 / 12.0),
                (1, 16.0 / 12.0),
                (2, -1.0 / 12.0),
            ],
        }
    }

    /// Value, gradient and Hessian of a sampled quantity at a node.
    pub fn jet<T: Linear>(&self, node: usize, sample: impl Fn(usize) -> T) -> Jet<T> {
        let c = self.coords(node);
        let h = self.spacing();
        let w1 = self.first_weights();
        let w2 = self.second_weights();
        let value = sample(node);
        let mut d1 = [T::zero(); 3];
        let mut d2 = [T::zero(); 6];
        for a in 0..3 {
            let mut off = [0isize; 3];
            let mut acc = T::zero();
            for &(o, w) in w1 {
                off[a] = o;
                acc.add_scaled(w / h[a], &sample(self.offset(c, off)));
            }
            d1[a] = acc;
            let mut acc = T::zero();
            for &(o, w) in w2 {
                off[a] = o;
                acc.add_scaled(w / (h[a] * h[a]), &sample(self.offset(c, off)));
            }
            d2[pair(a, a)] = acc;
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let mut acc = T::zero();
            for &(oa, wa) in w1 {
                for &(ob, wb) in w1 {
                    let mut off = [0isize; 3];
                    off[a] = oa;
                    off[b] = ob;
                    acc.add_scaled(wa * wb / (h[a] * h[b]), &sample(self.offset(c, off)));
                }
            }
            d2[pair(a, b)] = acc;
        }
        Jet { value, d1, d2 }
    }

    /// Value and gradient only (cheaper than [`GridChart::jet`]).
    pub fn gradient<T: Linear>(&self, node: usize, sample: impl Fn(usize) -> T) -> [T; 3] {
        let c = self.coords(node);
        let h = self.spacing();
        let mut d1 = [T::zero(); 3];
        for a in 0..3 {
            let mut off = [0isize; 3];
            let mut acc = T::zero();
            for &(o, w) in self.first_weights() {
                off[a] = o;
                acc.add_scaled(w / h[a], &sample(self.offset(c, off)));
            }
            d1[a] = acc;
        }
        d1
    }

    /// Discrete wavenumber squared seen by the second-derivative stencil for
    /// an integer mode `m` along `axis` (the symbol of the 1D operator, negated).
    pub fn discrete_wavenumber_sq(&self, axis: usize, m: i64) -> f64 {
        let h = self.spacing()[axis];
        let theta = 2.0 * std::f64::consts::PI * m as f64 / self.resolution[axis] as f64;
        match self.order {
            StencilOrder::Second => (2.0 - 2.0 * theta.cos()) / (h * h),
            StencilOrder::Fourth => (30.0 - 32.0 * theta.cos() + 2.0 * (2.0 * theta).cos()) / (12.0 * h * h),
        }
    }
}

/// Index into packed symmetric pairs ordered 00, 01, 02, 11, 12, 22.
#[inline]
pub const fn pair(a: usize, b: usize) -> usize {
    const MAP: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    MAP[a][b]
}

/// Inverse of [`pair`].
pub const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Minimal vector-space interface needed by the stencils.
pub trait Linear: Copy {
    fn zero() -> Self;
    fn add_scaled(&mut self, w: f64, other: &Self);
}

impl Linear for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        *self += w * other;
    }
}

impl<const N: usize> Linear for [f64; N] {
    fn zero() -> Self {
        [0.0; N]
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        for (s, o) in self.iter_mut().zip(other) {
            *s += w * o;
        }
    }
}

/// Second-order local Taylor data of a sampled quantity.
#[derive(Clone, Copy, Debug)]
pub struct Jet<T> {
    pub value: T,
    pub d1: [T; 3],
    /// Second derivatives packed by [`pair`].
    pub d2: [T; 6],
}

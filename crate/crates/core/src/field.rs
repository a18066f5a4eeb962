//! Sampled tensor fields on a [`GridChart`].

use crate::chart::{GridChart, Linear};
use crate::error::{Error, Result};
use crate::tensor::{self, Mat3, Sym6, IDENTITY6};

/// Field storage shared by every rank: one `T` per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    chart: GridChart,
    data: Vec<T>,
}

pub type ScalarField = Field<f64>;
pub type CovectorField = Field<[f64; 3]>;
/// Symmetric rank-2 field, components ordered 11, 12, 13, 22, 23, 33.
pub type SymTensorField = Field<Sym6>;

impl<T: Linear> Field<T> {
    pub fn from_vec(chart: GridChart, data: Vec<T>) -> Result<Self> {
        if data.len() != chart.node_count() {
            return Err(Error::SampleCount {
                expected: chart.node_count(),
                got: data.len(),
            });
        }
        Ok(Field { chart, data })
    }

    pub fn constant(chart: GridChart, value: T) -> Self {
        Field {
            chart,
            data: vec![value; chart.node_count()],
        }
    }

    pub fn zeros(chart: GridChart) -> Self {
        Self::constant(chart, T::zero())
    }

    /// Samples `f` at every node position.
    pub fn from_fn(chart: GridChart, f: impl Fn([f64; 3]) -> T) -> Self {
        let data = (0..chart.node_count()).map(|n| f(chart.position(n))).collect();
        Field { chart, data }
    }

    /// Builds a field node by node from the node index.
    pub fn from_nodes(chart: GridChart, f: impl FnMut(usize) -> T) -> Self {
        Field {
            chart,
            data: (0..chart.node_count()).map(f).collect(),
        }
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, node: usize) -> T {
        self.data[node]
    }

    pub fn same_chart<U>(&self, other: &Field<U>) -> Result<()> {
        if self.chart == other.chart {
            Ok(())
        } else {
            Err(Error::ChartMismatch)
        }
    }

    /// `self + w * other`, node by node.
    pub fn axpy(&self, w: f64, other: &Self) -> Self {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let mut r = *a;
                r.add_scaled(w, b);
                r
            })
            .collect();
        Field {
            chart: self.chart,
            data,
        }
    }

    pub fn scaled(&self, w: f64) -> Self {
        let data = self
            .data
            .iter()
            .map(|a| {
                let mut r = T::zero();
                r.add_scaled(w, a);
                r
            })
            .collect();
        Field {
            chart: self.chart,
            data,
        }
    }

    /// Weighted sum `sum_i w_i f_i` of fields on one chart.
    pub fn combine(terms: &[(f64, &Self)]) -> Self {
        let chart = terms[0].1.chart;
        let mut data = vec![T::zero(); chart.node_count()];
        for (w, f) in terms {
            for (d, s) in data.iter_mut().zip(&f.data) {
                d.add_scaled(*w, s);
            }
        }
        Field { chart, data }
    }
}

/// Flattened view of field components, used for norms and file output.
pub trait Components {
    const RANK_NAME: &'static str;
    const WIDTH: usize;
    fn components(&self) -> &[f64];
    fn from_components(c: &[f64]) -> Self;
}

impl Components for f64 {
    const RANK_NAME: &'static str = "scalar";
    const WIDTH: usize = 1;
    fn components(&self) -> &[f64] {
        std::slice::from_ref(self)
    }
    fn from_components(c: &[f64]) -> Self {
        c[0]
    }
}

impl Components for [f64; 3] {
    const RANK_NAME: &'static str = "covector";
    const WIDTH: usize = 3;
    fn components(&self) -> &[f64] {
        self
    }
    fn from_components(c: &[f64]) -> Self {
        [c[0], c[1], c[2]]
    }
}

impl Components for [f64; 6] {
    const RANK_NAME: &'static str = "sym2";
    const WIDTH: usize = 6;
    fn components(&self) -> &[f64] {
        self
    }
    fn from_components(c: &[f64]) -> Self {
        [c[0], c[1], c[2], c[3], c[4], c[5]]
    }
}

impl<T: Linear + Components> Field<T> {
    /// Largest absolute component over all nodes.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|v| v.components().iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .flat_map(|(a, b)| a.components().iter().zip(b.components()).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max)
    }
}

impl ScalarField {
    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Field {
            chart: self.chart,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// A symmetric field that is positive-definite at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField(SymTensorField);

impl MetricField {
    pub fn new(field: SymTensorField) -> Result<Self> {
        for (node, g) in field.data().iter().enumerate() {
            if !tensor::is_positive_definite(&tensor::unpack(g)) {
                return Err(Error::SingularMetric {
                    node,
                    coords: field.chart().coords(node),
                });
            }
        }
        Ok(MetricField(field))
    }

    pub fn flat(chart: GridChart) -> Self {
        MetricField(Field::constant(chart, IDENTITY6))
    }

    /// `c * delta` for a constant `c > 0`.
    pub fn conformally_flat(chart: GridChart, c: f64) -> Result<Self> {
        Self::new(Field::constant(chart, IDENTITY6.map(|x| c * x)))
    }

    pub fn field(&self) -> &SymTensorField {
        &self.0
    }

    pub fn into_field(self) -> SymTensorField {
        self.0
    }

    pub fn chart(&self) -> &GridChart {
        self.0.chart()
    }

    pub fn at(&self, node: usize) -> Mat3 {
        tensor::unpack(&self.0.at(node))
    }

    pub fn det_at(&self, node: usize) -> f64 {
        tensor::det(&self.at(node))
    }

    pub fn min_det(&self) -> f64 {
        (0..self.chart().node_count())
            .map(|n| self.det_at(n))
            .fold(f64::INFINITY, f64::min)
    }
}

impl AsRef<SymTensorField> for MetricField {
    fn as_ref(&self) -> &SymTensorField {
        &self.0
    }
}

impl Components for [[f64; 6]; 3] {
    const RANK_NAME: &'static str = "connection";
    const WIDTH: usize = 18;
    fn components(&self) -> &[f64] {
        self.as_flattened()
    }
    fn from_components(c: &[f64]) -> Self {
        let mut out = [[0.0; 6]; 3];
        for (k, v) in c.iter().take(18).enumerate() {
            out[k / 6][k % 6] = *v;
        }
        out
    }
}

/// Christoffel symbols `Gamma^c_ab` per node, stored `[c][pair(a, b)]`.
pub type ConnectionField = Field<[[f64; 6]; 3]>;

impl Linear for [[f64; 6]; 3] {
    fn zero() -> Self {
        [[0.0; 6]; 3]
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        for (s, o) in self.iter_mut().zip(other) {
            s.add_scaled(w, o);
        }
    }
}

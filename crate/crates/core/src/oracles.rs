//! Closed-form references shared by unit tests.

use std::f64::consts::PI;

use crate::chart::GridChart;
use crate::field::ScalarField;

/// Periodic 1-D heat kernel of variance `2 t` on a circle of length `l`.
pub fn theta(x: f64, t: f64, l: f64) -> f64 {
    let images = 3 + (4.0 * t.sqrt() / l).ceil() as i64;
    (-images..=images)
        .map(|m| {
            let d = x + m as f64 * l;
            (-d * d / (4.0 * t)).exp()
        })
        .sum::<f64>()
        / (4.0 * PI * t).sqrt()
}

/// Flat-torus heat kernel centred at `y`.
pub fn wrapped_gaussian(chart: GridChart, y: [f64; 3], t: f64) -> ScalarField {
    let p = chart.period();
    ScalarField::from_fn(chart, |x| (0..3).map(|a| theta(x[a] - y[a], t, p[a])).product())
}

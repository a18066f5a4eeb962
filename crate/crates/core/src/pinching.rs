//! Hamilton's pinching diagnostics: `Ric - a1 g R >= 0` and
//! `|Rhat|^2 <= a2 R^(1 - a3)`, with `Rhat` the trace-free Ricci tensor.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PinchingReport {
    /// `R > 0` at every sample. The alphas are only reported when it holds.
    pub positive_scalar: bool,
    /// Largest `a1` keeping `Ric - a1 g R` nonnegative everywhere.
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub alpha3: Option<f64>,
}

impl PinchingReport {
    pub fn not_applicable() -> Self {
        PinchingReport {
            positive_scalar: false,
            alpha1: None,
            alpha2: None,
            alpha3: None,
        }
    }
}

/// Scalar curvature, `min eig / R` and `|Rhat|^2` from the eigenvalues of `g^-1 Ric`.
pub fn pointwise(eigs: [f64; 3]) -> (f64, f64, f64) {
    let r = eigs.iter().sum::<f64>();
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let q = eigs.iter().map(|l| (l - r / 3.0).powi(2)).sum::<f64>();
    (r, min / r, q)
}

/// Aggregates pointwise samples `(R, min eig / R, |Rhat|^2)`.
///
/// `alpha3` is fitted by least squares on `log|Rhat|^2` against `log R` when
/// the samples spread in `R`; otherwise `fallback_alpha3` is used. `alpha2` is
/// then the smallest constant that bounds every sample.
pub fn aggregate(samples: &[(f64, f64, f64)], fallback_alpha3: f64) -> PinchingReport {
    if samples.is_empty() || samples.iter().any(|s| !(s.0 > 0.0)) {
        return PinchingReport::not_applicable();
    }
    let alpha1 = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let fit: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.2 > 0.0)
        .map(|s| (s.0.ln(), s.2.ln()))
        .collect();
    let mut alpha3 = fallback_alpha3;
    if fit.len() >= 2 {
        let n = fit.len() as f64;
        let mx = fit.iter().map(|p| p.0).sum::<f64>() / n;
        let my = fit.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx = fit.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let sxy = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
        if sxx > 1e-18 * n {
            alpha3 = 1.0 - sxy / sxx;
        }
    }
    let alpha2 = samples
        .iter()
        .map(|s| s.2 / s.0.powf(1.0 - alpha3))
        .fold(0.0f64, f64::max);
    PinchingReport {
        positive_scalar: true,
        alpha1: Some(alpha1),
        alpha2: Some(alpha2),
        alpha3: Some(alpha3),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn einstein_point_has_third_and_no_tracefree_part() {
        let (r, a1, q) = pointwise([2.0, 2.0, 2.0]);
        assert_eq!(r, 6.0);
        assert!((a1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(q, 0.0);
    }

    #[test]
    fn recovers_power_law() {
        // |Rhat|^2 = 0.5 R^(1 - 0.25)
        let samples: Vec<_> = (1..20)
            .map(|i| {
                let r = i as f64 * 0.7;
                (r, 0.2, 0.5 * r.powf(0.75))
            })
            .collect();
        let rep = aggregate(&samples, 0.0);
        assert!((rep.alpha3.unwrap() - 0.25).abs() < 1e-12);
        assert!((rep.alpha2.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(rep.alpha1, Some(0.2));
    }

    #[test]
    fn nonpositive_scalar_flags() {
        let rep = aggregate(&[(1.0, 0.3, 0.0), (0.0, 0.0, 0.0)], 0.5);
        assert!(!rep.positive_scalar);
        assert!(rep.alpha1.is_none());
    }
}

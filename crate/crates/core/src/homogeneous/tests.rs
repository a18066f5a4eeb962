use super::*;
use crate::chart::{Jet, Linear};
use crate::geometry::Local;
use crate::tensor::{self, Sym6};

/// Independent coordinate oracle: `SU(2)` near the identity in the chart
/// `x -> (sqrt(1 - |x|^2), x)`, left-invariant coframe `Im(conj(q) dq)`.
mod chart_oracle {
    use super::*;

    fn qmul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] + a[2] * b[0] + a[3] * b[1] - a[1] * b[3],
            a[0] * b[3] + a[3] * b[0] + a[1] * b[2] - a[2] * b[1],
        ]
    }

    /// `sigma[i][m] = sigma_i(d/dx^m)` at `x`.
    fn coframe(x: [f64; 3]) -> [[f64; 3]; 3] {
        let w = (1.0 - x[0] * x[0] - x[1] * x[1] - x[2] * x[2]).sqrt();
        let qbar = [w, -x[0], -x[1], -x[2]];
        let mut s = [[0.0; 3]; 3];
        for m in 0..3 {
            let mut dq = [-x[m] / w, 0.0, 0.0, 0.0];
            dq[1 + m] = 1.0;
            let p = qmul(qbar, dq);
            for i in 0..3 {
                s[i][m] = p[1 + i];
            }
        }
        s
    }

    /// Coordinate components of `sum_i c_i sigma_i^2`.
    pub fn tensor(c: [f64; 3], x: [f64; 3]) -> Sym6 {
        let s = coframe(x);
        let mut m = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] = (0..3).map(|i| c[i] * s[i][a] * s[i][b]).sum();
            }
        }
        tensor::pack(&m)
    }

    const DELTA: f64 = 2e-3;

    fn d1<T: Linear>(f: &dyn Fn([f64; 3]) -> T, x: [f64; 3], a: usize) -> T {
        let at = |t: f64| {
            let mut y = x;
            y[a] += t * DELTA;
            f(y)
        };
        let mut out = T::zero();
        out.add_scaled(-1.0 / (12.0 * DELTA), &at(2.0));
        out.add_scaled(8.0 / (12.0 * DELTA), &at(1.0));
        out.add_scaled(-8.0 / (12.0 * DELTA), &at(-1.0));
        out.add_scaled(1.0 / (12.0 * DELTA), &at(-2.0));
        out
    }

    pub fn jet<T: Linear>(f: &dyn Fn([f64; 3]) -> T, x: [f64; 3]) -> Jet<T> {
        let mut d2 = [T::zero(); 6];
        for (p, &(a, b)) in crate::chart::PAIRS.iter().enumerate() {
            let g = |y: [f64; 3]| d1(f, y, b);
            d2[p] = d1(&g, x, a);
        }
        Jet {
            value: f(x),
            d1: [d1(f, x, 0), d1(f, x, 1), d1(f, x, 2)],
            d2,
        }
    }

    pub fn local(a: [f64; 3]) -> Local {
        let f = move |x: [f64; 3]| tensor(a, x);
        Local::new(&jet(&f, [0.0; 3]), true).unwrap()
    }
}

const SAMPLES: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, 1.0, 0.4], [0.7, 0.7, 1.9], [0.8, 1.3, 0.6]];

fn general(a: [f64; 3]) -> HomogeneousState {
    HomogeneousState::with_frame(Model::BergerSphere, a).unwrap()
}

#[test]
fn milnor_ricci_matches_coordinate_oracle() {
    for a in SAMPLES {
        let loc = chart_oracle::local(a);
        let ric = loc.ricci();
        let eig = general(a).ricci_eigenvalues();
        for i in 0..3 {
            // At the identity the coordinate basis is the frame X_i.
            assert!(
                (ric[i][i] - a[i] * eig[i]).abs() < 1e-7,
                "{a:?} {i}: {} vs {}",
                ric[i][i],
                a[i] * eig[i]
            );
            for j in 0..3 {
                if i != j {
                    assert!(ric[i][j].abs() < 1e-7);
                }
            }
        }
        let r = loc.scalar_from(&ric);
        assert!((r - general(a).scalar_curvature()).abs() < 1e-7);
        let rm = loc.riemann_norm(&loc.riemann());
        assert!((rm - general(a).riemann_norm()).abs() < 1e-6);
    }
}

#[test]
fn frame_lichnerowicz_matches_coordinate_oracle() {
    let k = [0.3, -1.1, 0.7];
    for a in SAMPLES {
        let loc = chart_oracle::local(a);
        let fk = move |x: [f64; 3]| chart_oracle::tensor(k, x);
        let kj = chart_oracle::jet(&fk, [0.0; 3]);
        let ric = loc.ricci();
        let lk = loc.lichnerowicz_lower(&kj, &ric, &loc.riemann());
        let frame = lichnerowicz_diagonal(&general(a), k);
        for i in 0..3 {
            assert!(
                (lk[i][i] - frame[i]).abs() < 1e-6,
                "{a:?} {i}: {} vs {}",
                lk[i][i],
                frame[i]
            );
        }
        // The metric itself is annihilated.
        let lg = lichnerowicz_diagonal(&general(a), a);
        assert!(lg.iter().all(|x| x.abs() < 1e-12), "{lg:?}");
    }
}

#[test]
fn reduced_rates() {
    assert_eq!(ode_rhs(&HomogeneousState::flat(2.0).unwrap()).unwrap(), vec![0.0]);
    let r = ode_rhs(&HomogeneousState::round(1.0).unwrap()).unwrap();
    assert!((r[0] + 4.0).abs() < 1e-14);
    let b = ode_rhs(&HomogeneousState::berger(1.3, 1.3).unwrap()).unwrap();
    assert!((b[0] + 4.0).abs() < 1e-14 && (b[1] + 4.0).abs() < 1e-14);
    // da = -8 + 4 c / a, dc = -4 c^2 / a^2
    let (a, c) = (1.5, 0.6);
    let b = ode_rhs(&HomogeneousState::berger(a, c).unwrap()).unwrap();
    assert!((b[0] - (-8.0 + 4.0 * c / a)).abs() < 1e-13);
    assert!((b[1] + 4.0 * c * c / (a * a)).abs() < 1e-13);
    let n = ode_rhs_with(&HomogeneousState::round(0.7).unwrap(), Normalization::Volume).unwrap();
    assert!(n[0].abs() < 1e-14);
}

#[test]
fn rejects_nonpositive() {
    assert!(matches!(
        HomogeneousState::berger(1.0, 0.0),
        Err(Error::NonPositiveCoefficient(_))
    ));
    assert!(HomogeneousState::round(-1.0).is_err());
}

#[test]
fn round_closed_form_and_extinction() {
    let s = HomogeneousState::round(1.0).unwrap();
    let c = analytic_solution(&s, 0.2).unwrap().coefficients()[0];
    assert!((c - 0.2).abs() < 1e-15);
    match analytic_solution(&s, 0.25) {
        Err(Error::Extinction { beta_star, .. }) => assert_eq!(beta_star, 0.25),
        other => panic!("{other:?}"),
    }
    let f = HomogeneousState::flat(2.0).unwrap();
    assert_eq!(analytic_solution(&f, 123.0).unwrap().coefficients(), vec![2.0]);
}

#[test]
fn generic_integrator_reproduces_reference() {
    for s in [
        HomogeneousState::round(1.0).unwrap(),
        HomogeneousState::berger(1.0, 0.5).unwrap(),
        HomogeneousState::berger(0.8, 1.6).unwrap(),
    ] {
        let beta = 0.1;
        let exact = analytic_solution(&s, beta).unwrap().coefficients();
        let c0 = s.coefficients();
        let got = crate::flow::ode::integrate_fixed(&[c0[0], *c0.last().unwrap()], 0.0, beta, 400, |_, y| {
            let st = HomogeneousState::from_coefficients(s.model(), &y[..c0.len()])?;
            let r = ode_rhs(&st)?;
            Ok([r[0], *r.last().unwrap()])
        })
        .unwrap();
        for (g, e) in got.iter().zip(&exact) {
            assert!((g - e).abs() < 1e-10, "{g} vs {e}");
        }
    }
}

#[test]
fn berger_preserves_round_locus() {
    let s = HomogeneousState::berger(1.0, 1.0).unwrap();
    let e = analytic_solution(&s, 0.2).unwrap().coefficients();
    assert!((e[0] - e[1]).abs() < 1e-12);
    assert!((e[0] - 0.2).abs() < 1e-12);
    assert!((extinction_time(&s).unwrap() - 0.25).abs() < 1e-9);
}

#[test]
fn berger_extinction_is_refused() {
    let s = HomogeneousState::berger(1.0, 0.5).unwrap();
    let t = extinction_time(&s).unwrap();
    assert!(t > 0.0 && t < 0.25);
    assert!(analytic_solution(&s, 0.9 * t).is_ok());
    assert!(matches!(
        analytic_solution(&s, t * 1.001),
        Err(Error::Extinction { .. })
    ));
}

#[test]
fn volume_normalized_round_is_fixed() {
    let s = HomogeneousState::round(1.0).unwrap().with_kappa(0.3).with_density(2.0);
    let run = evolve(
        &s,
        &RunControls {
            step: 0.01,
            target: 0.25,
            normalization: Normalization::Volume,
            rm_ceiling: None,
        },
    )
    .unwrap();
    assert!(run.stop.is_none());
    let last = run.samples.last().unwrap().1;
    assert!((last.coefficients()[0] - 1.0).abs() < 1e-14);
    assert_eq!(last.density(), Some(2.0));
    // Delta_L K = 0 leaves only the normalization term, dk = (2/3) R k = 4k.
    let kappa = last.kappa().unwrap();
    assert!((kappa / (0.3 * 1.0f64.exp()) - 1.0).abs() < 1e-6, "{kappa}");
}

#[test]
fn extrinsic_proportional_to_metric_has_no_rate() {
    let s = HomogeneousState::berger(1.0, 0.6).unwrap().with_kappa(0.5);
    let r = full_rhs(&s, Normalization::Plain).unwrap();
    assert!(r[3..6].iter().all(|x| x.abs() < 1e-13), "{r:?}");
    // On the round model K keeps its coframe coefficients while g shrinks.
    let s = HomogeneousState::round(1.0).unwrap().with_kappa(0.5);
    let e = analytic_solution(&s, 0.2).unwrap();
    assert!((e.extrinsic().unwrap()[1] - 0.5).abs() < 1e-12);
    assert!((e.kappa().unwrap() - 2.5).abs() < 1e-10);
}

#[test]
fn blow_up_detected_near_extinction() {
    let s = HomogeneousState::round(1.0).unwrap();
    let step = 1e-3;
    let run = evolve(
        &s,
        &RunControls {
            step,
            target: 1.0,
            normalization: Normalization::Plain,
            rm_ceiling: None,
        },
    )
    .unwrap();
    match run.stop {
        Some(Error::BlowUp { beta, .. }) => assert!((beta - 0.25).abs() <= 2.0 * step, "{beta}"),
        other => panic!("{other:?}"),
    }
    let (b, st) = run.samples[200];
    assert!((st.coefficients()[0] - (1.0 - 4.0 * b)).abs() < 1e-12);
}

#[test]
fn pinching_reports() {
    let r = pinching_report(&HomogeneousState::round(2.0).unwrap(), 0.5);
    assert!(r.positive_scalar);
    assert!((r.alpha1.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(r.alpha2.unwrap().abs() < 1e-15);
    assert!(!pinching_report(&HomogeneousState::flat(1.0).unwrap(), 0.5).positive_scalar);
    // Berger against eigenvalues of g^-1 Ric from the coordinate oracle.
    let (a, c) = (1.0, 0.5);
    let loc = chart_oracle::local([a, a, c]);
    let eig = tensor::relative_eigenvalues(&loc.ricci(), &loc.g).unwrap();
    let r_oracle: f64 = eig.iter().sum();
    let a1_oracle = eig[0] / r_oracle;
    let rep = pinching_report(&HomogeneousState::berger(a, c).unwrap(), 0.5);
    assert!(rep.alpha1.unwrap() < 1.0 / 3.0);
    assert!((rep.alpha1.unwrap() - a1_oracle).abs() < 1e-7);
}

#[test]
fn csv_has_one_row_per_sample() {
    let s = HomogeneousState::berger(1.0, 0.8).unwrap();
    let run = evolve(
        &s,
        &RunControls {
            step: 0.01,
            target: 0.05,
            normalization: Normalization::Plain,
            rm_ceiling: None,
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    write_csv(&run, 0.5, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(
        lines[0],
        "beta,a,c,scalar_curvature,rm_norm,r_positive,alpha1,alpha2,alpha3"
    );
    assert_eq!(lines.len(), 1 + run.samples.len());
}

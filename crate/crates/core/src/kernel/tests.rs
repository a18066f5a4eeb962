use super::*;
use crate::chart::StencilOrder;
use crate::flow::{evolve, FlowControls, FlowState, Gauge};
use crate::oracles::wrapped_gaussian;
use crate::tensor::IDENTITY6;

const L: f64 = 2.0 * PI;

fn static_flat(ch: GridChart, rho: ScalarField, beta_star: f64) -> FlowTrajectory {
    let s = FlowState::new(MetricField::flat(ch), SymTensorField::zeros(ch), rho, Gauge::Plain).unwrap();
    let c = FlowControls {
        target_beta: beta_star,
        safety: 1.0,
        ..FlowControls::default()
    };
    evolve(s, &c).unwrap().into_result().unwrap()
}

fn l1(a: &ScalarField, b: &ScalarField) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.chart().cell_volume()
}

#[test]
fn mollifier_is_the_flat_heat_kernel() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let g = MetricField::flat(ch);
    let h = ch.min_spacing();
    assert!(matches!(
        mollifier(&g, 0, 3.9 * h * h),
        Err(Error::UnderResolvedMollifier { .. })
    ));
    let y = ch.index([3, 7, 12]);
    let eta0 = 0.7;
    let m = mollifier(&g, y, eta0).unwrap();
    assert!((crate::geometry::integrate(&g, &m).unwrap() - 1.0).abs() < 1e-14);
    let exact = wrapped_gaussian(ch, ch.position(y), eta0);
    let mass = crate::geometry::integrate(&g, &exact).unwrap();
    assert!(m.max_abs_diff(&exact.scaled(1.0 / mass)) < 1e-13);
}

#[test]
fn flat_scalar_kernel_tracks_wrapped_gaussian() {
    let ch = GridChart::cubic(16, L, StencilOrder::Fourth).unwrap();
    let traj = static_flat(ch, ScalarField::zeros(ch), 2.0);
    let y = ch.index([8, 2, 5]);
    let mut c = KernelControls::new(0.7, 1.6);
    c.etas = vec![1.0, 1.3];
    let k = conjugate_kernel(&traj, y, Rank::Scalar, &c).unwrap();
    assert_eq!(k.etas(), vec![0.7, 1.0, 1.3, 1.6]);
    for eta in k.etas() {
        assert!((kernel_mass(&k, &traj, eta).unwrap() - 1.0).abs() < 1e-12);
    }
    let e = l1(k.scalar(1.6).unwrap(), &wrapped_gaussian(ch, ch.position(y), 1.6));
    assert!(e < 2e-3, "{e:e}");
    assert!(matches!(k.scalar(0.9), Err(Error::MissingKernel(_))));
    assert!(k.tensor(1.0).is_err());
    let late = KernelControls::new(0.7, 2.5);
    assert!(matches!(
        conjugate_kernel(&traj, y, Rank::Scalar, &late),
        Err(Error::MissingCoverage { .. })
    ));
}

#[test]
fn flat_tensor_kernel_factorizes() {
    let ch = GridChart::cubic(12, L, StencilOrder::Second).unwrap();
    let traj = static_flat(ch, ScalarField::zeros(ch), 1.6);
    let y = ch.index([1, 6, 10]);
    let c = KernelControls::new(1.2, 1.5);
    let s = conjugate_kernel(&traj, y, Rank::Scalar, &c).unwrap();
    let t = conjugate_kernel(&traj, y, Rank::Tensor, &c).unwrap();
    let sc = s.scalar(1.5).unwrap();
    let peak = sc.max_abs();
    for (p, e) in t.tensor(1.5).unwrap().iter().enumerate() {
        let b = pair_block(p);
        let want = SymTensorField::from_nodes(ch, |n| b.map(|v| v * sc.at(n)));
        assert!(e.max_abs_diff(&want) <= 1e-10 * peak);
    }
}

#[test]
fn flat_representations() {
    let ch = GridChart::cubic(16, L, StencilOrder::Fourth).unwrap();
    let rho0 = ScalarField::from_fn(ch, |x| 1.0 + 0.5 * x[0].sin());
    let beta_star = 1.5;
    let traj = static_flat(ch, rho0, beta_star);
    let y = ch.index([4, 0, 9]);
    let c = KernelControls::new(0.7, 1.2);
    let t = conjugate_kernel(&traj, y, Rank::Tensor, &c).unwrap();
    for eta in [0.7, 1.2] {
        match represent_field(&t, &traj, Target::Metric, eta).unwrap() {
            Represented::Tensor(v) => {
                for p in 0..6 {
                    assert!((v[p] - IDENTITY6[p]).abs() < 1e-12);
                }
            }
            other => panic!("{other:?}"),
        }
    }
    let s = conjugate_kernel(&traj, y, Rank::Scalar, &c).unwrap();
    let x = ch.position(y);
    let want = 1.0 + 0.5 * x[0].sin() * (-beta_star).exp();
    for eta in [0.7, 1.2] {
        let Represented::Scalar(v) = represent_field(&s, &traj, Target::Density, eta).unwrap() else {
            panic!()
        };
        assert!((v - want).abs() < 1e-4, "{v} vs {want}");
    }
}

#[test]
fn duality_on_an_evolving_metric() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let g = MetricField::new(SymTensorField::from_fn(ch, |x| {
        [
            1.0 + 0.1 * x[1].sin(),
            0.05 * x[2].cos(),
            0.0,
            1.0,
            0.0,
            1.0 - 0.08 * x[0].cos(),
        ]
    }))
    .unwrap();
    let u0 = ScalarField::from_fn(ch, |x| 2.0 + x[0].cos() * x[2].sin());
    let s = FlowState::new(g, SymTensorField::zeros(ch), u0, Gauge::Plain).unwrap();
    let c = FlowControls {
        target_beta: 1.5,
        ..FlowControls::default()
    };
    let traj = evolve(s, &c).unwrap().into_result().unwrap();
    let y = ch.index([6, 3, 2]);
    let mut errs = Vec::new();
    for eta0 in [1.2, 0.65] {
        let k = conjugate_kernel(&traj, y, Rank::Scalar, &KernelControls::new(eta0, 1.4)).unwrap();
        for eta in [eta0, 1.4] {
            assert!((kernel_mass(&k, &traj, eta).unwrap() - 1.0).abs() < 1e-3);
        }
        let Represented::Scalar(v) = represent_field(&k, &traj, Target::Density, 1.4).unwrap() else {
            panic!()
        };
        errs.push((v - traj.final_state().density.at(y)).abs());
    }
    assert!(errs[1] < errs[0] && errs[1] < 2e-2, "{errs:?}");
}

#[test]
fn parametrix_basics() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let g = MetricField::flat(ch);
    let y = ch.index([5, 5, 5]);
    let eta = 0.2;
    let p = Parametrix::new(&g, y, Rank::Tensor).unwrap();
    assert_eq!(p.scalar(y, eta).unwrap(), (4.0 * PI * eta).powf(-1.5));
    let blocks = p.tensor(y, eta).unwrap();
    for (q, b) in blocks.iter().enumerate() {
        let want = pair_block(q).map(|v| v * (4.0 * PI * eta).powf(-1.5));
        assert_eq!(*b, want);
    }
    let far = ch.index([13, 5, 5]);
    assert!(matches!(p.scalar(far, eta), Err(Error::BeyondInjectivityGuard)));
    let x = ch.index([7, 4, 6]);
    let d2: f64 = ch
        .displacement(ch.position(y), ch.position(x))
        .iter()
        .map(|v| v * v)
        .sum();
    let want = (4.0 * PI * eta).powf(-1.5) * (-d2 / (4.0 * eta)).exp();
    let ParametrixValue::Scalar(v) = gaussian_parametrix(&g, y, x, eta, Rank::Scalar).unwrap() else {
        panic!()
    };
    assert!((v - want).abs() < 1e-12 * want);
}

#[test]
fn snapshots_and_manifest_entries() {
    let ch = GridChart::cubic(8, L, StencilOrder::Second).unwrap();
    let traj = static_flat(ch, ScalarField::zeros(ch), 3.0);
    let mut c = KernelControls::new(2.5, 2.7);
    c.etas = vec![2.6];
    let k = conjugate_kernel(&traj, 3, Rank::Tensor, &c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let entries = k.write_snapshots(dir.path(), "kernel").unwrap();
    assert_eq!(entries.len(), 3 * 6);
    let e = &entries[7];
    assert_eq!(e.pair.as_deref(), Some("12"));
    assert!((e.eta - 2.6).abs() < 1e-15);
    let (f, h): (SymTensorField, _) = snapshot::read(&dir.path().join(&e.file)).unwrap();
    assert_eq!(h.source, Some(3));
    assert_eq!(h.quantity.as_deref(), Some("tensor-kernel-12"));
    assert_eq!(f.max_abs_diff(&k.tensor(2.6).unwrap()[1]), 0.0);
}

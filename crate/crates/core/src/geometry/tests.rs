use std::f64::consts::PI;

use super::*;
use crate::chart::StencilOrder;
use crate::field::Field;
use crate::tensor::{unpack, IDENTITY6};
use proptest::prelude::*;

pub(crate) const L: f64 = 2.0 * PI;

/// Closed-form test metric: flat plus three smooth periodic modes.
pub(crate) fn wavy(eps: f64) -> impl Fn([f64; 3]) -> Mat3 + Copy {
    move |x: [f64; 3]| {
        let s1 = x[0].sin();
        let s2 = x[1].cos();
        let s3 = (x[0] + x[2]).sin();
        let h1 = [[1.0, 0.3, 0.0], [0.3, 0.5, 0.1], [0.0, 0.1, -0.2]];
        let h2 = [[0.2, 0.0, 0.4], [0.0, -0.3, 0.2], [0.4, 0.2, 0.6]];
        let h3 = [[-0.4, 0.1, 0.1], [0.1, 0.7, 0.0], [0.1, 0.0, 0.3]];
        let mut g = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let d = if a == b { 1.0 } else { 0.0 };
                g[a][b] = d + eps * (s1 * h1[a][b] + s2 * h2[a][b] + s3 * h3[a][b]);
            }
        }
        g
    }
}

pub(crate) fn sample_metric(chart: GridChart, f: impl Fn([f64; 3]) -> Mat3) -> MetricField {
    MetricField::new(Field::from_fn(chart, |x| tensor::pack(&f(x)))).unwrap()
}

/// Independent oracle: derivatives by 4th-order central differences of the
/// closed form, Christoffels from the textbook formula, Ricci contracted from
/// an explicitly assembled Riemann tensor.
pub(crate) mod oracle {
    use super::*;

    const DELTA: f64 = 1e-3;

    pub fn d<T: Copy>(f: impl Fn([f64; 3]) -> T, x: [f64; 3], a: usize, lin: impl Fn(&[T; 4]) -> T) -> T {
        let mut pts = [x; 4];
        for (k, o) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
            pts[k][a] += o * DELTA;
        }
        lin(&[f(pts[0]), f(pts[1]), f(pts[2]), f(pts[3])])
    }

    fn fd(v: &[f64; 4]) -> f64 {
        (v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * DELTA)
    }

    pub fn dscalar(f: impl Fn([f64; 3]) -> f64, x: [f64; 3], a: usize) -> f64 {
        d(f, x, a, fd)
    }

    pub fn dmat(f: impl Fn([f64; 3]) -> Mat3, x: [f64; 3], a: usize) -> Mat3 {
        d(f, x, a, |v| {
            let mut r = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    r[i][j] = fd(&[v[0][i][j], v[1][i][j], v[2][i][j], v[3][i][j]]);
                }
            }
            r
        })
    }

    pub fn christoffel(g: impl Fn([f64; 3]) -> Mat3 + Copy, x: [f64; 3]) -> [[[f64; 3]; 3]; 3] {
        let gi = tensor::inverse(&g(x)).unwrap();
        let dg = [dmat(g, x, 0), dmat(g, x, 1), dmat(g, x, 2)];
        let mut out = [[[0.0; 3]; 3]; 3];
        for c in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    let mut s = 0.0;
                    for dd in 0..3 {
                        s += 0.5 * gi[c][dd] * (dg[a][dd][b] + dg[b][dd][a] - dg[dd][a][b]);
                    }
                    out[c][a][b] = s;
                }
            }
        }
        out
    }

    /// R^a_bcd via differences of the Christoffel function, lowered with g.
    pub fn riemann(g: impl Fn([f64; 3]) -> Mat3 + Copy, x: [f64; 3]) -> [[[[f64; 3]; 3]; 3]; 3] {
        let gm = christoffel(g, x);
        let dgm: Vec<[[[f64; 3]; 3]; 3]> = (0..3)
            .map(|e| {
                d(
                    |p| christoffel(g, p),
                    x,
                    e,
                    |v| {
                        let mut r = [[[0.0; 3]; 3]; 3];
                        for c in 0..3 {
                            for a in 0..3 {
                                for b in 0..3 {
                                    r[c][a][b] = fd(&[v[0][c][a][b], v[1][c][a][b], v[2][c][a][b], v[3][c][a][b]]);
                                }
                            }
                        }
                        r
                    },
                )
            })
            .collect();
        let gx = g(x);
        let mut up = [[[[0.0; 3]; 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for dd in 0..3 {
                        let mut s = dgm[c][a][dd][b] - dgm[dd][a][c][b];
                        for e in 0..3 {
                            s += gm[a][c][e] * gm[e][dd][b] - gm[a][dd][e] * gm[e][c][b];
                        }
                        up[a][b][c][dd] = s;
                    }
                }
            }
        }
        let mut low = [[[[0.0; 3]; 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for dd in 0..3 {
                        for e in 0..3 {
                            low[a][b][c][dd] += gx[a][e] * up[e][b][c][dd];
                        }
                    }
                }
            }
        }
        low
    }

    pub fn ricci(g: impl Fn([f64; 3]) -> Mat3 + Copy, x: [f64; 3]) -> Mat3 {
        let rm = riemann(g, x);
        let gi = tensor::inverse(&g(x)).unwrap();
        let mut r = [[0.0; 3]; 3];
        for b in 0..3 {
            for dd in 0..3 {
                for a in 0..3 {
                    for c in 0..3 {
                        r[b][dd] += gi[a][c] * rm[c][b][a][dd];
                    }
                }
            }
        }
        r
    }

    /// Divergence form `(1/sqrt g) d_a (sqrt g g^ab d_b u)`.
    pub fn laplace_beltrami(
        g: impl Fn([f64; 3]) -> Mat3 + Copy,
        u: impl Fn([f64; 3]) -> f64 + Copy,
        x: [f64; 3],
    ) -> f64 {
        let flux = |p: [f64; 3], a: usize| {
            let gp = g(p);
            let gi = tensor::inverse(&gp).unwrap();
            let sq = tensor::det(&gp).sqrt();
            (0..3).map(|b| sq * gi[a][b] * dscalar(u, p, b)).sum::<f64>()
        };
        let div: f64 = (0..3).map(|a| dscalar(|p| flux(p, a), x, a)).sum();
        div / tensor::det(&g(x)).sqrt()
    }
}

fn max_err(chart: GridChart, f: impl Fn(usize) -> f64) -> f64 {
    (0..chart.node_count()).step_by(7).map(f).fold(0.0, f64::max)
}

fn rate(e_coarse: f64, e_fine: f64) -> f64 {
    (e_coarse / e_fine).log2()
}

#[test]
fn flat_and_conformal_constant_have_no_connection() {
    let ch = GridChart::cubic(8, L, StencilOrder::Second).unwrap();
    for g in [MetricField::flat(ch), MetricField::conformally_flat(ch, 2.7).unwrap()] {
        let c = christoffel(&g).unwrap();
        assert_eq!(c.max_abs(), 0.0);
        let geo = Geometry::new(&g).unwrap();
        assert_eq!(geo.ricci().max_abs(), 0.0);
        assert_eq!(geo.scalar_curvature().max_abs(), 0.0);
        assert_eq!(geo.riemann_norm_sup(), 0.0);
    }
}

#[test]
fn singular_metric_reports_node() {
    let ch = GridChart::cubic(8, L, StencilOrder::Second).unwrap();
    let mut f = Field::constant(ch, IDENTITY6);
    // Built through the unchecked path: positive at construction, then degenerate.
    f.data_mut()[5] = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    assert!(MetricField::new(f).is_err());
}

#[test]
fn christoffel_converges_at_stencil_order() {
    let g = wavy(0.1);
    for (order, expected) in [(StencilOrder::Second, 2.0), (StencilOrder::Fourth, 4.0)] {
        let errs: Vec<f64> = [16, 32]
            .iter()
            .map(|&n| {
                let ch = GridChart::cubic(n, L, order).unwrap();
                let conn = christoffel(&sample_metric(ch, g)).unwrap();
                max_err(ch, |node| {
                    let o = oracle::christoffel(g, ch.position(node));
                    let mut e = 0.0f64;
                    for c in 0..3 {
                        let gm = unpack(&conn.at(node)[c]);
                        for a in 0..3 {
                            for b in 0..3 {
                                e = e.max((gm[a][b] - o[c][a][b]).abs());
                            }
                        }
                    }
                    e
                })
            })
            .collect();
        let r = rate(errs[0], errs[1]);
        assert!((r - expected).abs() < 0.3, "order {order:?}: errors {errs:?}, rate {r}");
    }
}

#[test]
fn ricci_and_laplacians_converge_at_stencil_order() {
    let g = wavy(0.1);
    let u = |x: [f64; 3]| (x[0] + 2.0 * x[1]).sin() + 0.5 * x[2].cos();
    for (order, expected) in [(StencilOrder::Second, 2.0), (StencilOrder::Fourth, 4.0)] {
        let mut ric_err = Vec::new();
        let mut lb_err = Vec::new();
        for n in [16, 32] {
            let ch = GridChart::cubic(n, L, order).unwrap();
            let geo = Geometry::new(&sample_metric(ch, g)).unwrap();
            let uf = ScalarField::from_fn(ch, u);
            let lb = geo.laplace_beltrami(&uf).unwrap();
            ric_err.push(max_err(ch, |node| {
                let o = oracle::ricci(g, ch.position(node));
                let r = geo.ricci_at(node);
                let mut e = 0.0f64;
                for a in 0..3 {
                    for b in 0..3 {
                        e = e.max((r[a][b] - o[a][b]).abs());
                    }
                }
                e
            }));
            lb_err.push(max_err(ch, |node| {
                (lb.at(node) - oracle::laplace_beltrami(g, u, ch.position(node))).abs()
            }));
        }
        let r1 = rate(ric_err[0], ric_err[1]);
        let r2 = rate(lb_err[0], lb_err[1]);
        assert!((r1 - expected).abs() < 0.3, "ricci {order:?}: {ric_err:?} rate {r1}");
        assert!((r2 - expected).abs() < 0.3, "laplace {order:?}: {lb_err:?} rate {r2}");
    }
}

#[test]
fn riemann_norm_consistent_with_three_dimensional_identity() {
    // In 3D the Weyl tensor vanishes: |Rm|^2 = 4|Ric|^2 - R^2.
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let geo = Geometry::new(&sample_metric(ch, wavy(0.2))).unwrap();
    let norms = geo.riemann_norm();
    for node in (0..ch.node_count()).step_by(31) {
        let loc = geo.local(node);
        let ric = geo.ricci_at(node);
        let mixed = tensor::mul(&loc.ginv, ric);
        let ric_sq = tensor::contract(&mixed, &tensor::transpose(&mixed));
        let r = geo.scalar_at(node);
        let expect = (4.0 * ric_sq - r * r).sqrt();
        assert!((norms.at(node) - expect).abs() < 1e-10 * expect.max(1.0));
    }
}

#[test]
fn linearized_ricci_agrees_to_second_order_in_amplitude() {
    // R_ab ~ 1/2 (d_c d_a h_cb + d_c d_b h_ca - d_c d_c h_ab - d_a d_b tr h)
    let ch = GridChart::cubic(24, L, StencilOrder::Fourth).unwrap();
    let node = ch.index([3, 5, 7]);
    let x = ch.position(node);
    let mut devs = Vec::new();
    for eps in [1e-2, 5e-3] {
        let g = wavy(eps);
        let h = |p: [f64; 3]| {
            let gp = g(p);
            let mut r = gp;
            for a in 0..3 {
                r[a][a] -= 1.0;
            }
            r
        };
        let geo = Geometry::new(&sample_metric(ch, g)).unwrap();
        let d2 = |i: usize, j: usize| oracle::dmat(|p| oracle::dmat(h, p, i), x, j);
        let mut lin = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for c in 0..3 {
                    s += d2(c, a)[c][b] + d2(c, b)[c][a] - d2(c, c)[a][b];
                    s -= d2(a, b)[c][c];
                }
                lin[a][b] = 0.5 * s;
            }
        }
        let r = geo.ricci_at(node);
        let mut dev = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                dev = dev.max((r[a][b] - lin[a][b]).abs());
            }
        }
        devs.push(dev);
    }
    let r = rate(devs[0], devs[1]);
    assert!((r - 2.0).abs() < 0.3, "deviation {devs:?}, rate {r}");
}

#[test]
fn laplace_beltrami_fourier_modes_on_flat_torus() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let g = MetricField::flat(ch);
    let geo = Geometry::new(&g).unwrap();
    let c = ScalarField::constant(ch, 3.2);
    assert_eq!(geo.laplace_beltrami(&c).unwrap().max_abs(), 0.0);
    for n in [1, 2, 3] {
        let u = ScalarField::from_fn(ch, |x| (n as f64 * x[0]).sin());
        let lu = geo.laplace_beltrami(&u).unwrap();
        let lam = ch.discrete_wavenumber_sq(0, n);
        let exact = (n * n) as f64;
        for node in 0..ch.node_count() {
            assert!((lu.at(node) + lam * u.at(node)).abs() < 1e-12);
            // Within the second-order truncation of the continuum eigenvalue.
            let h = ch.spacing()[0];
            let trunc = exact * exact * h * h / 12.0 + 1e-12;
            assert!((lu.at(node) + exact * u.at(node)).abs() <= trunc * 1.01);
        }
    }
}

#[test]
fn lichnerowicz_annihilates_metric() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let flat = MetricField::flat(ch);
    assert_eq!(lichnerowicz_laplacian(&flat, flat.field()).unwrap().max_abs(), 0.0);
    for eps in [0.05, 0.2] {
        let g = sample_metric(ch, wavy(eps));
        let lg = lichnerowicz_laplacian(&g, g.field()).unwrap();
        assert!(lg.max_abs() < 1e-12, "eps {eps}: {}", lg.max_abs());
    }
}

#[test]
fn lichnerowicz_on_flat_is_componentwise_laplacian() {
    let ch = GridChart::cubic(16, L, StencilOrder::Fourth).unwrap();
    let g = MetricField::flat(ch);
    let geo = Geometry::new(&g).unwrap();
    let a = [0.3, -1.0, 0.5, 2.0, 0.1, -0.7];
    let k = SymTensorField::from_fn(ch, |x| a.map(|v| v * x[0].sin()));
    let lk = geo.lichnerowicz_laplacian(&k).unwrap();
    let lam = ch.discrete_wavenumber_sq(0, 1);
    for node in 0..ch.node_count() {
        for p in 0..6 {
            assert!((lk.at(node)[p] + lam * k.at(node)[p]).abs() < 1e-12);
        }
    }
    // Componentwise agreement with the scalar operator for a general field.
    let k2 = SymTensorField::from_fn(ch, |x| {
        [
            x[0].sin(),
            x[1].cos() * x[2].sin(),
            0.2,
            (x[0] + x[1]).cos(),
            x[2].sin(),
            1.0,
        ]
    });
    let lk2 = geo.lichnerowicz_laplacian(&k2).unwrap();
    for p in 0..6 {
        let comp = ScalarField::from_nodes(ch, |n| k2.at(n)[p]);
        let lc = geo.laplace_beltrami(&comp).unwrap();
        for node in 0..ch.node_count() {
            assert!((lc.at(node) - lk2.at(node)[p]).abs() < 1e-12);
        }
    }
}

#[test]
fn lichnerowicz_matches_oracle_on_curved_metric() {
    let g = wavy(0.1);
    let kf = |x: [f64; 3]| -> Mat3 {
        let s = (x[1] + x[2]).sin();
        let c = x[0].cos();
        [[s, 0.2 * c, 0.0], [0.2 * c, c, 0.1 * s], [0.0, 0.1 * s, s * c]]
    };
    // Oracle: nabla nabla K from nested differences plus curvature terms.
    let oracle_dl = |x: [f64; 3]| -> Mat3 {
        let cov = |p: [f64; 3]| -> [Mat3; 3] {
            let gm = oracle::christoffel(g, p);
            let k = kf(p);
            let dk = [oracle::dmat(kf, p, 0), oracle::dmat(kf, p, 1), oracle::dmat(kf, p, 2)];
            let mut out = [[[0.0; 3]; 3]; 3];
            for c in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        let mut v = dk[c][a][b];
                        for q in 0..3 {
                            v -= gm[q][c][a] * k[q][b] + gm[q][c][b] * k[a][q];
                        }
                        out[c][a][b] = v;
                    }
                }
            }
            out
        };
        let gm = oracle::christoffel(g, x);
        let gi = tensor::inverse(&g(x)).unwrap();
        let c0 = cov(x);
        let dcov: Vec<[Mat3; 3]> = (0..3)
            .map(|e| {
                oracle::d(cov, x, e, |v| {
                    let mut r = [[[0.0; 3]; 3]; 3];
                    for c in 0..3 {
                        for a in 0..3 {
                            for b in 0..3 {
                                r[c][a][b] =
                                    (v[0][c][a][b] - 8.0 * v[1][c][a][b] + 8.0 * v[2][c][a][b] - v[3][c][a][b]) / 12e-3;
                            }
                        }
                    }
                    r
                })
            })
            .collect();
        let rm = oracle::riemann(g, x);
        let ric = oracle::ricci(g, x);
        let k = kf(x);
        let mut out = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for d in 0..3 {
                    for c in 0..3 {
                        let mut v = dcov[d][c][a][b];
                        for q in 0..3 {
                            v -= gm[q][d][c] * c0[q][a][b] + gm[q][d][a] * c0[c][q][b] + gm[q][d][b] * c0[c][a][q];
                        }
                        s += gi[d][c] * v;
                    }
                }
                for s_ in 0..3 {
                    for p in 0..3 {
                        s -= ric[a][s_] * gi[s_][p] * k[p][b] + ric[b][s_] * gi[s_][p] * k[a][p];
                        for t in 0..3 {
                            for q in 0..3 {
                                s += 2.0 * rm[a][s_][b][t] * gi[s_][p] * gi[t][q] * k[p][q];
                            }
                        }
                    }
                }
                out[a][b] = s;
            }
        }
        out
    };
    let mut errs = Vec::new();
    for n in [16, 32] {
        let ch = GridChart::cubic(n, L, StencilOrder::Second).unwrap();
        let geo = Geometry::new(&sample_metric(ch, g)).unwrap();
        let k = SymTensorField::from_fn(ch, |x| tensor::pack(&kf(x)));
        let lk = geo.lichnerowicz_laplacian(&k).unwrap();
        errs.push(
            (0..ch.node_count())
                .step_by(97)
                .map(|node| {
                    let o = oracle_dl(ch.position(node));
                    let v = unpack(&lk.at(node));
                    let mut e = 0.0f64;
                    for a in 0..3 {
                        for b in 0..3 {
                            e = e.max((v[a][b] - o[a][b]).abs());
                        }
                    }
                    e
                })
                .fold(0.0, f64::max),
        );
    }
    let r = rate(errs[0], errs[1]);
    assert!((r - 2.0).abs() < 0.3, "{errs:?} rate {r}");
}

#[test]
fn upper_and_lower_lichnerowicz_agree() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let g = sample_metric(ch, wavy(0.1));
    let geo = Geometry::new(&g).unwrap();
    let kf = |x: [f64; 3]| -> Mat3 {
        let s = (x[1] + x[2]).sin();
        [[s, 0.1, 0.0], [0.1, x[0].cos(), 0.0], [0.0, 0.0, 1.0 + 0.3 * s]]
    };
    let k_low = SymTensorField::from_fn(ch, |x| tensor::pack(&kf(x)));
    let k_up = SymTensorField::from_nodes(ch, |n| {
        let gi = geo.local(n).ginv;
        tensor::pack(&tensor::mul(&tensor::mul(&gi, &unpack(&k_low.at(n))), &gi))
    });
    let a = geo.lichnerowicz_laplacian(&k_low).unwrap();
    let b = geo.lichnerowicz_laplacian_upper(&k_up).unwrap();
    let mut dev = 0.0f64;
    for n in 0..ch.node_count() {
        let gm = geo.local(n).g;
        let lowered = tensor::mul(&tensor::mul(&gm, &unpack(&b.at(n))), &gm);
        let av = unpack(&a.at(n));
        for i in 0..3 {
            for j in 0..3 {
                dev = dev.max((lowered[i][j] - av[i][j]).abs());
            }
        }
    }
    // Differ only by the discrete product rule, i.e. at truncation order.
    assert!(dev < 5e-2 * a.max_abs(), "dev {dev}");
}

#[test]
fn contracted_bianchi_identity_converges() {
    let g = wavy(0.1);
    for (order, expected) in [(StencilOrder::Second, 2.0), (StencilOrder::Fourth, 4.0)] {
        let errs: Vec<f64> = [16, 32]
            .iter()
            .map(|&n| {
                let ch = GridChart::cubic(n, L, order).unwrap();
                let geo = Geometry::new(&sample_metric(ch, g)).unwrap();
                let einstein = SymTensorField::from_nodes(ch, |node| {
                    let r = geo.ricci_at(node);
                    let gm = geo.local(node).g;
                    let s = geo.scalar_at(node);
                    let mut e = *r;
                    for a in 0..3 {
                        for b in 0..3 {
                            e[a][b] -= 0.5 * s * gm[a][b];
                        }
                    }
                    tensor::pack(&e)
                });
                geo.divergence(&einstein).unwrap().max_abs()
            })
            .collect();
        let r = rate(errs[0], errs[1]);
        assert!((r - expected).abs() < 0.3, "{order:?}: {errs:?} rate {r}");
    }
}

#[test]
fn integrate_closed_forms() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let flat = MetricField::flat(ch);
    let one = ScalarField::constant(ch, 1.0);
    let l3 = L * L * L;
    assert!((integrate(&flat, &one).unwrap() - l3).abs() < 1e-12 * l3);
    let c = 2.3;
    let conf = MetricField::conformally_flat(ch, c).unwrap();
    assert!((volume(&conf).unwrap() - c.powf(1.5) * l3).abs() < 1e-12 * l3);
    let s = ScalarField::from_fn(ch, |x| 1.0 + x[0].sin());
    assert!((integrate(&flat, &s).unwrap() - l3).abs() < 1e-12 * l3);
    let geo = Geometry::new(&conf).unwrap();
    assert_eq!(geo.integrate(&one).unwrap(), integrate(&conf, &one).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn integrate_is_linear_and_additive(a in -3.0f64..3.0, b in -3.0f64..3.0, split in 1usize..7) {
        let ch = GridChart::cubic(8, L, StencilOrder::Second).unwrap();
        let g = sample_metric(ch, wavy(0.1));
        let u = ScalarField::from_fn(ch, |x| x[0].sin() + x[1]);
        let v = ScalarField::from_fn(ch, |x| (x[2] * x[0]).cos());
        let lhs = integrate(&g, &u.axpy(b / a.max(1e-3), &v).scaled(a.max(1e-3))).unwrap();
        let rhs = a.max(1e-3) * integrate(&g, &u).unwrap() + b * integrate(&g, &v).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        // Additivity over a chart-respecting split along the third axis.
        let n0 = ch.resolution()[0] * ch.resolution()[1];
        let lower = ScalarField::from_nodes(ch, |n| if n / n0 < split { u.at(n) } else { 0.0 });
        let upper = ScalarField::from_nodes(ch, |n| if n / n0 < split { 0.0 } else { u.at(n) });
        let whole = integrate(&g, &u).unwrap();
        let parts = integrate(&g, &lower).unwrap() + integrate(&g, &upper).unwrap();
        prop_assert!((whole - parts).abs() < 1e-12 * (1.0 + whole.abs()));
    }
}

#[test]
fn flat_distance_is_euclidean_and_scales() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let y = ch.index([4, 9, 2]);
    let d1 = geodesic_distance(&MetricField::flat(ch), y).unwrap();
    let h = ch.min_spacing();
    let ypos = ch.position(y);
    let mut worst = 0.0f64;
    for x in 0..ch.node_count() {
        if !d1.within_guard(x) {
            assert!(d1.at(x).is_err());
            continue;
        }
        let disp = ch.displacement(ypos, ch.position(x));
        let e = (disp[0].powi(2) + disp[1].powi(2) + disp[2].powi(2)).sqrt();
        worst = worst.max((d1.at(x).unwrap() - e).abs());
    }
    assert!(worst < 1e-12 * h, "flat distance error {worst}");
    let c = 3.0;
    let dc = geodesic_distance(&MetricField::conformally_flat(ch, c).unwrap(), y).unwrap();
    for x in (0..ch.node_count()).filter(|&x| d1.within_guard(x)) {
        let a = dc.at(x).unwrap();
        let b = c.sqrt() * d1.at(x).unwrap();
        assert!((a - b).abs() < 1e-9 * b.max(1.0));
    }
}

/// Dijkstra on the graph joining each node to all offsets in [-3, 3]^3, with
/// edge length from the midpoint metric.
fn dijkstra_oracle(g: &MetricField, y: usize) -> Vec<f64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let ch = *g.chart();
    let h = ch.spacing();
    let mut dist = vec![f64::INFINITY; ch.node_count()];
    dist[y] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0u64, y)));
    let mut offs = Vec::new();
    for i in -3isize..=3 {
        for j in -3isize..=3 {
            for k in -3isize..=3 {
                if (i, j, k) != (0, 0, 0) {
                    offs.push([i, j, k]);
                }
            }
        }
    }
    while let Some(Reverse((key, u))) = heap.pop() {
        let du = f64::from_bits(key);
        if du > dist[u] {
            continue;
        }
        let cu = ch.coords(u);
        for off in &offs {
            let v = ch.offset(cu, *off);
            let gu = g.at(u);
            let gv = g.at(v);
            let mut mid = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    mid[a][b] = 0.5 * (gu[a][b] + gv[a][b]);
                }
            }
            let dx = [off[0] as f64 * h[0], off[1] as f64 * h[1], off[2] as f64 * h[2]];
            let w = distance::segment_length(&mid, &dx);
            let nd = du + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((nd.to_bits(), v)));
            }
        }
    }
    dist
}

#[test]
fn perturbed_distance_matches_graph_oracle() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let g = sample_metric(ch, wavy(0.1));
    let y = ch.index([8, 8, 8]);
    let d = geodesic_distance(&g, y).unwrap();
    let o = dijkstra_oracle(&g, y);
    let h = ch.min_spacing();
    let mut worst = 0.0f64;
    for x in (0..ch.node_count()).filter(|&x| d.within_guard(x)) {
        worst = worst.max((d.at(x).unwrap() - o[x]).abs());
    }
    assert!(worst < 2.0 * h, "worst {worst}, spacing {h}");
}

#[test]
fn transport_is_identity_on_flat_and_near_isometric_otherwise() {
    let ch = GridChart::cubic(16, L, StencilOrder::Second).unwrap();
    let y = ch.index([8, 8, 8]);
    let tf = parallel_transport(&MetricField::flat(ch), y).unwrap();
    for x in 0..ch.node_count() {
        match tf.at(x) {
            Ok(p) => assert_eq!(p, tensor::IDENTITY),
            Err(_) => assert!(!distance::within_guard(&ch, y, x)),
        }
    }
    let g = sample_metric(ch, wavy(0.1));
    let tf = transport::parallel_transport_within(&g, y, 2.0).unwrap();
    let gy = g.at(y);
    let mut worst = 0.0f64;
    for x in 0..ch.node_count() {
        if let Ok(p) = tf.at(x) {
            // P^T g(x) P should reproduce g(y).
            let pulled = tensor::mul(&tensor::mul(&tensor::transpose(&p), &g.at(x)), &p);
            for a in 0..3 {
                for b in 0..3 {
                    worst = worst.max((pulled[a][b] - gy[a][b]).abs());
                }
            }
        }
    }
    assert!(worst < 2e-2, "isometry defect {worst}");
}

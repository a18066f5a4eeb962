//! Node-local Riemannian quantities computed from a metric jet.
//!
//! Everything here is an algebraic function of `(g, dg, d2g)`, so the classical
//! identities (metric compatibility, Riemann symmetries, contracted traces)
//! hold to roundoff on the discrete data, not just to truncation order.

use crate::chart::{pair, Jet};
use crate::tensor::{self, Mat3, Sym6};

pub type Christoffel = [[[f64; 3]; 3]; 3];
pub type Rank4 = [[[[f64; 3]; 3]; 3]; 3];

#[derive(Clone, Debug)]
pub struct Local {
    pub g: Mat3,
    pub ginv: Mat3,
    pub sqrt_det: f64,
    /// `dg[e][a][b] = d_e g_ab`
    pub dg: [Mat3; 3],
    /// `gamma[c][a][b] = Gamma^c_ab`
    pub gamma: Christoffel,
    /// `dgamma[e][c][a][b] = d_e Gamma^c_ab`; zero when built without second derivatives.
    pub dgamma: Rank4,
}

impl Local {
    /// Returns `None` when the metric is not positive-definite.
    pub fn new(jet: &Jet<Sym6>, second_order: bool) -> Option<Local> {
        let g = tensor::unpack(&jet.value);
        if !tensor::is_positive_definite(&g) {
            return None;
        }
        let ginv = tensor::inverse(&g)?;
        let sqrt_det = tensor::det(&g).sqrt();
        let dg = [
            tensor::unpack(&jet.d1[0]),
            tensor::unpack(&jet.d1[1]),
            tensor::unpack(&jet.d1[2]),
        ];
        // Gamma_dab with the first index lowered.
        let mut low = [[[0.0; 3]; 3]; 3];
        for d in 0..3 {
            for a in 0..3 {
                for b in a..3 {
                    let v = 0.5 * (dg[a][d][b] + dg[b][d][a] - dg[d][a][b]);
                    low[d][a][b] = v;
                    low[d][b][a] = v;
                }
            }
        }
        let mut gamma = [[[0.0; 3]; 3]; 3];
        for c in 0..3 {
            for a in 0..3 {
                for b in a..3 {
                    let v = ginv[c][0] * low[0][a][b] + ginv[c][1] * low[1][a][b] + ginv[c][2] * low[2][a][b];
                    gamma[c][a][b] = v;
                    gamma[c][b][a] = v;
                }
            }
        }
        let mut dgamma = [[[[0.0; 3]; 3]; 3]; 3];
        if second_order {
            let d2 = |e: usize, f: usize| tensor::unpack(&jet.d2[pair(e, f)]);
            let hess: [[Mat3; 3]; 3] = [
                [d2(0, 0), d2(0, 1), d2(0, 2)],
                [d2(1, 0), d2(1, 1), d2(1, 2)],
                [d2(2, 0), d2(2, 1), d2(2, 2)],
            ];
            for e in 0..3 {
                // d_e Gamma_dab - d_e g_dp Gamma^p_ab, then raise d.
                let mut tmp = [[[0.0; 3]; 3]; 3];
                for d in 0..3 {
                    for a in 0..3 {
                        for b in a..3 {
                            let dlow = 0.5 * (hess[e][a][d][b] + hess[e][b][d][a] - hess[e][d][a][b]);
                            let corr = dg[e][d][0] * gamma[0][a][b]
                                + dg[e][d][1] * gamma[1][a][b]
                                + dg[e][d][2] * gamma[2][a][b];
                            tmp[d][a][b] = dlow - corr;
                        }
                    }
                }
                for c in 0..3 {
                    for a in 0..3 {
                        for b in a..3 {
                            let v = ginv[c][0] * tmp[0][a][b] + ginv[c][1] * tmp[1][a][b] + ginv[c][2] * tmp[2][a][b];
                            dgamma[e][c][a][b] = v;
                            dgamma[e][c][b][a] = v;
                        }
                    }
                }
            }
        }
        Some(Local {
            g,
            ginv,
            sqrt_det,
            dg,
            gamma,
            dgamma,
        })
    }

    /// `R_ab = d_c Gamma^c_ab - d_b Gamma^c_ac + Gamma^c_cd Gamma^d_ab - Gamma^c_bd Gamma^d_ac`.
    pub fn ricci(&self) -> Mat3 {
        let gm = &self.gamma;
        let dgm = &self.dgamma;
        let mut trace = [0.0; 3];
        for d in 0..3 {
            trace[d] = gm[0][0][d] + gm[1][1][d] + gm[2][2][d];
        }
        let mut r = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                let mut s = 0.0;
                for c in 0..3 {
                    s += dgm[c][c][a][b] - dgm[b][c][a][c];
                    s += trace[c] * gm[c][a][b];
                    for d in 0..3 {
                        s -= gm[c][b][d] * gm[d][a][c];
                    }
                }
                r[a][b] = s;
                r[b][a] = s;
            }
        }
        r
    }

    pub fn scalar_from(&self, ric: &Mat3) -> f64 {
        tensor::contract(&self.ginv, ric)
    }

    /// Fully covariant Riemann tensor `R_abcd = g_ae R^e_bcd` with
    /// `R^e_bcd = d_c Gamma^e_db - d_d Gamma^e_cb + Gamma^e_cf Gamma^f_db - Gamma^e_df Gamma^f_cb`.
    pub fn riemann(&self) -> Rank4 {
        let gm = &self.gamma;
        let dgm = &self.dgamma;
        let mut up = [[[[0.0; 3]; 3]; 3]; 3];
        for e in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in (c + 1)..3 {
                        let mut s = dgm[c][e][d][b] - dgm[d][e][c][b];
                        for f in 0..3 {
                            s += gm[e][c][f] * gm[f][d][b] - gm[e][d][f] * gm[f][c][b];
                        }
                        up[e][b][c][d] = s;
                        up[e][b][d][c] = -s;
                    }
                }
            }
        }
        let mut r = [[[[0.0; 3]; 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        r[a][b][c][d] = self.g[a][0] * up[0][b][c][d]
                            + self.g[a][1] * up[1][b][c][d]
                            + self.g[a][2] * up[2][b][c][d];
                    }
                }
            }
        }
        r
    }

    /// Pointwise `|Rm| = sqrt(R_abcd R^abcd)`.
    pub fn riemann_norm(&self, rm: &Rank4) -> f64 {
        let gi = &self.ginv;
        // Raise one index at a time.
        let mut t = *rm;
        for slot in 0..4 {
            let mut n = [[[[0.0; 3]; 3]; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        for d in 0..3 {
                            let mut s = 0.0;
                            for p in 0..3 {
                                let (idx, w) = match slot {
                                    0 => (t[p][b][c][d], gi[a][p]),
                                    1 => (t[a][p][c][d], gi[b][p]),
                                    2 => (t[a][b][p][d], gi[c][p]),
                                    _ => (t[a][b][c][p], gi[d][p]),
                                };
                                s += w * idx;
                            }
                            n[a][b][c][d] = s;
                        }
                    }
                }
            }
            t = n;
        }
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        s += t[a][b][c][d] * rm[a][b][c][d];
                    }
                }
            }
        }
        s.max(0.0).sqrt()
    }

    /// `g^ab (d_a d_b u - Gamma^c_ab d_c u)`.
    pub fn laplace_beltrami(&self, jet: &Jet<f64>) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let mut v = jet.d2[pair(a, b)];
                for c in 0..3 {
                    v -= self.gamma[c][a][b] * jet.d1[c];
                }
                s += self.ginv[a][b] * v;
            }
        }
        s
    }

    pub fn gradient_norm_sq(&self, d1: &[f64; 3]) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += self.ginv[a][b] * d1[a] * d1[b];
            }
        }
        s
    }

    /// `nabla_c K_ab` for a covariant symmetric tensor.
    pub fn covariant_derivative_lower(&self, k: &Mat3, dk: &[Mat3; 3]) -> [Mat3; 3] {
        let gm = &self.gamma;
        let mut cov = [[[0.0; 3]; 3]; 3];
        for c in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    let mut v = dk[c][a][b];
                    for p in 0..3 {
                        v -= gm[p][c][a] * k[p][b] + gm[p][c][b] * k[a][p];
                    }
                    cov[c][a][b] = v;
                }
            }
        }
        cov
    }

    /// Rough Laplacian `g^dc nabla_d nabla_c K_ab` of a covariant symmetric tensor.
    pub fn rough_laplacian_lower(&self, jet: &Jet<Sym6>) -> Mat3 {
        let gm = &self.gamma;
        let dgm = &self.dgamma;
        let k = tensor::unpack(&jet.value);
        let dk = [
            tensor::unpack(&jet.d1[0]),
            tensor::unpack(&jet.d1[1]),
            tensor::unpack(&jet.d1[2]),
        ];
        let cov = self.covariant_derivative_lower(&k, &dk);
        let mut out = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                let mut s = 0.0;
                for d in 0..3 {
                    for c in 0..3 {
                        let w = self.ginv[d][c];
                        if w == 0.0 {
                            continue;
                        }
                        let mut v = jet.d2[pair(d, c)][pair(a, b)];
                        for p in 0..3 {
                            v -= dgm[d][p][c][a] * k[p][b]
                                + gm[p][c][a] * dk[d][p][b]
                                + dgm[d][p][c][b] * k[a][p]
                                + gm[p][c][b] * dk[d][a][p];
                        }
                        for q in 0..3 {
                            v -= gm[q][d][c] * cov[q][a][b] + gm[q][d][a] * cov[c][q][b] + gm[q][d][b] * cov[c][a][q];
                        }
                        s += w * v;
                    }
                }
                out[a][b] = s;
                out[b][a] = s;
            }
        }
        out
    }

    /// Rough Laplacian of a contravariant symmetric tensor `E^ab`.
    pub fn rough_laplacian_upper(&self, jet: &Jet<Sym6>) -> Mat3 {
        let gm = &self.gamma;
        let dgm = &self.dgamma;
        let e = tensor::unpack(&jet.value);
        let de = [
            tensor::unpack(&jet.d1[0]),
            tensor::unpack(&jet.d1[1]),
            tensor::unpack(&jet.d1[2]),
        ];
        let mut cov = [[[0.0; 3]; 3]; 3];
        for c in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    let mut v = de[c][a][b];
                    for p in 0..3 {
                        v += gm[a][c][p] * e[p][b] + gm[b][c][p] * e[a][p];
                    }
                    cov[c][a][b] = v;
                }
            }
        }
        let mut out = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                let mut s = 0.0;
                for d in 0..3 {
                    for c in 0..3 {
                        let w = self.ginv[d][c];
                        if w == 0.0 {
                            continue;
                        }
                        let mut v = jet.d2[pair(d, c)][pair(a, b)];
                        for p in 0..3 {
                            v += dgm[d][a][c][p] * e[p][b]
                                + gm[a][c][p] * de[d][p][b]
                                + dgm[d][b][c][p] * e[a][p]
                                + gm[b][c][p] * de[d][a][p];
                        }
                        for q in 0..3 {
                            v += -gm[q][d][c] * cov[q][a][b] + gm[a][d][q] * cov[c][q][b] + gm[b][d][q] * cov[c][a][q];
                        }
                        s += w * v;
                    }
                }
                out[a][b] = s;
                out[b][a] = s;
            }
        }
        out
    }

    /// `Delta_L K_ab = rough(K)_ab - R_as K^s_b - R_bs K^s_a + 2 R_asbt K^st`.
    pub fn lichnerowicz_lower(&self, jet: &Jet<Sym6>, ric: &Mat3, rm: &Rank4) -> Mat3 {
        let mut out = self.rough_laplacian_lower(jet);
        let k = tensor::unpack(&jet.value);
        let gi = &self.ginv;
        let mixed = tensor::mul(gi, &k); // K^s_b
        let kup = tensor::mul(&mixed, gi); // K^st
        for a in 0..3 {
            for b in a..3 {
                let mut s = 0.0;
                for p in 0..3 {
                    s -= ric[a][p] * mixed[p][b] + ric[b][p] * mixed[p][a];
                    for q in 0..3 {
                        s += 2.0 * rm[a][p][b][q] * kup[p][q];
                    }
                }
                out[a][b] += s;
                if a != b {
                    out[b][a] += s;
                }
            }
        }
        out
    }

    /// Contravariant form of the Lichnerowicz Laplacian acting on `E^ab`.
    pub fn lichnerowicz_upper(&self, jet: &Jet<Sym6>, ric: &Mat3, rm: &Rank4) -> Mat3 {
        let mut out = self.rough_laplacian_upper(jet);
        let e = tensor::unpack(&jet.value);
        let gi = &self.ginv;
        let ric_mixed = tensor::mul(gi, ric); // R^a_s
                                              // R^a_s^b_t E^st = g^ap g^bq R_psqt E^st
        let mut low = [[0.0; 3]; 3];
        for p in 0..3 {
            for q in p..3 {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s += rm[p][a][q][b] * e[a][b];
                    }
                }
                low[p][q] = s;
                low[q][p] = s;
            }
        }
        let raised = tensor::mul(&tensor::mul(gi, &low), gi);
        for a in 0..3 {
            for b in a..3 {
                let mut s = 2.0 * raised[a][b];
                for p in 0..3 {
                    s -= ric_mixed[a][p] * e[p][b] + ric_mixed[b][p] * e[a][p];
                }
                out[a][b] += s;
                if a != b {
                    out[b][a] += s;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jet_of(value: Sym6) -> Jet<Sym6> {
        Jet {
            value,
            d1: [[0.0; 6]; 3],
            d2: [[0.0; 6]; 6],
        }
    }

    #[test]
    fn constant_metric_is_flat() {
        let loc = Local::new(&jet_of([2.0, 0.1, 0.0, 1.5, 0.2, 1.0]), true).unwrap();
        assert!(loc.gamma.iter().flatten().flatten().all(|&x| x == 0.0));
        let r = loc.ricci();
        assert!(r.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(loc.riemann_norm(&loc.riemann()), 0.0);
    }

    #[test]
    fn indefinite_rejected() {
        assert!(Local::new(&jet_of([1.0, 0.0, 0.0, -1.0, 0.0, 1.0]), false).is_none());
    }

    #[test]
    fn riemann_symmetries_and_trace() {
        // Arbitrary jet of a positive-definite metric.
        let mut jet = jet_of([1.2, 0.1, -0.05, 0.9, 0.07, 1.1]);
        for e in 0..3 {
            for p in 0..6 {
                jet.d1[e][p] = 0.1 * ((e * 7 + p * 3) as f64).sin();
            }
        }
        for q in 0..6 {
            for p in 0..6 {
                jet.d2[q][p] = 0.2 * ((q * 5 + p * 11) as f64).cos();
            }
        }
        let loc = Local::new(&jet, true).unwrap();
        let rm = loc.riemann();
        let ric = loc.ricci();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        assert!((rm[a][b][c][d] + rm[b][a][c][d]).abs() < 1e-12);
                        assert!((rm[a][b][c][d] - rm[c][d][a][b]).abs() < 1e-12);
                    }
                }
                let mut tr = 0.0;
                for s in 0..3 {
                    for t in 0..3 {
                        tr += loc.ginv[s][t] * rm[a][s][b][t];
                    }
                }
                assert!((tr - ric[a][b]).abs() < 1e-12);
            }
        }
        // Metric compatibility: nabla g = 0 exactly on the jet.
        let cov = loc.covariant_derivative_lower(&loc.g, &loc.dg);
        assert!(cov.iter().flatten().flatten().all(|x| x.abs() < 1e-14));
        // Delta_L g = 0.
        let lg = loc.lichnerowicz_lower(&jet, &ric, &rm);
        assert!(lg.iter().flatten().all(|x| x.abs() < 1e-12), "{lg:?}");
    }
}

//! Pointwise 3x3 algebra on packed symmetric components.

use crate::chart::{pair, PAIRS};

pub type Mat3 = [[f64; 3]; 3];
pub type Sym6 = [f64; 6];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
pub const IDENTITY6: Sym6 = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];

pub fn unpack(s: &Sym6) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            m[a][b] = s[pair(a, b)];
        }
    }
    m
}

/// Packs the symmetric part of `m`.
pub fn pack(m: &Mat3) -> Sym6 {
    let mut s = [0.0; 6];
    for (p, &(a, b)) in PAIRS.iter().enumerate() {
        s[p] = 0.5 * (m[a][b] + m[b][a]);
    }
    s
}

pub fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn inverse(m: &Mat3) -> Option<Mat3> {
    let d = det(m);
    if !(d.is_finite() && d.abs() > 0.0) {
        return None;
    }
    let inv_d = 1.0 / d;
    let mut r = [[0.0; 3]; 3];
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_d;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_d;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_d;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_d;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_d;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_d;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_d;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_d;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_d;
    Some(r)
}

pub fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    r
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[j][i];
        }
    }
    r
}

/// `sum_ab a_ab b_ab`.
pub fn contract(a: &Mat3, b: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// Leading principal minors; all positive iff the matrix is positive-definite.
pub fn leading_minors(m: &Mat3) -> [f64; 3] {
    [m[0][0], m[0][0] * m[1][1] - m[0][1] * m[1][0], det(m)]
}

pub fn is_positive_definite(m: &Mat3) -> bool {
    leading_minors(m).iter().all(|&x| x > 0.0 && x.is_finite())
}

/// Lower Cholesky factor of a positive-definite matrix.
pub fn cholesky(m: &Mat3) -> Option<Mat3> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
pub fn symmetric_eigenvalues(m: &Mat3) -> [f64; 3] {
    let mut a = *m;
    for _ in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let scale = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2] + off;
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut r = a;
            for k in 0..3 {
                r[k][p] = c * a[k][p] - s * a[k][q];
                r[k][q] = s * a[k][p] + c * a[k][q];
            }
            let mut r2 = r;
            for k in 0..3 {
                r2[p][k] = c * r[p][k] - s * r[q][k];
                r2[q][k] = s * r[p][k] + c * r[q][k];
            }
            a = r2;
        }
    }
    let mut ev = [a[0][0], a[1][1], a[2][2]];
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Eigenvalues of `a` relative to the positive-definite form `g`, i.e. the
/// eigenvalues of the mixed tensor `g^{-1} a`.
pub fn relative_eigenvalues(a: &Mat3, g: &Mat3) -> Option<[f64; 3]> {
    let l = cholesky(g)?;
    let li = inverse(&l)?;
    let m = mul(&mul(&li, a), &transpose(&li));
    let sym = [
        [m[0][0], 0.5 * (m[0][1] + m[1][0]), 0.5 * (m[0][2] + m[2][0])],
        [0.5 * (m[0][1] + m[1][0]), m[1][1], 0.5 * (m[1][2] + m[2][1])],
        [0.5 * (m[0][2] + m[2][0]), 0.5 * (m[1][2] + m[2][1]), m[2][2]],
    ];
    Some(symmetric_eigenvalues(&sym))
}

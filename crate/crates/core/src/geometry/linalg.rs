//! Small dense helpers for the homography solver.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;

pub(crate) type Mat3 = [[f64; 3]; 3];

pub(crate) fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

pub(crate) fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Adjugate-based inverse. Caller guarantees a non-zero determinant.
pub(crate) fn inv3(m: &Mat3) -> Mat3 {
    let d = det3(m);
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [cof(1, 2, 1, 2) / d, -cof(0, 2, 1, 2) / d, cof(0, 1, 1, 2) / d],
        [-cof(1, 2, 0, 2) / d, cof(0, 2, 0, 2) / d, -cof(0, 1, 0, 2) / d],
        [cof(1, 2, 0, 1) / d, -cof(0, 2, 0, 1) / d, cof(0, 1, 0, 1) / d],
    ]
}

pub(crate) fn frobenius(m: &Mat3) -> f64 {
    sqrt(m.iter().flatten().map(|v| v * v).sum())
}

/// Right singular vectors and singular values of a tall `rows x N` matrix.
pub(crate) struct Svd<const N: usize> {
    /// Singular values, unsorted, index-aligned with `vectors`.
    pub values: [f64; N],
    /// `vectors[j]` is the right singular vector for `values[j]`.
    pub vectors: [[f64; N]; N],
}

impl<const N: usize> Svd<N> {
    /// Indices of singular values in ascending order.
    pub fn ascending(&self) -> [usize; N] {
        let mut idx = [0usize; N];
        for (i, slot) in idx.iter_mut().enumerate() {
            *slot = i;
        }
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        idx
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// `rows` holds the matrix row by row. Column pairs are rotated until they are
/// mutually orthogonal; the accumulated rotations are the right singular
/// vectors and the final column norms are the singular values.
pub(crate) fn jacobi_svd<const N: usize>(rows: &[[f64; N]]) -> Svd<N> {
    const TOL: f64 = 1e-15;
    const MAX_SWEEPS: usize = 80;

    let m = rows.len();
    // Column-major working copy.
    let mut cols: Vec<Vec<f64>> = (0..N).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut v = [[0.0; N]; N];
    for (j, col) in v.iter_mut().enumerate() {
        col[j] = 1.0;
    }
    let mut scratch = vec![0.0; m];

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..N {
            for q in p + 1..N {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for k in 0..m {
                        a += cp[k] * cp[k];
                        b += cq[k] * cq[k];
                        g += cp[k] * cq[k];
                    }
                    (a, b, g)
                };
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= TOL * sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + sqrt(1.0 + zeta * zeta));
                let c = 1.0 / sqrt(1.0 + t * t);
                let s = c * t;

                scratch.copy_from_slice(&cols[p]);
                for k in 0..m {
                    let up = scratch[k];
                    let uq = cols[q][k];
                    cols[p][k] = c * up - s * uq;
                    cols[q][k] = s * up + c * uq;
                }
                let (vp, vq) = (v[p], v[q]);
                for k in 0..N {
                    v[p][k] = c * vp[k] - s * vq[k];
                    v[q][k] = s * vp[k] + c * vq[k];
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut values = [0.0; N];
    for (j, col) in cols.iter().enumerate() {
        values[j] = sqrt(col.iter().map(|x| x * x).sum());
    }
    Svd { values, vectors: v }
}

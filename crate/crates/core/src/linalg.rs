//! Tiny dense helpers for the 2x2 and 3x3 covariance matrices used throughout.

/// Lower-triangular factor `L` with `L Lᵀ = m` for a symmetric positive
/// semidefinite `m`.
///
/// Zero pivots (up to `tol` relative to the diagonal scale) are accepted and
/// produce a zero column, so degenerate covariances (deterministic primitives)
/// still factor. Returns `None` when `m` is not symmetric or has a negative
/// pivot beyond tolerance.
pub fn psd_cholesky<const N: usize>(m: &[[f64; N]; N]) -> Option<[[f64; N]; N]> {
    let scale = (0..N)
        .map(|i| m[i][i].abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let tol = 1e-12 * scale;
    for i in 0..N {
        for j in 0..i {
            if (m[i][j] - m[j][i]).abs() > tol {
                return None;
            }
        }
    }
    let mut l = [[0.0; N]; N];
    for j in 0..N {
        let mut d = m[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if d < -tol {
            return None;
        }
        if d <= tol {
            // Degenerate direction: the remainder of this column must vanish.
            for i in (j + 1)..N {
                let mut s = m[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if s.abs() > 1e-9 * scale {
                    return None;
                }
            }
            continue;
        }
        let pivot = d.sqrt();
        l[j][j] = pivot;
        for i in (j + 1)..N {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / pivot;
        }
    }
    Some(l)
}

/// `y = L x` for lower-triangular `L`.
#[inline]
pub fn lower_mul<const N: usize>(l: &[[f64; N]; N], x: &[f64; N]) -> [f64; N] {
    let mut y = [0.0; N];
    for i in 0..N {
        let mut s = 0.0;
        for k in 0..=i {
            s += l[i][k] * x[k];
        }
        y[i] = s;
    }
    y
}

/// Largest eigenvalue of a symmetric 2x2 matrix.
pub fn max_eigen_2x2(m: &[[f64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0);
    tr / 2.0 + disc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct<const N: usize>(l: &[[f64; N]; N]) -> [[f64; N]; N] {
        let mut m = [[0.0; N]; N];
        for i in 0..N {
            for j in 0..N {
                for k in 0..N {
                    m[i][j] += l[i][k] * l[j][k];
                }
            }
        }
        m
    }

    #[test]
    fn factors_positive_definite() {
        let m = [[1.5, 0.5], [0.5, 2.0]];
        let l = psd_cholesky(&m).unwrap();
        let r = reconstruct(&l);
        for i in 0..2 {
            for j in 0..2 {
                assert!((r[i][j] - m[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn accepts_singular_psd() {
        let m = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 2.0]];
        let l = psd_cholesky(&m).unwrap();
        assert_eq!(l[1][1], 0.0);
        assert!((l[2][2] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(psd_cholesky(&[[1.0, 2.0], [2.0, 1.0]]).is_none());
        assert!(psd_cholesky(&[[1.0, 0.1], [0.2, 1.0]]).is_none());
    }

    #[test]
    fn eigen() {
        let e = max_eigen_2x2(&[[2.0, 0.0], [0.0, 3.0]]);
        assert!((e - 3.0).abs() < 1e-15);
    }
}

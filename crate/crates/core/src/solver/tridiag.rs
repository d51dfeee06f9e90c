//! Direct solver for cyclic tridiagonal systems.
//!
//! Row `i` of the system reads
//! `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]` with indices taken
//! modulo `N`, so `sub[0]` and `sup[N-1]` are the periodic corner entries.
//! The corners are removed with a rank-one Sherman-Morrison correction and
//! the remaining tridiagonal systems are solved by Thomas elimination.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TridiagError {
    #[error("zero pivot in row {row}")]
    ZeroPivot { row: usize },
    #[error("system size mismatch: {0}")]
    Shape(String),
}

/// Thomas elimination for `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1]`,
/// ignoring `sub[0]` and `sup[n-1]`. Solves two right-hand sides at once.
fn thomas2(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs_a: &mut [f64],
    rhs_b: &mut [f64],
) -> Result<(), TridiagError> {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(TridiagError::ZeroPivot { row: 0 });
    }
    c_prime[0] = sup[0] / pivot;
    rhs_a[0] /= pivot;
    rhs_b[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i] * c_prime[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(TridiagError::ZeroPivot { row: i });
        }
        if i < n - 1 {
            c_prime[i] = sup[i] / pivot;
        }
        rhs_a[i] = (rhs_a[i] - sub[i] * rhs_a[i - 1]) / pivot;
        rhs_b[i] = (rhs_b[i] - sub[i] * rhs_b[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs_a[i] -= c_prime[i] * rhs_a[i + 1];
        rhs_b[i] -= c_prime[i] * rhs_b[i + 1];
    }
    Ok(())
}

/// Solves the cyclic tridiagonal system described in the module docs.
pub fn cyclic_tridiagonal_solve(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>, TridiagError> {
    let n = diag.len();
    if sub.len() != n || sup.len() != n || rhs.len() != n {
        return Err(TridiagError::Shape(format!(
            "sub {}, diag {}, sup {}, rhs {}",
            sub.len(),
            n,
            sup.len(),
            rhs.len()
        )));
    }
    if n < 3 {
        return Err(TridiagError::Shape(format!(
            "cyclic systems need at least 3 unknowns, got {n}"
        )));
    }

    let top_right = sub[0];
    let bottom_left = sup[n - 1];
    let gamma = -diag[0];
    if gamma == 0.0 {
        return Err(TridiagError::ZeroPivot { row: 0 });
    }

    let mut reduced = diag.to_vec();
    reduced[0] -= gamma;
    reduced[n - 1] -= bottom_left * top_right / gamma;

    let mut y = rhs.to_vec();
    let mut z = vec![0.0; n];
    z[0] = gamma;
    z[n - 1] = bottom_left;
    thomas2(sub, &reduced, sup, &mut y, &mut z)?;

    let ratio = top_right / gamma;
    let denom = 1.0 + z[0] + ratio * z[n - 1];
    if denom == 0.0 || !denom.is_finite() {
        return Err(TridiagError::ZeroPivot { row: n - 1 });
    }
    let factor = (y[0] + ratio * y[n - 1]) / denom;
    for (yi, zi) in y.iter_mut().zip(&z) {
        *yi -= factor * zi;
    }
    Ok(y)
}

/// `A x` for the cyclic tridiagonal matrix `(sub, diag, sup)`.
pub fn cyclic_tridiagonal_apply(sub: &[f64], diag: &[f64], sup: &[f64], x: &[f64]) -> Vec<f64> {
    let n = diag.len();
    (0..n)
        .map(|i| {
            let prev = x[(i + n - 1) % n];
            let next = x[(i + 1) % n];
            sub[i] * prev + diag[i] * x[i] + sup[i] * next
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                let pivot_row = a[col].clone();
                for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn identity_returns_rhs() {
        let n = 7;
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let x =
            cyclic_tridiagonal_solve(&vec![0.0; n], &vec![1.0; n], &vec![0.0; n], &rhs).unwrap();
        assert_eq!(x, rhs);
    }

    #[test]
    fn periodic_laplacian_keeps_constants() {
        let n = 32;
        let r = 3.7;
        let x = cyclic_tridiagonal_solve(
            &vec![-r; n],
            &vec![1.0 + 2.0 * r; n],
            &vec![-r; n],
            &vec![0.4; n],
        )
        .unwrap();
        assert!(x.iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn random_dominant_system_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 64;
            let sub: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sup: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let diag: Vec<f64> = (0..n)
                .map(|i| {
                    let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    s * (sub[i].abs() + sup[i].abs() + rng.random_range(0.1..2.0))
                })
                .collect();
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();

            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                dense[i][i] = diag[i];
                dense[i][(i + n - 1) % n] += sub[i];
                dense[i][(i + 1) % n] += sup[i];
            }
            let oracle = dense_solve(dense, rhs.clone());
            let x = cyclic_tridiagonal_solve(&sub, &diag, &sup, &rhs).unwrap();
            let diff: Vec<f64> = x.iter().zip(&oracle).map(|(a, b)| a - b).collect();
            assert!(max_abs(&diff) < 1e-12);

            let back = cyclic_tridiagonal_apply(&sub, &diag, &sup, &x);
            let res: Vec<f64> = back.iter().zip(&rhs).map(|(a, b)| a - b).collect();
            assert!(max_abs(&res) < 1e-12 * max_abs(&rhs));
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let n = 4;
        let err =
            cyclic_tridiagonal_solve(&vec![0.0; n], &vec![0.0; n], &vec![0.0; n], &vec![1.0; n]);
        assert!(matches!(err, Err(TridiagError::ZeroPivot { .. })));
    }

    #[test]
    fn shape_errors() {
        assert!(cyclic_tridiagonal_solve(&[0.0; 3], &[1.0; 4], &[0.0; 4], &[1.0; 4]).is_err());
        assert!(cyclic_tridiagonal_solve(&[0.0; 2], &[1.0; 2], &[0.0; 2], &[1.0; 2]).is_err());
    }
}

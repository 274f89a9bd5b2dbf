//! One-sided Jacobi singular value decomposition.
//!
//! The working matrix is held column-major and plane rotations are applied
//! from the right until every pair of columns is numerically orthogonal:
//! after convergence the column norms are the singular values, the
//! normalized columns form U, and the accumulated rotations form V.
//! Matrices with more columns than rows are transposed first and U/V
//! swapped on the way out.

use super::{LinalgError, NumericArray};

#[derive(Debug, Clone)]
pub struct SvdOptions {
    /// Convergence: |g_ij| <= tol * sqrt(g_ii * g_jj) for all column pairs.
    pub tol: f64,
    /// Hard cap on full sweeps before giving up.
    pub max_sweeps: usize,
    /// Largest accepted matrix dimension.
    pub dim_cap: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_sweeps: 60, dim_cap: 128 }
    }
}

/// Thin decomposition A = U diag(sigma) V^T.
///
/// U is m x k and V is n x k with orthonormal columns, k = min(m, n);
/// sigma is non-negative and sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: NumericArray,
    pub sigma: Vec<f64>,
    pub v: NumericArray,
}

pub(super) fn decompose(
    a: &NumericArray,
    opts: &SvdOptions,
    compute_uv: bool,
) -> Result<Svd, LinalgError> {
    let (rows, cols) = a.shape();
    if rows.max(cols) > opts.dim_cap {
        return Err(LinalgError::DimensionCap { rows, cols, cap: opts.dim_cap });
    }

    let transposed = rows < cols;
    let (m, n) = if transposed { (cols, rows) } else { (rows, cols) };

    // Working columns of the (possibly transposed) matrix, m >= n.
    let mut col: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            (0..m)
                .map(|i| if transposed { a.get(j, i) } else { a.get(i, j) })
                .collect()
        })
        .collect();

    // V accumulates the right rotations, starting from the identity.
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = false;
    let mut worst_ratio = 0.0_f64;
    for _sweep in 0..opts.max_sweeps {
        let mut norms: Vec<f64> = col.iter().map(|c| dot(c, c)).collect();
        let mut rotated = false;
        worst_ratio = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = norms[i];
                let beta = norms[j];
                let gamma = dot(&col[i], &col[j]);
                let scale = (alpha * beta).sqrt();
                if gamma.abs() <= opts.tol * scale {
                    continue;
                }
                worst_ratio = worst_ratio.max(gamma.abs() / scale);
                rotated = true;

                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    // Asymptotic root; zeta^2 would overflow.
                    0.5 / zeta
                } else {
                    let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;

                rotate_pair(&mut col, i, j, c, s);
                if compute_uv {
                    rotate_pair(&mut v, i, j, c, s);
                }
                // Exact norm updates for the rotated pair.
                norms[i] = c * c * alpha - 2.0 * c * s * gamma + s * s * beta;
                norms[j] = s * s * alpha + 2.0 * c * s * gamma + c * c * beta;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::Convergence {
            sweeps: opts.max_sweeps,
            off_diagonal: worst_ratio,
        });
    }

    let mut sigma: Vec<f64> = col.iter().map(|c| dot(c, c).sqrt().max(0.0)).collect();

    // Stable descending order so repeated values keep column order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).expect("sigma is finite"));
    sigma = order.iter().map(|&j| sigma[j]).collect();

    if !compute_uv {
        return Ok(Svd {
            u: NumericArray::zeros(if transposed { cols } else { rows }, 1),
            sigma,
            v: NumericArray::zeros(if transposed { rows } else { cols }, 1),
        });
    }

    // U columns: normalized working columns; zero-norm columns are replaced
    // by an orthonormal completion so U^T U = I even for rank-deficient input.
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &j in &order {
        let norm = dot(&col[j], &col[j]).sqrt();
        if norm > 0.0 {
            u_cols.push(col[j].iter().map(|x| x / norm).collect());
        } else {
            u_cols.push(orthonormal_completion(&u_cols, m));
        }
    }
    let v_cols: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();

    let u_mat = cols_to_array(&u_cols, m);
    let v_mat = cols_to_array(&v_cols, n);
    let (u_final, v_final) = if transposed { (v_mat, u_mat) } else { (u_mat, v_mat) };
    Ok(Svd { u: u_final, sigma, v: v_final })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(j);
    let ci = &mut head[i];
    let cj = &mut tail[0];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Unit vector of length `m` orthogonal to every column in `existing`,
/// obtained by Gram-Schmidt over the standard basis.
fn orthonormal_completion(existing: &[Vec<f64>], m: usize) -> Vec<f64> {
    for basis in 0..m {
        let mut cand = vec![0.0; m];
        cand[basis] = 1.0;
        for col in existing {
            let proj = dot(&cand, col);
            for (c, e) in cand.iter_mut().zip(col) {
                *c -= proj * e;
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        if norm > 0.5 {
            return cand.iter().map(|x| x / norm).collect();
        }
    }
    unreachable!("fewer than m orthonormal columns always leave a basis direction free");
}

fn cols_to_array(cols: &[Vec<f64>], rows: usize) -> NumericArray {
    let k = cols.len();
    let mut data = vec![0.0; rows * k];
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            data[i * k + j] = x;
        }
    }
    NumericArray::matrix(rows, k, data).expect("factor entries are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_norm, svd};
    use crate::rng::SplitMix64;

    fn random_array(rng: &mut SplitMix64, rows: usize, cols: usize) -> NumericArray {
        let data = (0..rows * cols).map(|_| rng.uniform_in(-100.0, 100.0)).collect();
        NumericArray::matrix(rows, cols, data).unwrap()
    }

    fn reconstruction_residual(a: &NumericArray, svd: &Svd) -> f64 {
        let (m, n) = a.shape();
        let k = svd.sigma.len();
        let mut sq = 0.0;
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += svd.u.get(i, l) * svd.sigma[l] * svd.v.get(j, l);
                }
                let d = acc - a.get(i, j);
                sq += d * d;
            }
        }
        sq.sqrt()
    }

    fn gram_identity_residual(q: &NumericArray) -> f64 {
        let (_, k) = q.shape();
        let mut sq = 0.0;
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                for r in 0..q.rows() {
                    acc += q.get(r, i) * q.get(r, j);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                let d = acc - target;
                sq += d * d;
            }
        }
        sq.sqrt()
    }

    #[test]
    fn reconstruction_and_orthogonality_random_shapes() {
        let mut rng = SplitMix64::new(0xDECAF);
        for &(m, n) in &[(1, 1), (2, 2), (3, 5), (5, 3), (5, 5), (10, 10), (25, 25)] {
            for _ in 0..20 {
                let a = random_array(&mut rng, m, n);
                let d = svd(&a).unwrap();
                let bound = 1e-10 * frobenius_norm(&a).max(1.0);
                assert!(
                    reconstruction_residual(&a, &d) <= bound,
                    "residual above bound for {m}x{n}"
                );
                assert!(gram_identity_residual(&d.u) <= 1e-10);
                assert!(gram_identity_residual(&d.v) <= 1e-10);
            }
        }
    }

    #[test]
    fn spectrum_energy_matches_frobenius() {
        let mut rng = SplitMix64::new(31337);
        for _ in 0..50 {
            let a = random_array(&mut rng, 5, 5);
            let d = svd(&a).unwrap();
            let energy: f64 = d.sigma.iter().map(|s| s * s).sum();
            let f2 = frobenius_norm(&a).powi(2);
            assert!((energy - f2).abs() <= 1e-8 * f2.max(1.0));
        }
    }

    #[test]
    fn scaling_homogeneity() {
        let mut rng = SplitMix64::new(55);
        let a = random_array(&mut rng, 4, 4);
        let c = -3.25;
        let sa = svd(&a).unwrap().sigma;
        let sca = svd(&a.scale(c).unwrap()).unwrap().sigma;
        for (s, sc) in sa.iter().zip(&sca) {
            assert!((sc - c.abs() * s).abs() <= 1e-10 * c.abs() * s.max(1.0));
        }
    }

    #[test]
    fn rank_deficient_still_orthonormal() {
        // Rank-1 matrix: two singular values are exactly zero.
        let a = NumericArray::matrix(3, 3, vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 3.0, 6.0, 9.0])
            .unwrap();
        let d = svd(&a).unwrap();
        assert!(d.sigma[1] < 1e-9);
        assert!(d.sigma[2] < 1e-9);
        assert!(gram_identity_residual(&d.u) <= 1e-9);
        assert!(reconstruction_residual(&a, &d) <= 1e-10 * frobenius_norm(&a));
    }

    #[test]
    fn zero_matrix_decomposes() {
        let a = NumericArray::zeros(4, 3);
        let d = svd(&a).unwrap();
        assert_eq!(d.sigma, vec![0.0, 0.0, 0.0]);
        assert!(gram_identity_residual(&d.u) <= 1e-12);
        assert!(gram_identity_residual(&d.v) <= 1e-12);
    }

    #[test]
    fn sweep_cap_of_one_fails_on_generic_matrix() {
        let mut rng = SplitMix64::new(8);
        let a = random_array(&mut rng, 6, 6);
        let opts = SvdOptions { max_sweeps: 1, ..SvdOptions::default() };
        match decompose(&a, &opts, true) {
            Err(LinalgError::Convergence { sweeps, off_diagonal }) => {
                assert_eq!(sweeps, 1);
                assert!(off_diagonal > 0.0);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }
}

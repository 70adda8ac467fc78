use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dense::{dot, l2_norm, DenseMatrix};
use super::NumericsError;

/// Anything that can act as a linear map and its transpose. Lets the SVD
/// run on sparse operands without densifying them.
pub trait LinearOp {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A * x` for a dense block `x` with `ncols()` rows.
    fn apply(&self, x: &DenseMatrix) -> DenseMatrix;
    /// `A^T * x` for a dense block `x` with `nrows()` rows.
    fn apply_transpose(&self, x: &DenseMatrix) -> DenseMatrix;
}

impl LinearOp for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows()
    }

    fn ncols(&self) -> usize {
        self.cols()
    }

    fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        self.matmul(x)
    }

    fn apply_transpose(&self, x: &DenseMatrix) -> DenseMatrix {
        self.tr_matmul(x)
    }
}

struct Transposed<'a, A: LinearOp>(&'a A);

impl<A: LinearOp> LinearOp for Transposed<'_, A> {
    fn nrows(&self) -> usize {
        self.0.ncols()
    }

    fn ncols(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        self.0.apply_transpose(x)
    }

    fn apply_transpose(&self, x: &DenseMatrix) -> DenseMatrix {
        self.0.apply(x)
    }
}

/// Knobs for [`truncated_svd`]. The defaults are tuned for "accurate and
/// still fast on a few hundred thousand nonzeros", not for huge inputs.
#[derive(Debug, Clone)]
pub struct SvdOptions {
    /// Extra subspace columns beyond `k`.
    pub oversample: usize,
    /// Minimum number of power iterations before convergence is checked.
    pub power_iters: usize,
    /// Relative change in the leading singular values at which the
    /// subspace iteration is considered converged.
    pub tol: f64,
    /// Hard cap on subspace iterations.
    pub max_iter: usize,
    /// Seed for the Gaussian test matrix.
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        SvdOptions {
            oversample: 10,
            power_iters: 4,
            tol: 1e-9,
            max_iter: 500,
            seed: 42,
        }
    }
}

/// Truncated SVD `A ~ U diag(s) V^T` with orthonormal `U`, `V` columns and
/// `s` sorted descending. May hold fewer than the requested `k` triplets
/// when the operand's numerical rank is smaller.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U diag(s) V^T`, mostly useful in tests.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                us.set(i, j, us.get(i, j) * s);
            }
        }
        let mut out = DenseMatrix::zeros(self.u.rows(), self.v.rows());
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out.set(i, j, dot(us.row(i), self.v.row(j)));
            }
        }
        out
    }
}

/// Randomized truncated SVD by Gaussian range finding plus subspace
/// iteration.
///
/// After `power_iters` warm-up rounds the iteration keeps going until the
/// top-k Ritz singular values change by less than `tol` relative to the
/// spectral norm, so flat spectra get the extra rounds they need instead
/// of a fixed iteration count. Signs are fixed so the largest-magnitude
/// entry of every `U` column is positive, which makes runs with the same
/// seed byte-for-byte reproducible.
pub fn truncated_svd<A: LinearOp>(
    a: &A,
    k: usize,
    opts: &SvdOptions,
) -> Result<SvdResult, NumericsError> {
    let (m, n) = (a.nrows(), a.ncols());
    if k == 0 || k > m.min(n) {
        return Err(NumericsError::KOutOfRange {
            k,
            rows: m,
            cols: n,
        });
    }
    // Work on the transpose when the operand is wide so the small Gram
    // matrix is always built along the shorter side.
    if m < n {
        let r = svd_tall(&Transposed(a), k, opts)?;
        let flipped = SvdResult {
            u: r.v,
            singular_values: r.singular_values,
            v: r.u,
        };
        return Ok(canonicalize_signs(flipped));
    }
    svd_tall(a, k, opts)
}

/// [`truncated_svd`] body for operands with at least as many rows as
/// columns.
fn svd_tall<A: LinearOp>(a: &A, k: usize, opts: &SvdOptions) -> Result<SvdResult, NumericsError> {
    let (m, n) = (a.nrows(), a.ncols());
    let l = (k + opts.oversample).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega = DenseMatrix::from_fn(n, l, |_, _| rng.sample(StandardNormal));
    let mut q = orthonormal_columns(&a.apply(&omega));
    if q.cols() == 0 {
        return Err(NumericsError::RankZero);
    }

    // One subspace round: Q <- orth(A * orth(A^T Q)). The Gram matrix of
    // A^T Q doubles as the convergence probe because its eigenvalues are
    // the squared Ritz singular values of the current subspace.
    let mut prev: Option<Vec<f64>> = None;
    let mut residual = f64::INFINITY;
    let mut c = a.apply_transpose(&q);
    for iter in 1..=opts.max_iter {
        let gram = c.tr_matmul(&c);
        let (eigs, _) = jacobi_eigh(&gram);
        let sigmas: Vec<f64> = eigs.iter().map(|e| e.max(0.0).sqrt()).collect();
        let top = sigmas.first().copied().unwrap_or(0.0);
        if let Some(old) = &prev {
            residual = sigmas
                .iter()
                .take(k.min(sigmas.len()))
                .zip(old)
                .map(|(new, old)| (new - old).abs())
                .fold(0.0_f64, f64::max)
                / top.max(f64::MIN_POSITIVE);
            if iter > opts.power_iters && residual <= opts.tol {
                break;
            }
        }
        if iter == opts.max_iter {
            return Err(NumericsError::SvdNonConvergence {
                max_iter: opts.max_iter,
                residual,
            });
        }
        prev = Some(sigmas);
        let z = orthonormal_columns(&c);
        q = orthonormal_columns(&a.apply(&z));
        c = a.apply_transpose(&q);
    }

    // Factor the small matrix B = Q^T A = C^T through the eigebasis of
    // B B^T: U = Q P, sigma = sqrt(eig), V = C P / sigma.
    let gram = c.tr_matmul(&c);
    let (eigs, p) = jacobi_eigh(&gram);
    let sigmas: Vec<f64> = eigs.iter().map(|e| e.max(0.0).sqrt()).collect();
    let top = sigmas.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(NumericsError::RankZero);
    }
    let cutoff = top * 1e-12;
    let keep = sigmas
        .iter()
        .take(k)
        .filter(|s| **s > cutoff)
        .count();
    if keep == 0 {
        return Err(NumericsError::RankZero);
    }

    let qp = q.matmul(&p);
    let cp = c.matmul(&p);
    let mut u = DenseMatrix::zeros(m, keep);
    let mut v = DenseMatrix::zeros(n, keep);
    for (j, sigma) in sigmas.iter().take(keep).enumerate() {
        for i in 0..m {
            u.set(i, j, qp.get(i, j));
        }
        for i in 0..n {
            v.set(i, j, cp.get(i, j) / sigma);
        }
    }
    Ok(canonicalize_signs(SvdResult {
        u,
        singular_values: sigmas[..keep].to_vec(),
        v,
    }))
}

/// Flips singular vector pairs so the largest-magnitude entry of each `U`
/// column is positive.
fn canonicalize_signs(mut r: SvdResult) -> SvdResult {
    for j in 0..r.u.cols() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for i in 0..r.u.rows() {
            let val = r.u.get(i, j);
            if val.abs() > best {
                best = val.abs();
                sign = if val < 0.0 { -1.0 } else { 1.0 };
            }
        }
        if sign < 0.0 {
            for i in 0..r.u.rows() {
                r.u.set(i, j, -r.u.get(i, j));
            }
            for i in 0..r.v.rows() {
                r.v.set(i, j, -r.v.get(i, j));
            }
        }
    }
    r
}

/// Orthonormal basis of the column span via modified Gram-Schmidt with a
/// second reorthogonalization pass. Columns that collapse under projection
/// are dropped, so the result can be narrower than the input.
pub(crate) fn orthonormal_columns(m: &DenseMatrix) -> DenseMatrix {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(m.cols());
    for j in 0..m.cols() {
        let mut v = m.column(j);
        let original = l2_norm(&v);
        for _pass in 0..2 {
            for q in &kept {
                let coeff = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= coeff * qi;
                }
            }
        }
        let norm = l2_norm(&v);
        if norm > original.max(1.0) * 1e-13 {
            for vi in &mut v {
                *vi /= norm;
            }
            kept.push(v);
        }
    }
    let mut out = DenseMatrix::zeros(m.rows(), kept.len());
    for (j, col) in kept.iter().enumerate() {
        for (i, val) in col.iter().enumerate() {
            out.set(i, j, *val);
        }
    }
    out
}

/// Eigendecomposition of a small symmetric matrix by cyclic Jacobi sweeps.
/// Returns eigenvalues in descending order with matching eigenvector
/// columns.
pub(crate) fn jacobi_eigh(g: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    assert_eq!(g.rows(), g.cols(), "jacobi_eigh needs a square matrix");
    let n = g.rows();
    let mut a = g.clone();
    let mut v = DenseMatrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if (2.0 * off).sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for i in 0..n {
                    let api = a.get(p, i);
                    let aqi = a.get(q, i);
                    a.set(p, i, c * api - s * aqi);
                    a.set(q, i, s * api + c * aqi);
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a.get(y, y).partial_cmp(&a.get(x, x)).unwrap());
    let eigs: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vecs = DenseMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for i in 0..n {
            vecs.set(i, col, v.get(i, src));
        }
    }
    (eigs, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // Diagonal 3,1 conjugated by a rotation of 30 degrees.
        let (c, s) = (0.75_f64.sqrt(), 0.5);
        let g = DenseMatrix::from_rows(&[
            vec![3.0 * c * c + s * s, (3.0 - 1.0) * c * s],
            vec![(3.0 - 1.0) * c * s, 3.0 * s * s + c * c],
        ]);
        let (eigs, vecs) = jacobi_eigh(&g);
        assert!((eigs[0] - 3.0).abs() < 1e-12);
        assert!((eigs[1] - 1.0).abs() < 1e-12);
        // Eigenvector columns stay orthonormal.
        let col0 = vecs.column(0);
        let col1 = vecs.column(1);
        assert!((l2_norm(&col0) - 1.0).abs() < 1e-12);
        assert!(dot(&col0, &col1).abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_drops_dependent_columns() {
        let m = DenseMatrix::from_rows(&[
            vec![1.0, 2.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 2.0, 0.0],
        ]);
        let q = orthonormal_columns(&m);
        assert_eq!(q.cols(), 2);
        let gram = q.tr_matmul(&q);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn svd_of_diagonal_is_exact() {
        let a = DenseMatrix::from_rows(&[
            vec![4.0, 0.0, 0.0],
            vec![0.0, 2.5, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
        ]);
        let r = truncated_svd(&a, 2, &SvdOptions::default()).unwrap();
        assert_eq!(r.rank(), 2);
        assert!((r.singular_values[0] - 4.0).abs() < 1e-10);
        assert!((r.singular_values[1] - 2.5).abs() < 1e-10);
        // Largest-magnitude entry of each U column is positive.
        assert!(r.u.get(0, 0) > 0.99);
        assert!(r.u.get(1, 1) > 0.99);
    }

    #[test]
    fn svd_rejects_k_out_of_range() {
        let a = DenseMatrix::zeros(3, 5);
        assert!(matches!(
            truncated_svd(&a, 4, &SvdOptions::default()),
            Err(NumericsError::KOutOfRange { .. })
        ));
        assert!(matches!(
            truncated_svd(&a, 0, &SvdOptions::default()),
            Err(NumericsError::KOutOfRange { .. })
        ));
    }

    #[test]
    fn svd_reports_rank_zero_for_zero_matrix() {
        let a = DenseMatrix::zeros(4, 3);
        assert!(matches!(
            truncated_svd(&a, 2, &SvdOptions::default()),
            Err(NumericsError::RankZero)
        ));
    }

    #[test]
    fn svd_same_seed_is_bitwise_reproducible() {
        let a = DenseMatrix::from_fn(12, 9, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0);
        let r1 = truncated_svd(&a, 4, &SvdOptions::default()).unwrap();
        let r2 = truncated_svd(&a, 4, &SvdOptions::default()).unwrap();
        assert_eq!(r1.u.data(), r2.u.data());
        assert_eq!(r1.v.data(), r2.v.data());
        assert_eq!(r1.singular_values, r2.singular_values);
    }
}

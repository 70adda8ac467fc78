use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense::{dot, DenseMatrix};
use super::NumericsError;

/// Hyperparameters for [`solve_least_squares_sgd`]. The step size decays
/// as `lr / sqrt(epoch)`.
#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            epochs: 200,
            batch: 64,
            seed: 42,
        }
    }
}

/// A learned linear map from one embedding space to another.
#[derive(Debug, Clone)]
pub struct ProjectionModel {
    /// `target_dim x source_dim` weight matrix.
    pub weights: DenseMatrix,
    pub source_dim: usize,
    pub target_dim: usize,
    /// Mean squared residual per output element on the training set.
    pub fit_mse: f64,
    pub train_size: usize,
}

impl ProjectionModel {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.source_dim, "input width mismatch");
        (0..self.target_dim)
            .map(|r| dot(self.weights.row(r), x))
            .collect()
    }
}

/// Mean squared residual per output element of `W` on `(X, Z)`.
pub fn mean_squared_residual(w: &DenseMatrix, x: &DenseMatrix, z: &DenseMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..x.rows() {
        let xi = x.row(i);
        let zi = z.row(i);
        for (r, target) in zi.iter().enumerate() {
            let diff = dot(w.row(r), xi) - target;
            total += diff * diff;
        }
    }
    total / (x.rows() * z.cols()) as f64
}

/// Fits `W` minimizing `sum_i ||W x_i - z_i||^2` by mini-batch SGD with a
/// `1/sqrt(epoch)` step decay and Xavier-style `1/sqrt(d_in)` uniform
/// initialization.
///
/// Aborts when the full-data loss rises for five consecutive epochs, which
/// in practice means the step size is too large for the problem scale.
pub fn solve_least_squares_sgd(
    x: &DenseMatrix,
    z: &DenseMatrix,
    cfg: &SgdConfig,
) -> Result<ProjectionModel, NumericsError> {
    let n = x.rows();
    let d_in = x.cols();
    let d_out = z.cols();
    if n == 0 || z.rows() != n {
        return Err(NumericsError::ShapeMismatch {
            context: "least-squares inputs need matching, nonzero row counts",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: z.rows(),
            right_cols: z.cols(),
        });
    }
    if !x.is_finite() || !z.is_finite() {
        return Err(NumericsError::NonFinite {
            context: "least-squares input",
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let limit = 1.0 / (d_in as f64).sqrt();
    let mut w = DenseMatrix::from_fn(d_out, d_in, |_, _| rng.random_range(-limit..limit));

    let batch = cfg.batch.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = DenseMatrix::zeros(d_out, d_in);
    let mut residual = vec![0.0; d_out];
    let mut prev_loss = f64::INFINITY;
    let mut rising = 0usize;

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr / (epoch as f64).sqrt();
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(batch) {
            for g in grad.data_mut() {
                *g = 0.0;
            }
            for &i in chunk {
                let xi = x.row(i);
                let zi = z.row(i);
                for r in 0..d_out {
                    residual[r] = dot(w.row(r), xi) - zi[r];
                }
                for (r, res) in residual.iter().enumerate() {
                    let gr = grad.row_mut(r);
                    for (g, xv) in gr.iter_mut().zip(xi) {
                        *g += 2.0 * res * xv;
                    }
                }
            }
            let scale = lr / chunk.len() as f64;
            for (wv, gv) in w.data_mut().iter_mut().zip(grad.data()) {
                *wv -= scale * gv;
            }
        }

        let loss = mean_squared_residual(&w, x, z);
        if !loss.is_finite() {
            return Err(NumericsError::NonFinite {
                context: "least-squares loss",
            });
        }
        if loss > prev_loss {
            rising += 1;
            if rising >= 5 {
                return Err(NumericsError::Divergence { epoch, streak: rising });
            }
        } else {
            rising = 0;
        }
        prev_loss = loss;
    }

    Ok(ProjectionModel {
        fit_mse: mean_squared_residual(&w, x, z),
        weights: w,
        source_dim: d_in,
        target_dim: d_out,
        train_size: n,
    })
}

/// Fisher-Yates shuffle. rand's generic helper lives in a separate trait
/// with its own sampling sequence; doing it by hand keeps the exact RNG
/// call pattern under this crate's control so streams stay stable.
pub(crate) fn shuffle<T>(xs: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}

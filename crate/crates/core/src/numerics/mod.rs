//! Dense matrices and the numeric routines the pipeline is built on:
//! randomized truncated SVD, mini-batch SGD least squares, and rank
//! correlation statistics.

mod dense;
mod lstsq;
mod stats;
mod svd;

pub use dense::DenseMatrix;
pub use lstsq::{mean_squared_residual, solve_least_squares_sgd, ProjectionModel, SgdConfig};
pub(crate) use dense::{dot, l2_norm};
pub(crate) use lstsq::shuffle;
pub use stats::{average_ranks, pearson, spearman};
pub use svd::{truncated_svd, LinearOp, SvdOptions, SvdResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("k = {k} is out of range for a {rows}x{cols} operand")]
    KOutOfRange { k: usize, rows: usize, cols: usize },
    #[error("SVD did not converge within {max_iter} subspace iterations (last residual {residual:.3e})")]
    SvdNonConvergence { max_iter: usize, residual: f64 },
    #[error("operand has no singular value above the numerical-rank cutoff")]
    RankZero,
    #[error("loss increased for {streak} consecutive epochs (epoch {epoch}); lower the learning rate or shrink the batch size")]
    Divergence { epoch: usize, streak: usize },
    #[error("inputs must have equal length of at least {min}, got {left} and {right}")]
    BadLength { left: usize, right: usize, min: usize },
    #[error("rank vector is constant, correlation is undefined")]
    DegenerateRanks,
    #[error("input has zero variance, correlation is undefined")]
    ZeroVariance,
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
    #[error("shape mismatch: {context} (left {left_rows}x{left_cols}, right {right_rows}x{right_cols})")]
    ShapeMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
}

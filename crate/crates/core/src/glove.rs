//! GloVe training on a co-occurrence store with AdaGrad, following the
//! original reference implementation's conventions: uniform init in
//! (-0.5/dim, 0.5/dim), accumulators starting at 1.0, learning-rate-scaled
//! gradients feeding the accumulators, and non-finite updates skipped.
//!
//! The symmetric store is expanded per epoch into directed records: every
//! off-diagonal pair is visited in both directions (back to back, which
//! keeps the loss trajectory exactly invariant under swapping the word and
//! context blocks), diagonal pairs once.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{CooccurrenceStore, Vocabulary};
use crate::embedding::{EmbeddingError, EmbeddingTable};
use crate::numerics::DenseMatrix;

#[derive(Debug, Error)]
pub enum GloveError {
    #[error("invalid parameter: {0}")]
    InvalidParams(&'static str),
    #[error("co-occurrence store is empty")]
    EmptyStore,
    #[error("store references id {id} but the vocabulary has {vocab} rows")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("non-finite loss at epoch {epoch} on pair ({i},{j})")]
    NonFiniteLoss { epoch: usize, i: u32, j: u32 },
    #[error("epoch {epoch} skipped {skipped} of {total} updates (over 0.1%); lower the learning rate")]
    TooManySkips {
        epoch: usize,
        skipped: usize,
        total: usize,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Training hyperparameters. Defaults follow the common published setup:
/// 300 dimensions, x_max 100, alpha 0.75, initial learning rate 0.05,
/// 100 epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveParams {
    pub dim: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for GloveParams {
    fn default() -> Self {
        GloveParams {
            dim: 300,
            x_max: 100.0,
            alpha: 0.75,
            lr: 0.05,
            iterations: 100,
            seed: 42,
        }
    }
}

impl GloveParams {
    pub fn validate(&self) -> Result<(), GloveError> {
        if self.dim < 1 {
            return Err(GloveError::InvalidParams("dim must be at least 1"));
        }
        if self.x_max.is_nan() || self.x_max <= 0.0 {
            return Err(GloveError::InvalidParams("x_max must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(GloveError::InvalidParams("alpha must be in (0, 1]"));
        }
        if self.lr.is_nan() || self.lr < 0.0 {
            return Err(GloveError::InvalidParams("lr must be non-negative"));
        }
        if self.iterations < 1 {
            return Err(GloveError::InvalidParams("iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Worker layout for one training run. `Parallel` trades reproducibility
/// for speed with racy lost-update parameter writes, as in the original
/// multithreaded trainer; tests and anything needing bit-stable output use
/// `Deterministic`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Deterministic,
    Parallel { workers: usize },
}

/// All parameter blocks of a GloVe model, including AdaGrad state.
#[derive(Debug, Clone)]
pub struct GloveModel {
    pub vocab_size: usize,
    pub dim: usize,
    pub w: DenseMatrix,
    pub w_ctx: DenseMatrix,
    pub b: Vec<f64>,
    pub b_ctx: Vec<f64>,
    pub acc_w: DenseMatrix,
    pub acc_w_ctx: DenseMatrix,
    pub acc_b: Vec<f64>,
    pub acc_b_ctx: Vec<f64>,
}

impl GloveModel {
    /// Fresh model with the original init scheme: parameters uniform in
    /// (-0.5/dim, 0.5/dim), accumulators at 1.0. Blocks are drawn in a
    /// fixed order (W, W-context, b, b-context) from one seeded stream.
    pub fn init(vocab_size: usize, params: &GloveParams) -> Self {
        let dim = params.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let half = 0.5 / dim as f64;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-half..half)).collect()
        };
        GloveModel {
            vocab_size,
            dim,
            w: DenseMatrix::from_vec(vocab_size, dim, draw(vocab_size * dim)),
            w_ctx: DenseMatrix::from_vec(vocab_size, dim, draw(vocab_size * dim)),
            b: draw(vocab_size),
            b_ctx: draw(vocab_size),
            acc_w: DenseMatrix::from_vec(vocab_size, dim, vec![1.0; vocab_size * dim]),
            acc_w_ctx: DenseMatrix::from_vec(vocab_size, dim, vec![1.0; vocab_size * dim]),
            acc_b: vec![1.0; vocab_size],
            acc_b_ctx: vec![1.0; vocab_size],
        }
    }

    /// Exchanges the word and context blocks, with their biases and
    /// accumulators.
    pub fn swap_roles(&mut self) {
        std::mem::swap(&mut self.w, &mut self.w_ctx);
        std::mem::swap(&mut self.b, &mut self.b_ctx);
        std::mem::swap(&mut self.acc_w, &mut self.acc_w_ctx);
        std::mem::swap(&mut self.acc_b, &mut self.acc_b_ctx);
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite()
            && self.w_ctx.is_finite()
            && self.b.iter().all(|v| v.is_finite())
            && self.b_ctx.iter().all(|v| v.is_finite())
    }
}

/// Loss and skip accounting for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of `f(x) * diff^2` over the records visited this epoch,
    /// evaluated at visit time.
    pub mean_cost: f64,
    pub skipped_updates: usize,
}

/// GloVe weighting term: `(x/x_max)^alpha` below the cutoff, 1 above.
/// Callers must only pass positive weights (the store never holds zeros).
pub fn weight_fn(x: f64, x_max: f64, alpha: f64) -> f64 {
    assert!(x > 0.0, "weight_fn needs a positive co-occurrence weight");
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

fn validate_store(store: &CooccurrenceStore, vocab_size: usize) -> Result<(), GloveError> {
    if store.is_empty() {
        return Err(GloveError::EmptyStore);
    }
    if let Some(max_id) = store.max_id() {
        if max_id as usize >= vocab_size {
            return Err(GloveError::IdOutOfRange {
                id: max_id,
                vocab: vocab_size,
            });
        }
    }
    Ok(())
}

/// Number of directed records one epoch visits.
fn directed_len(entries: &[(u32, u32, f64)]) -> usize {
    entries
        .iter()
        .map(|&(i, j, _)| if i == j { 1 } else { 2 })
        .sum()
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    // Golden-ratio mix so consecutive epochs get unrelated streams.
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Trains a fresh model. Per epoch the entry list is reshuffled with a
/// seed derived from `params.seed` and the epoch number, then every entry
/// is visited in both directions. Returns the model plus per-epoch stats.
pub fn train(
    store: &CooccurrenceStore,
    vocab: &Vocabulary,
    params: &GloveParams,
    mode: TrainMode,
) -> Result<(GloveModel, Vec<EpochStats>), GloveError> {
    params.validate()?;
    validate_store(store, vocab.len())?;
    let mut model = GloveModel::init(vocab.len(), params);
    let stats = train_in_place(&mut model, store, params, mode)?;
    Ok((model, stats))
}

/// Training loop over an existing model, for callers that need control
/// over initialization.
pub fn train_in_place(
    model: &mut GloveModel,
    store: &CooccurrenceStore,
    params: &GloveParams,
    mode: TrainMode,
) -> Result<Vec<EpochStats>, GloveError> {
    params.validate()?;
    validate_store(store, model.vocab_size)?;
    let mut entries: Vec<(u32, u32, f64)> = store.iter().collect();
    let total_records = directed_len(&entries);
    let max_skips = total_records / 1000;
    let mut stats = Vec::with_capacity(params.iterations);

    for epoch in 1..=params.iterations {
        let mut rng = epoch_rng(params.seed, epoch);
        crate::numerics::shuffle(&mut entries, &mut rng);
        let outcome = match mode {
            TrainMode::Deterministic => epoch_single(model, &entries, params),
            TrainMode::Parallel { workers } => epoch_parallel(model, &entries, params, workers),
        };
        let (cost_sum, skipped) =
            outcome.map_err(|(i, j)| GloveError::NonFiniteLoss { epoch, i, j })?;
        if skipped > max_skips {
            return Err(GloveError::TooManySkips {
                epoch,
                skipped,
                total: total_records,
            });
        }
        stats.push(EpochStats {
            epoch,
            mean_cost: cost_sum / total_records as f64,
            skipped_updates: skipped,
        });
    }
    Ok(stats)
}

/// One AdaGrad update for the directed record `(a, b)` with weight `x`.
/// Mirrors the reference trainer: the learning rate is folded into the
/// gradient before both the step and the accumulator update, and a record
/// whose steps come out non-finite is skipped in full (cost still counts).
///
/// Returns `None` when the cost itself is non-finite, otherwise the cost
/// contribution and whether the update was applied.
#[allow(clippy::too_many_arguments)]
#[inline]
fn update_one(
    w_a: &mut [f64],
    wc_b: &mut [f64],
    b_a: &mut f64,
    bc_b: &mut f64,
    acc_w_a: &mut [f64],
    acc_wc_b: &mut [f64],
    acc_b_a: &mut f64,
    acc_bc_b: &mut f64,
    x: f64,
    params: &GloveParams,
    step_w: &mut [f64],
    step_c: &mut [f64],
) -> Option<(f64, bool)> {
    let dim = w_a.len();
    let mut dot = 0.0;
    for k in 0..dim {
        dot += w_a[k] * wc_b[k];
    }
    // Biases are grouped so the value is invariant under swapping blocks.
    let diff = dot + (*b_a + *bc_b) - x.ln();
    let f = weight_fn(x, params.x_max, params.alpha);
    let cost = f * diff * diff;
    if !cost.is_finite() {
        return None;
    }

    let fdiff = f * diff * params.lr;
    let mut ok = true;
    for k in 0..dim {
        step_w[k] = fdiff * wc_b[k] / acc_w_a[k].sqrt();
        step_c[k] = fdiff * w_a[k] / acc_wc_b[k].sqrt();
        if !step_w[k].is_finite() || !step_c[k].is_finite() {
            ok = false;
        }
    }
    let step_ba = fdiff / acc_b_a.sqrt();
    let step_bb = fdiff / acc_bc_b.sqrt();
    if !step_ba.is_finite() || !step_bb.is_finite() {
        ok = false;
    }
    if !ok {
        return Some((cost, false));
    }

    for k in 0..dim {
        let gw = fdiff * wc_b[k];
        let gc = fdiff * w_a[k];
        w_a[k] -= step_w[k];
        wc_b[k] -= step_c[k];
        acc_w_a[k] += gw * gw;
        acc_wc_b[k] += gc * gc;
    }
    *b_a -= step_ba;
    *bc_b -= step_bb;
    *acc_b_a += fdiff * fdiff;
    *acc_bc_b += fdiff * fdiff;
    Some((cost, true))
}

type EpochOutcome = Result<(f64, usize), (u32, u32)>;

fn epoch_single(
    model: &mut GloveModel,
    entries: &[(u32, u32, f64)],
    params: &GloveParams,
) -> EpochOutcome {
    let mut step_w = vec![0.0; model.dim];
    let mut step_c = vec![0.0; model.dim];
    let mut cost_sum = 0.0;
    let mut skipped = 0usize;

    for &(i, j, x) in entries {
        let mut pair_cost = 0.0;
        let directions: &[(u32, u32)] = if i == j { &[(i, j)] } else { &[(i, j), (j, i)] };
        for &(a, b) in directions {
            let (au, bu) = (a as usize, b as usize);
            // Each argument borrows a different model field, so the
            // borrows are disjoint even when au == bu.
            let result = update_one(
                model.w.row_mut(au),
                model.w_ctx.row_mut(bu),
                &mut model.b[au],
                &mut model.b_ctx[bu],
                model.acc_w.row_mut(au),
                model.acc_w_ctx.row_mut(bu),
                &mut model.acc_b[au],
                &mut model.acc_b_ctx[bu],
                x,
                params,
                &mut step_w,
                &mut step_c,
            );
            match result {
                None => return Err((a, b)),
                Some((cost, applied)) => {
                    pair_cost += cost;
                    if !applied {
                        skipped += 1;
                    }
                }
            }
        }
        // Summed per pair first: addition of the two directions commutes,
        // which the block-swap symmetry relies on.
        cost_sum += pair_cost;
    }
    Ok((cost_sum, skipped))
}

/// f64 parameter block behind relaxed atomics, for hogwild-style epochs.
struct AtomicBlock(Vec<AtomicU64>);

impl AtomicBlock {
    fn from_slice(xs: &[f64]) -> Self {
        AtomicBlock(xs.iter().map(|v| AtomicU64::new(v.to_bits())).collect())
    }

    #[inline]
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn set(&self, i: usize, v: f64) {
        self.0[i].store(v.to_bits(), Ordering::Relaxed);
    }

    fn write_back(&self, xs: &mut [f64]) {
        for (out, cell) in xs.iter_mut().zip(&self.0) {
            *out = f64::from_bits(cell.load(Ordering::Relaxed));
        }
    }
}

/// Racy parallel epoch: workers read, update, and write shared parameters
/// without synchronization, so concurrent writes to the same row can lose
/// updates. That is tolerated by contract; the loads and stores themselves
/// are atomic.
fn epoch_parallel(
    model: &mut GloveModel,
    entries: &[(u32, u32, f64)],
    params: &GloveParams,
    workers: usize,
) -> EpochOutcome {
    let workers = workers.max(1).min(entries.len().max(1));
    if workers == 1 {
        return epoch_single(model, entries, params);
    }
    let dim = model.dim;
    let w = AtomicBlock::from_slice(model.w.data());
    let w_ctx = AtomicBlock::from_slice(model.w_ctx.data());
    let b = AtomicBlock::from_slice(&model.b);
    let b_ctx = AtomicBlock::from_slice(&model.b_ctx);
    let acc_w = AtomicBlock::from_slice(model.acc_w.data());
    let acc_w_ctx = AtomicBlock::from_slice(model.acc_w_ctx.data());
    let acc_b = AtomicBlock::from_slice(&model.acc_b);
    let acc_b_ctx = AtomicBlock::from_slice(&model.acc_b_ctx);
    let skip_count = AtomicUsize::new(0);

    let chunk = entries.len().div_ceil(workers);
    let results: Vec<Result<f64, (u32, u32)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = entries
            .chunks(chunk)
            .map(|slice| {
                let (w, w_ctx, b, b_ctx) = (&w, &w_ctx, &b, &b_ctx);
                let (acc_w, acc_w_ctx, acc_b, acc_b_ctx) =
                    (&acc_w, &acc_w_ctx, &acc_b, &acc_b_ctx);
                let skip_count = &skip_count;
                scope.spawn(move || {
                    let mut w_a = vec![0.0; dim];
                    let mut wc_b = vec![0.0; dim];
                    let mut acc_a = vec![0.0; dim];
                    let mut acc_c = vec![0.0; dim];
                    let mut step_w = vec![0.0; dim];
                    let mut step_c = vec![0.0; dim];
                    let mut cost_sum = 0.0;
                    for &(i, j, x) in slice {
                        let directions: &[(u32, u32)] =
                            if i == j { &[(i, j)] } else { &[(i, j), (j, i)] };
                        for &(a_id, b_id) in directions {
                            let (au, bu) = (a_id as usize, b_id as usize);
                            for k in 0..dim {
                                w_a[k] = w.get(au * dim + k);
                                wc_b[k] = w_ctx.get(bu * dim + k);
                                acc_a[k] = acc_w.get(au * dim + k);
                                acc_c[k] = acc_w_ctx.get(bu * dim + k);
                            }
                            let mut b_a = b.get(au);
                            let mut bc_b = b_ctx.get(bu);
                            let mut acc_b_a = acc_b.get(au);
                            let mut acc_bc_b = acc_b_ctx.get(bu);
                            match update_one(
                                &mut w_a,
                                &mut wc_b,
                                &mut b_a,
                                &mut bc_b,
                                &mut acc_a,
                                &mut acc_c,
                                &mut acc_b_a,
                                &mut acc_bc_b,
                                x,
                                params,
                                &mut step_w,
                                &mut step_c,
                            ) {
                                None => return Err((a_id, b_id)),
                                Some((cost, applied)) => {
                                    cost_sum += cost;
                                    if applied {
                                        for k in 0..dim {
                                            w.set(au * dim + k, w_a[k]);
                                            w_ctx.set(bu * dim + k, wc_b[k]);
                                            acc_w.set(au * dim + k, acc_a[k]);
                                            acc_w_ctx.set(bu * dim + k, acc_c[k]);
                                        }
                                        b.set(au, b_a);
                                        b_ctx.set(bu, bc_b);
                                        acc_b.set(au, acc_b_a);
                                        acc_b_ctx.set(bu, acc_bc_b);
                                    } else {
                                        skip_count.fetch_add(1, Ordering::Relaxed);
                                    }
                                }
                            }
                        }
                    }
                    Ok(cost_sum)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training worker panicked"))
            .collect()
    });

    let mut cost_sum = 0.0;
    for r in results {
        cost_sum += r?;
    }
    w.write_back(model.w.data_mut());
    w_ctx.write_back(model.w_ctx.data_mut());
    b.write_back(&mut model.b);
    b_ctx.write_back(&mut model.b_ctx);
    acc_w.write_back(model.acc_w.data_mut());
    acc_w_ctx.write_back(model.acc_w_ctx.data_mut());
    acc_b.write_back(&mut model.acc_b);
    acc_b_ctx.write_back(&mut model.acc_b_ctx);
    Ok((cost_sum, skip_count.load(Ordering::Relaxed)))
}

fn directed_residual(model: &GloveModel, a: usize, b: usize, x: f64) -> f64 {
    let mut dot = 0.0;
    for k in 0..model.dim {
        dot += model.w.get(a, k) * model.w_ctx.get(b, k);
    }
    dot + (model.b[a] + model.b_ctx[b]) - x.ln()
}

/// Static objective `sum f(x) * diff^2` over all directed nonzeros: each
/// off-diagonal store entry contributes both directions, diagonals one.
pub fn objective(model: &GloveModel, store: &CooccurrenceStore, params: &GloveParams) -> f64 {
    let mut total = 0.0;
    for (i, j, x) in store.iter() {
        let f = weight_fn(x, params.x_max, params.alpha);
        let d = directed_residual(model, i as usize, j as usize, x);
        total += f * d * d;
        if i != j {
            let d = directed_residual(model, j as usize, i as usize, x);
            total += f * d * d;
        }
    }
    total
}

/// Gradients of [`objective`] for every parameter block, for finite
/// difference checks on small models.
#[derive(Debug, Clone)]
pub struct GloveGradients {
    pub w: DenseMatrix,
    pub w_ctx: DenseMatrix,
    pub b: Vec<f64>,
    pub b_ctx: Vec<f64>,
}

pub fn objective_gradient(
    model: &GloveModel,
    store: &CooccurrenceStore,
    params: &GloveParams,
) -> GloveGradients {
    let n = model.vocab_size;
    let dim = model.dim;
    let mut grads = GloveGradients {
        w: DenseMatrix::zeros(n, dim),
        w_ctx: DenseMatrix::zeros(n, dim),
        b: vec![0.0; n],
        b_ctx: vec![0.0; n],
    };
    let mut add_direction = |a: usize, b: usize, x: f64| {
        let f = weight_fn(x, params.x_max, params.alpha);
        let d = directed_residual(model, a, b, x);
        let g = 2.0 * f * d;
        for k in 0..dim {
            grads.w.set(a, k, grads.w.get(a, k) + g * model.w_ctx.get(b, k));
            grads
                .w_ctx
                .set(b, k, grads.w_ctx.get(b, k) + g * model.w.get(a, k));
        }
        grads.b[a] += g;
        grads.b_ctx[b] += g;
    };
    for (i, j, x) in store.iter() {
        add_direction(i as usize, j as usize, x);
        if i != j {
            add_direction(j as usize, i as usize, x);
        }
    }
    grads
}

/// Export selector: `Word` takes the W block; `WordPlusContext` the
/// row-wise sum W + W-context, the original release's default output.
/// Biases are never exported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportMode {
    Word,
    WordPlusContext,
}

pub fn export_vectors(
    model: &GloveModel,
    vocab: &Vocabulary,
    mode: ExportMode,
) -> Result<EmbeddingTable, GloveError> {
    assert_eq!(
        vocab.len(),
        model.vocab_size,
        "vocabulary does not match the trained model"
    );
    let vectors = match mode {
        ExportMode::Word => model.w.clone(),
        ExportMode::WordPlusContext => {
            let mut out = model.w.clone();
            for i in 0..out.rows() {
                let ctx = model.w_ctx.row(i);
                for (o, c) in out.row_mut(i).iter_mut().zip(ctx) {
                    *o += c;
                }
            }
            out
        }
    };
    Ok(EmbeddingTable::new(vocab.clone(), vectors)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, MinCount};

    fn vocab_of(n: usize) -> Vocabulary {
        // n distinct tokens, equal counts, lexicographic ids t00 < t01 ...
        let tokens: Vec<String> = (0..n).map(|i| format!("t{i:02}")).collect();
        build_vocab(tokens, MinCount::Fixed(1)).unwrap()
    }

    #[test]
    fn weight_fn_matches_reference_points() {
        assert_eq!(weight_fn(100.0, 100.0, 0.75), 1.0);
        assert_eq!(weight_fn(200.0, 100.0, 0.75), 1.0);
        // (0.1)^0.75 evaluated independently at high precision.
        assert!((weight_fn(10.0, 100.0, 0.75) - 0.17782794100389226).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "positive co-occurrence weight")]
    fn weight_fn_rejects_nonpositive() {
        weight_fn(0.0, 100.0, 0.75);
    }

    #[test]
    fn empty_store_is_an_error() {
        let v = vocab_of(2);
        let store = CooccurrenceStore::new();
        assert!(matches!(
            train(&store, &v, &GloveParams::default(), TrainMode::Deterministic),
            Err(GloveError::EmptyStore)
        ));
    }

    #[test]
    fn out_of_range_id_is_an_error() {
        let v = vocab_of(2);
        let mut store = CooccurrenceStore::new();
        store.add_weight(0, 5, 1.0);
        assert!(matches!(
            train(&store, &v, &GloveParams::default(), TrainMode::Deterministic),
            Err(GloveError::IdOutOfRange { id: 5, .. })
        ));
    }

    #[test]
    fn single_entry_fits_log_weight() {
        let v = vocab_of(2);
        let mut store = CooccurrenceStore::new();
        store.add_weight(0, 1, std::f64::consts::E);
        let params = GloveParams {
            dim: 1,
            iterations: 600,
            lr: 0.05,
            seed: 9,
            ..GloveParams::default()
        };
        let (model, stats) = train(&store, &v, &params, TrainMode::Deterministic).unwrap();
        let fit = model.w.get(0, 0) * model.w_ctx.get(1, 0) + model.b[0] + model.b_ctx[1];
        assert!(
            (fit - 1.0).abs() < 1e-2,
            "fit {fit} should approach ln(e) = 1"
        );
        assert!(stats.last().unwrap().mean_cost < stats[0].mean_cost);
    }

    #[test]
    fn zero_lr_leaves_parameters_at_init() {
        let v = vocab_of(3);
        let mut store = CooccurrenceStore::new();
        store.add_weight(0, 1, 2.0);
        store.add_weight(1, 2, 1.0);
        let params = GloveParams {
            dim: 4,
            iterations: 3,
            lr: 0.0,
            ..GloveParams::default()
        };
        let reference = GloveModel::init(v.len(), &params);
        let (model, _) = train(&store, &v, &params, TrainMode::Deterministic).unwrap();
        assert_eq!(model.w.data(), reference.w.data());
        assert_eq!(model.w_ctx.data(), reference.w_ctx.data());
        assert_eq!(model.b, reference.b);
        assert_eq!(model.b_ctx, reference.b_ctx);
        assert_eq!(model.acc_w.data(), reference.acc_w.data());
    }

    #[test]
    fn swapping_blocks_preserves_loss_trajectory_exactly() {
        let v = vocab_of(4);
        let mut store = CooccurrenceStore::new();
        store.add_weight(0, 1, 3.0);
        store.add_weight(0, 2, 1.5);
        store.add_weight(1, 3, 0.5);
        store.add_weight(2, 2, 2.0);
        let params = GloveParams {
            dim: 3,
            iterations: 12,
            ..GloveParams::default()
        };
        let mut plain = GloveModel::init(v.len(), &params);
        let mut swapped = plain.clone();
        swapped.swap_roles();
        let stats_plain =
            train_in_place(&mut plain, &store, &params, TrainMode::Deterministic).unwrap();
        let stats_swapped =
            train_in_place(&mut swapped, &store, &params, TrainMode::Deterministic).unwrap();
        for (a, b) in stats_plain.iter().zip(&stats_swapped) {
            assert_eq!(a.mean_cost, b.mean_cost, "epoch {} diverged", a.epoch);
        }
    }

    #[test]
    fn trainer_objective_matches_brute_force() {
        let v = vocab_of(3);
        let mut store = CooccurrenceStore::new();
        store.add_weight(0, 1, 4.0);
        store.add_weight(1, 2, 0.25);
        store.add_weight(0, 0, 1.0);
        let params = GloveParams {
            dim: 2,
            iterations: 5,
            ..GloveParams::default()
        };
        let (model, _) = train(&store, &v, &params, TrainMode::Deterministic).unwrap();

        // Independent evaluation of the loss formula over all directed
        // nonzeros.
        let mut expect = 0.0;
        for (i, j, x) in store.iter() {
            let dirs: Vec<(usize, usize)> = if i == j {
                vec![(i as usize, j as usize)]
            } else {
                vec![(i as usize, j as usize), (j as usize, i as usize)]
            };
            for (a, b) in dirs {
                let mut dot = 0.0;
                for k in 0..params.dim {
                    dot += model.w.get(a, k) * model.w_ctx.get(b, k);
                }
                let d = dot + model.b[a] + model.b_ctx[b] - x.ln();
                let f = weight_fn(x, params.x_max, params.alpha);
                expect += f * d * d;
            }
        }
        let got = objective(&model, &store, &params);
        assert!((got - expect).abs() <= 1e-10 * expect.max(1.0));
    }

    #[test]
    fn export_modes() {
        let v = vocab_of(1);
        let params = GloveParams {
            dim: 2,
            ..GloveParams::default()
        };
        let mut model = GloveModel::init(1, &params);
        model.w = DenseMatrix::from_rows(&[vec![1.0, 2.0]]);
        model.w_ctx = DenseMatrix::from_rows(&[vec![3.0, 4.0]]);
        let word = export_vectors(&model, &v, ExportMode::Word).unwrap();
        assert_eq!(word.row(0), &[1.0, 2.0]);
        let sum = export_vectors(&model, &v, ExportMode::WordPlusContext).unwrap();
        assert_eq!(sum.row(0), &[4.0, 6.0]);
    }

    #[test]
    fn parallel_mode_trains_to_reasonable_loss() {
        let v = vocab_of(6);
        let mut store = CooccurrenceStore::new();
        for i in 0..6u32 {
            for j in i..6u32 {
                store.add_weight(i, j, 1.0 + ((i * 7 + j * 3) % 5) as f64);
            }
        }
        let params = GloveParams {
            dim: 4,
            iterations: 60,
            ..GloveParams::default()
        };
        let (_, stats_det) = train(&store, &v, &params, TrainMode::Deterministic).unwrap();
        let (model_par, stats_par) =
            train(&store, &v, &params, TrainMode::Parallel { workers: 3 }).unwrap();
        assert!(model_par.is_finite());
        let final_det = stats_det.last().unwrap().mean_cost;
        let final_par = stats_par.last().unwrap().mean_cost;
        assert!(
            final_par < final_det * 3.0 + 0.05,
            "parallel loss {final_par} far above deterministic {final_det}"
        );
    }
}

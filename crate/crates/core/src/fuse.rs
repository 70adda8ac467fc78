//! Merging a corpus embedding space with a graph embedding space.
//!
//! The stages, in order: align the two vocabularies by exact string match,
//! rescale the graph table into the corpus table's norm range, stack the
//! aligned rows side by side and reduce them with truncated SVD, then fit
//! a linear projection that carries the full corpus vocabulary into the
//! merged space. The output vocabulary is always exactly the corpus
//! table's vocabulary.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::embedding::{EmbeddingError, EmbeddingTable};
use crate::numerics::{
    l2_norm, solve_least_squares_sgd, truncated_svd, DenseMatrix, NumericsError, ProjectionModel,
    SgdConfig, SvdOptions, SvdResult,
};

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("the {side} table has no rows")]
    EmptyTable { side: &'static str },
    #[error("the two tables share no vocabulary after normalization")]
    NoSharedVocab,
    #[error("mean L2 norm of the {side} rows over the shared vocabulary is zero")]
    ZeroMeanNorm { side: &'static str },
    #[error("k' = {k_prime} is outside 1..={max} (the smaller of shared vocab size and stacked width)")]
    KPrimeOutOfRange { k_prime: usize, max: usize },
    #[error("projection needs at least 2 aligned pairs, got {pairs}")]
    TooFewPairs { pairs: usize },
    #[error("shared token {token:?} is missing from the projection target table")]
    MissingTargetRow { token: String },
    #[error("{context}: expected width {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Token normalization applied before the exact-match alignment. Matching
/// is always case-insensitive; `unify_separators` additionally folds
/// spaces into underscores so multi-word graph terms line up with corpus
/// tokens. `strip_graph_lang_tag` removes a leading `lang/` prefix from
/// graph tokens, for tables built over a language-tagged graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchPolicy {
    pub unify_separators: bool,
    pub strip_graph_lang_tag: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            unify_separators: true,
            strip_graph_lang_tag: false,
        }
    }
}

impl MatchPolicy {
    fn normalize(&self, token: &str) -> String {
        let lower = token.to_lowercase();
        if self.unify_separators {
            lower.replace(' ', "_")
        } else {
            lower
        }
    }

    fn glove_key(&self, token: &str) -> String {
        self.normalize(token)
    }

    fn graph_key(&self, token: &str) -> String {
        let token = if self.strip_graph_lang_tag {
            token.split_once('/').map_or(token, |(_, term)| term)
        } else {
            token
        };
        self.normalize(token)
    }
}

/// One matched token. `token` is the corpus-side surface form, which is
/// what the merged vocabulary uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub glove_id: u32,
    pub graph_id: u32,
    pub token: String,
}

/// The shared vocabulary between the two tables, in ascending corpus row
/// id order, plus the fraction of the corpus vocabulary it covers.
#[derive(Debug, Clone)]
pub struct SharedVocabAlignment {
    pub pairs: Vec<AlignedPair>,
    pub coverage: f64,
}

impl SharedVocabAlignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Intersects the two vocabularies by exact string match after
/// normalization. When several tokens on one side normalize to the same
/// key, the smallest row id wins on each side, so the result does not
/// depend on hash iteration order.
pub fn align_vocab(
    glove: &EmbeddingTable,
    graph: &EmbeddingTable,
    policy: MatchPolicy,
) -> Result<SharedVocabAlignment, FuseError> {
    if glove.is_empty() {
        return Err(FuseError::EmptyTable { side: "glove" });
    }
    if graph.is_empty() {
        return Err(FuseError::EmptyTable { side: "graph" });
    }
    let mut graph_keys: HashMap<String, u32> = HashMap::new();
    for (id, token, _) in graph.vocab().iter() {
        // Ids ascend, so the first insert is the smallest id for the key.
        graph_keys.entry(policy.graph_key(token)).or_insert(id);
    }
    let mut pairs = Vec::new();
    let mut claimed: HashSet<String> = HashSet::new();
    for (id, token, _) in glove.vocab().iter() {
        let key = policy.glove_key(token);
        if let Some(&graph_id) = graph_keys.get(&key) {
            if claimed.insert(key) {
                pairs.push(AlignedPair {
                    glove_id: id,
                    graph_id,
                    token: token.to_string(),
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(FuseError::NoSharedVocab);
    }
    let coverage = pairs.len() as f64 / glove.len() as f64;
    Ok(SharedVocabAlignment { pairs, coverage })
}

/// How the graph table is brought into the corpus table's norm range.
/// The global policy applies one scalar to every row, which leaves all of
/// the graph space's internal geometry untouched; the per-vector policy
/// gives every nonzero row the same norm instead.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPolicy {
    #[default]
    GlobalMeanL2,
    PerVectorL2,
}

/// Rescales the whole graph table so its rows live at the corpus table's
/// scale, with means taken over the aligned pairs only. Returns the new
/// table and the scale factor: the global ratio under `GlobalMeanL2`, the
/// common target norm under `PerVectorL2`.
pub fn normalize_graph_to_glove(
    graph: &EmbeddingTable,
    glove: &EmbeddingTable,
    alignment: &SharedVocabAlignment,
    policy: NormPolicy,
) -> Result<(EmbeddingTable, f64), FuseError> {
    if alignment.is_empty() {
        return Err(FuseError::NoSharedVocab);
    }
    let n = alignment.len() as f64;
    let glove_mean = alignment
        .pairs
        .iter()
        .map(|p| l2_norm(glove.row(p.glove_id)))
        .sum::<f64>()
        / n;
    if glove_mean <= 0.0 {
        return Err(FuseError::ZeroMeanNorm { side: "glove" });
    }

    let mut rows = graph.vectors().clone();
    let scale = match policy {
        NormPolicy::GlobalMeanL2 => {
            let graph_mean = alignment
                .pairs
                .iter()
                .map(|p| l2_norm(graph.row(p.graph_id)))
                .sum::<f64>()
                / n;
            if graph_mean <= 0.0 {
                return Err(FuseError::ZeroMeanNorm { side: "graph" });
            }
            let s = glove_mean / graph_mean;
            for v in rows.data_mut() {
                *v *= s;
            }
            s
        }
        NormPolicy::PerVectorL2 => {
            for i in 0..rows.rows() {
                let row = rows.row_mut(i);
                let norm = l2_norm(row);
                if norm > 0.0 {
                    let s = glove_mean / norm;
                    for v in row {
                        *v *= s;
                    }
                }
            }
            glove_mean
        }
    };
    Ok((EmbeddingTable::new(graph.vocab().clone(), rows)?, scale))
}

fn shared_vocab(
    glove: &EmbeddingTable,
    alignment: &SharedVocabAlignment,
) -> Result<Vocabulary, FuseError> {
    let entries: Vec<(String, u64)> = alignment
        .pairs
        .iter()
        .map(|p| (p.token.clone(), glove.vocab().count(p.glove_id)))
        .collect();
    let total = entries.iter().map(|(_, c)| *c).sum();
    Vocabulary::from_ordered_entries(entries, total).map_err(|_| FuseError::NoSharedVocab)
}

/// Stacks `[glove_row ‖ graph_row]` for every shared token and reduces
/// the stacked matrix with truncated SVD. The merged embedding of token
/// `i` is row `i` of `U_k'`, without singular-value weighting. If the
/// stack has numerical rank below `k'`, the output is narrower.
pub fn build_merged_space(
    glove: &EmbeddingTable,
    graph: &EmbeddingTable,
    alignment: &SharedVocabAlignment,
    k_prime: usize,
    opts: &SvdOptions,
) -> Result<(EmbeddingTable, SvdResult), FuseError> {
    if alignment.is_empty() {
        return Err(FuseError::NoSharedVocab);
    }
    let shared = alignment.len();
    let width = glove.dim() + graph.dim();
    let max_k = shared.min(width);
    if k_prime == 0 || k_prime > max_k {
        return Err(FuseError::KPrimeOutOfRange { k_prime, max: max_k });
    }

    let mut stacked = DenseMatrix::zeros(shared, width);
    for (r, pair) in alignment.pairs.iter().enumerate() {
        let row = stacked.row_mut(r);
        row[..glove.dim()].copy_from_slice(glove.row(pair.glove_id));
        row[glove.dim()..].copy_from_slice(graph.row(pair.graph_id));
    }
    let svd = truncated_svd(&stacked, k_prime, opts)?;
    let merged = EmbeddingTable::new(shared_vocab(glove, alignment)?, svd.u.clone())?;
    Ok((merged, svd))
}

/// Rekeys the (normalized) graph rows onto the shared vocabulary, for
/// fitting the projection against the graph space directly instead of
/// the merged one.
pub fn shared_graph_rows(
    graph: &EmbeddingTable,
    glove: &EmbeddingTable,
    alignment: &SharedVocabAlignment,
) -> Result<EmbeddingTable, FuseError> {
    if alignment.is_empty() {
        return Err(FuseError::NoSharedVocab);
    }
    let mut rows = DenseMatrix::zeros(alignment.len(), graph.dim());
    for (r, pair) in alignment.pairs.iter().enumerate() {
        rows.row_mut(r).copy_from_slice(graph.row(pair.graph_id));
    }
    Ok(EmbeddingTable::new(shared_vocab(glove, alignment)?, rows)?)
}

/// Fits the least-squares map from corpus vectors to target vectors over
/// the shared vocabulary. `targets` is keyed by the corpus-side surface
/// token, which is how [`build_merged_space`] and [`shared_graph_rows`]
/// produce their tables.
pub fn learn_projection(
    glove: &EmbeddingTable,
    targets: &EmbeddingTable,
    alignment: &SharedVocabAlignment,
    cfg: &SgdConfig,
) -> Result<ProjectionModel, FuseError> {
    if alignment.len() < 2 {
        return Err(FuseError::TooFewPairs {
            pairs: alignment.len(),
        });
    }
    let mut x = DenseMatrix::zeros(alignment.len(), glove.dim());
    let mut z = DenseMatrix::zeros(alignment.len(), targets.dim());
    for (r, pair) in alignment.pairs.iter().enumerate() {
        x.row_mut(r).copy_from_slice(glove.row(pair.glove_id));
        let target = targets
            .vector(&pair.token)
            .ok_or_else(|| FuseError::MissingTargetRow {
                token: pair.token.clone(),
            })?;
        z.row_mut(r).copy_from_slice(target);
    }
    Ok(solve_least_squares_sgd(&x, &z, cfg)?)
}

/// Which rows the final table takes for tokens that are in the shared
/// vocabulary: their projected image like every other token, or the exact
/// merged-space row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplicePolicy {
    #[default]
    ProjectedEverywhere,
    KeepMergedOnShared,
}

/// Carries the FULL corpus vocabulary into the merged space. Every token
/// keeps its row id, so the output vocabulary is the input vocabulary.
pub fn project_full_vocab(
    glove: &EmbeddingTable,
    model: &ProjectionModel,
    merged_shared: &EmbeddingTable,
    splice: SplicePolicy,
) -> Result<EmbeddingTable, FuseError> {
    if model.source_dim != glove.dim() {
        return Err(FuseError::DimensionMismatch {
            context: "projection input",
            expected: model.source_dim,
            actual: glove.dim(),
        });
    }
    if splice == SplicePolicy::KeepMergedOnShared && merged_shared.dim() != model.target_dim {
        return Err(FuseError::DimensionMismatch {
            context: "spliced merged rows",
            expected: model.target_dim,
            actual: merged_shared.dim(),
        });
    }
    let mut rows = DenseMatrix::zeros(glove.len(), model.target_dim);
    for (id, token, _) in glove.vocab().iter() {
        let spliced = match splice {
            SplicePolicy::KeepMergedOnShared => merged_shared.vector(token),
            SplicePolicy::ProjectedEverywhere => None,
        };
        match spliced {
            Some(merged_row) => rows.row_mut(id as usize).copy_from_slice(merged_row),
            None => rows
                .row_mut(id as usize)
                .copy_from_slice(&model.apply(glove.row(id))),
        }
    }
    Ok(EmbeddingTable::new(glove.vocab().clone(), rows)?)
}

/// Provenance sidecar written next to a fused table: how much vocabulary
/// was shared, how well the projection fits, and the knobs that produced
/// the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseReport {
    pub coverage: f64,
    pub shared_tokens: usize,
    pub fit_mse: f64,
    pub scale: f64,
    pub k_prime: usize,
    pub svd_seed: u64,
    pub sgd_seed: u64,
}

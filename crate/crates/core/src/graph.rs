//! Knowledge-graph ingestion and PPMI-SVD term embeddings.
//!
//! The pipeline here is: parse a TSV assertion dump into weighted term
//! pairs, pool them into a symmetric term-term matrix, re-weight the
//! counts with smoothed positive PMI, and factor the result with
//! truncated SVD into dense rows that the fusion stage can consume.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::embedding::{EmbeddingError, EmbeddingTable};
use crate::numerics::{truncated_svd, DenseMatrix, LinearOp, NumericsError, SvdOptions};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("i/o error reading assertions")]
    Io {
        #[from]
        source: io::Error,
    },
    #[error("{skipped} of {total} records were malformed, which is over the 5% limit; the dump is probably not in the expected five-column layout")]
    TooManySkips { skipped: u64, total: u64 },
    #[error("no assertions to build a matrix from")]
    EmptyGraph,
    #[error("matrix has no positive mass, so marginals are undefined")]
    ZeroMass,
    #[error("context smoothing exponent must be in (0, 1], got {cds}")]
    InvalidCds { cds: f64 },
    #[error("vocabulary has {vocab} terms but the matrix is {matrix}x{matrix}")]
    VocabMatrixMismatch { vocab: usize, matrix: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// A term endpoint: lowercase language tag plus the normalized surface
/// form (lowercased, whitespace replaced by underscores).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GraphTerm {
    pub lang: String,
    pub term: String,
}

/// One weighted edge from the dump. The relation label is carried along
/// for reporting but all relations are pooled when building the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphAssertion {
    pub start: GraphTerm,
    pub end: GraphTerm,
    pub relation: String,
    pub weight: f64,
}

/// Parse result plus the skip accounting needed for diagnostics.
#[derive(Debug)]
pub struct AssertionBatch {
    pub assertions: Vec<GraphAssertion>,
    /// Records dropped as malformed. Records removed by the language
    /// filter are not counted here.
    pub skipped_records: u64,
    pub total_records: u64,
}

/// Reads a five-column assertion dump: edge URI, relation, start URI,
/// end URI, JSON metadata. Term URIs look like `/c/<lang>/<term>` with an
/// optional sense suffix that is stripped. The edge weight comes from the
/// metadata's `weight` field and defaults to 1.0 when absent.
///
/// With a language filter, only assertions whose endpoints BOTH match one
/// of the given tags are kept. Malformed records are skipped and counted;
/// if more than 5% of the stream is malformed the whole parse aborts,
/// since at that point the input is probably not an assertion dump.
pub fn parse_assertions<R: BufRead>(
    reader: R,
    language_filter: Option<&BTreeSet<String>>,
) -> Result<AssertionBatch, GraphError> {
    let mut assertions = Vec::new();
    let mut skipped = 0u64;
    let mut total = 0u64;
    for line in reader.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        total += 1;
        let Some((start, end, relation, weight)) = parse_record(&line) else {
            skipped += 1;
            continue;
        };
        if let Some(langs) = language_filter {
            if !langs.contains(&start.lang) || !langs.contains(&end.lang) {
                continue;
            }
        }
        assertions.push(GraphAssertion {
            start,
            end,
            relation,
            weight,
        });
    }
    // skipped / total > 1/20, kept in integers so the cutoff is exact.
    if skipped * 20 > total {
        return Err(GraphError::TooManySkips { skipped, total });
    }
    Ok(AssertionBatch {
        assertions,
        skipped_records: skipped,
        total_records: total,
    })
}

fn parse_record(line: &str) -> Option<(GraphTerm, GraphTerm, String, f64)> {
    let mut cols = line.split('\t');
    let _edge_uri = cols.next()?;
    let relation = cols.next()?;
    let start = cols.next()?;
    let end = cols.next()?;
    let metadata = cols.next()?;
    if cols.next().is_some() {
        return None;
    }
    let start = parse_concept_uri(start)?;
    let end = parse_concept_uri(end)?;
    let weight = parse_weight(metadata)?;
    Some((start, end, relation.to_string(), weight))
}

fn parse_concept_uri(uri: &str) -> Option<GraphTerm> {
    let mut parts = uri.split('/');
    if !parts.next()?.is_empty() {
        return None;
    }
    if parts.next()? != "c" {
        return None;
    }
    let lang = parts.next()?;
    // Everything after the term segment is a sense suffix and ignored.
    let term = parts.next()?;
    if lang.is_empty() || term.is_empty() {
        return None;
    }
    Some(GraphTerm {
        lang: lang.to_lowercase(),
        term: normalize_term(term),
    })
}

fn normalize_term(raw: &str) -> String {
    raw.to_lowercase()
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

fn parse_weight(metadata: &str) -> Option<f64> {
    let metadata = metadata.trim();
    if metadata.is_empty() {
        return Some(1.0);
    }
    let value: serde_json::Value = serde_json::from_str(metadata).ok()?;
    if !value.is_object() {
        return None;
    }
    match value.get("weight") {
        None => Some(1.0),
        Some(w) => {
            let w = w.as_f64()?;
            (w.is_finite() && w > 0.0).then_some(w)
        }
    }
}

/// How matrix rows are named. `Plain` is for single-language graphs where
/// the bare term should match corpus tokens directly; `LanguageTagged`
/// prefixes `lang/` so homographs from different languages stay distinct
/// when the whole graph is embedded at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermLabeling {
    Plain,
    LanguageTagged,
}

/// Symmetric real matrix stored as canonical `(i <= j)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    n: usize,
    entries: BTreeMap<(u32, u32), f64>,
}

impl SparseSymmetricMatrix {
    pub fn new(n: usize) -> Self {
        SparseSymmetricMatrix {
            n,
            entries: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Accumulates `value` at the unordered cell {i, j}.
    pub fn add(&mut self, i: u32, j: u32, value: f64) {
        assert!(value.is_finite(), "matrix entries must be finite");
        assert!(
            (i as usize) < self.n && (j as usize) < self.n,
            "cell ({i}, {j}) is outside a {n}x{n} matrix",
            n = self.n
        );
        let key = if i <= j { (i, j) } else { (j, i) };
        *self.entries.entry(key).or_insert(0.0) += value;
    }

    pub fn get(&self, i: u32, j: u32) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    /// Stored entries in canonical order as `(i, j, value)` with `i <= j`.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    /// Row sums of the full symmetric matrix; the diagonal counts once.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for (&(i, j), &v) in &self.entries {
            sums[i as usize] += v;
            if i != j {
                sums[j as usize] += v;
            }
        }
        sums
    }

    /// Total mass of the full symmetric matrix (off-diagonal cells count
    /// on both sides).
    pub fn total_mass(&self) -> f64 {
        self.row_sums().iter().sum()
    }

    /// Dense copy, mostly for small-scale checks.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for (&(i, j), &v) in &self.entries {
            m.set(i as usize, j as usize, v);
            m.set(j as usize, i as usize, v);
        }
        m
    }
}

impl LinearOp for SparseSymmetricMatrix {
    fn nrows(&self) -> usize {
        self.n
    }

    fn ncols(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        assert_eq!(x.rows(), self.n, "operand row count must match matrix");
        let mut y = DenseMatrix::zeros(self.n, x.cols());
        for (&(i, j), &v) in &self.entries {
            let (i, j) = (i as usize, j as usize);
            for c in 0..x.cols() {
                y.set(i, c, y.get(i, c) + v * x.get(j, c));
            }
            if i != j {
                for c in 0..x.cols() {
                    y.set(j, c, y.get(j, c) + v * x.get(i, c));
                }
            }
        }
        y
    }

    fn apply_transpose(&self, x: &DenseMatrix) -> DenseMatrix {
        self.apply(x)
    }
}

/// Pools assertions into a term-term matrix. Every edge adds its weight
/// to the unordered cell of its endpoints, so the two directions of a
/// pair accumulate together and self-loops land on the diagonal. No
/// degree pruning happens here: a term seen once is still a row.
///
/// Row ids follow the vocabulary convention (descending endpoint count,
/// lexicographic ties), which keeps output stable across input orderings.
pub fn build_term_matrix(
    assertions: &[GraphAssertion],
    labeling: TermLabeling,
) -> Result<(Vocabulary, SparseSymmetricMatrix), GraphError> {
    if assertions.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let label = |t: &GraphTerm| match labeling {
        TermLabeling::Plain => t.term.clone(),
        TermLabeling::LanguageTagged => format!("{}/{}", t.lang, t.term),
    };
    let mut counts: HashMap<String, u64> = HashMap::new();
    for a in assertions {
        *counts.entry(label(&a.start)).or_insert(0) += 1;
        *counts.entry(label(&a.end)).or_insert(0) += 1;
    }
    let total = 2 * assertions.len() as u64;
    let vocab = Vocabulary::from_counts(counts, 1, total).expect("endpoint labels are unique keys");

    let mut matrix = SparseSymmetricMatrix::new(vocab.len());
    for a in assertions {
        let i = vocab.id(&label(&a.start)).expect("endpoint was counted");
        let j = vocab.id(&label(&a.end)).expect("endpoint was counted");
        matrix.add(i, j, a.weight);
    }
    Ok((vocab, matrix))
}

/// Smoothed positive PMI re-weighting.
///
/// For a stored cell `(i, j)` with `i <= j` the value is
/// `max(0, ln(p(i,j) / (p(i) * p_cds(j))))` where `p(i)` is the plain row
/// marginal and `p_cds(j) = rowsum(j)^cds / sum_k rowsum(k)^cds` is the
/// context marginal raised to the smoothing exponent. The row index takes
/// the word role and the column index the context role; oracle
/// implementations must orient themselves the same way, because smoothing
/// one side only is what makes the formula asymmetric.
///
/// Cells where the PMI clips to zero are dropped from storage, so zeros
/// of the input stay zeros and sparsity never grows.
pub fn ppmi(m: &SparseSymmetricMatrix, cds: f64) -> Result<SparseSymmetricMatrix, GraphError> {
    if !(cds > 0.0 && cds <= 1.0) {
        return Err(GraphError::InvalidCds { cds });
    }
    let rows = m.row_sums();
    let total: f64 = rows.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(GraphError::ZeroMass);
    }
    let smoothed: Vec<f64> = rows.iter().map(|r| r.powf(cds)).collect();
    let smoothed_total: f64 = smoothed.iter().sum();

    let mut out = SparseSymmetricMatrix::new(m.n());
    for (i, j, v) in m.iter() {
        if v <= 0.0 {
            continue;
        }
        let p_pair = v / total;
        let p_word = rows[i as usize] / total;
        let p_context = smoothed[j as usize] / smoothed_total;
        let pmi = (p_pair / (p_word * p_context)).ln();
        if pmi > 0.0 {
            out.add(i, j, pmi);
        }
    }
    Ok(out)
}

/// Whether embedding rows keep the singular values out, halfway in, or
/// fully in. The default leaves them out, matching the convention used
/// for the fused space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaWeight {
    #[default]
    None,
    Sqrt,
    Full,
}

impl SigmaWeight {
    fn scale(self, sigma: f64) -> f64 {
        match self {
            SigmaWeight::None => 1.0,
            SigmaWeight::Sqrt => sigma.sqrt(),
            SigmaWeight::Full => sigma,
        }
    }
}

/// Factors a (PPMI) matrix with truncated SVD and returns `U_k + V_k` as
/// row embeddings, the symmetric word-plus-context combination. Columns
/// are sign-canonicalized by the SVD, which makes the sum well defined.
///
/// If the matrix has numerical rank below `k` the output is narrower
/// than requested; the embedding width is the effective rank.
pub fn factor_ppmi(
    p: &SparseSymmetricMatrix,
    vocab: &Vocabulary,
    k: usize,
    sigma_weight: SigmaWeight,
    opts: &SvdOptions,
) -> Result<EmbeddingTable, GraphError> {
    if vocab.len() != p.n() {
        return Err(GraphError::VocabMatrixMismatch {
            vocab: vocab.len(),
            matrix: p.n(),
        });
    }
    let svd = truncated_svd(p, k, opts)?;
    let rank = svd.rank();
    let mut rows = DenseMatrix::zeros(p.n(), rank);
    for r in 0..p.n() {
        for c in 0..rank {
            let combined = svd.u.get(r, c) + svd.v.get(r, c);
            rows.set(r, c, combined * sigma_weight.scale(svd.singular_values[c]));
        }
    }
    Ok(EmbeddingTable::new(vocab.clone(), rows)?)
}

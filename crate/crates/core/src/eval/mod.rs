//! Downstream evaluation of embedding tables: word-similarity ranking,
//! text classification and premise-hypothesis inference over summed
//! sentence vectors, and the coverage-vs-improvement correlation used
//! to compare runs.

mod data;
mod svm;

pub use data::{load_labeled_dir, load_word_pairs, LabeledTextDataset, TextExample, WordPairDataset};
pub use svm::{
    decision_values, max_kkt_violation, svm_predict, svm_train, BinaryMachine, GammaPolicy,
    SvmConfig, SvmModel,
};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenizerConfig;
use crate::embedding::EmbeddingTable;
use crate::numerics::{dot, l2_norm, pearson, spearman, DenseMatrix, NumericsError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    BadRecord {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("invalid dataset at {path}: {reason}")]
    InvalidDataset { path: String, reason: String },
    #[error("required split {split:?} is missing or empty")]
    MissingSplit { split: &'static str },
    #[error("{split} example {index} has no second text but this task embeds pairs")]
    MissingPairText { split: &'static str, index: usize },
    #[error("only {retained} pairs survived vocabulary filtering; need at least 2")]
    TooFewPairs { retained: usize },
    #[error("need at least 3 records to correlate, got {got}")]
    TooFewRecords { got: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("feature matrix contains non-finite values")]
    NonFiniteFeatures,
    #[error("feature rows ({rows}) and labels ({labels}) disagree or are empty")]
    FeatureShape { rows: usize, labels: usize },
    #[error("feature width {actual} does not match the trained width {expected}")]
    FeatureWidth { expected: usize, actual: usize },
    #[error("invalid parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// What to do with a unit (a sentence or a benchmark word) whose tokens
/// are all out of vocabulary. `Skip` drops it, `ZeroIfAllOov` keeps a
/// zero vector so downstream row counts stay intact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    #[default]
    Skip,
    ZeroIfAllOov,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OovStats {
    pub total_tokens: u64,
    pub oov_tokens: u64,
    /// Units (sentences, or benchmark words) where no token was found.
    pub all_oov_units: u64,
}

/// Sums the table rows of the in-vocabulary tokens. An all-OOV token
/// list returns `None` under `Skip` and a zero vector under
/// `ZeroIfAllOov`; either way the event lands in `stats`.
pub fn embed_sentence<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    policy: OovPolicy,
    stats: &mut OovStats,
) -> Option<Vec<f64>> {
    assert!(!tokens.is_empty(), "cannot embed an empty token list");
    let mut sum = vec![0.0; table.dim()];
    let mut hits = 0usize;
    for token in tokens {
        stats.total_tokens += 1;
        match table.vector(token.as_ref()) {
            Some(row) => {
                hits += 1;
                for (acc, v) in sum.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            None => stats.oov_tokens += 1,
        }
    }
    if hits > 0 {
        return Some(sum);
    }
    stats.all_oov_units += 1;
    match policy {
        OovPolicy::Skip => None,
        OovPolicy::ZeroIfAllOov => Some(sum),
    }
}

/// Concatenates the premise and hypothesis sentence vectors into a
/// single feature row of width `2 * table.dim()`. Skipping either side
/// skips the pair, and a skipped premise short-circuits before the
/// hypothesis tokens are counted.
pub fn embed_pair<S: AsRef<str>>(
    premise: &[S],
    hypothesis: &[S],
    table: &EmbeddingTable,
    policy: OovPolicy,
    stats: &mut OovStats,
) -> Option<Vec<f64>> {
    let mut features = embed_sentence(premise, table, policy, stats)?;
    features.extend(embed_sentence(hypothesis, table, policy, stats)?);
    Some(features)
}

struct WordVector {
    vector: Option<Vec<f64>>,
    fully_covered: bool,
}

/// Resolves one benchmark word against the table: the exact surface
/// first, then its lowercase form, then the lowercase form with spaces
/// joined to underscores (the usual multiword convention), and finally
/// a split into parts on whitespace and underscores with the parts
/// summed like a tiny sentence.
fn lookup_word(table: &EmbeddingTable, word: &str, stats: &mut OovStats) -> WordVector {
    stats.total_tokens += 1;
    let lower = word.to_lowercase();
    let joined: String = lower
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect();
    for key in [word, lower.as_str(), joined.as_str()] {
        if let Some(row) = table.vector(key) {
            return WordVector {
                vector: Some(row.to_vec()),
                fully_covered: true,
            };
        }
    }

    let parts: Vec<&str> = word
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|p| !p.is_empty())
        .collect();
    let mut sum = vec![0.0; table.dim()];
    let mut hits = 0usize;
    if parts.len() > 1 {
        for part in &parts {
            let row = table
                .vector(part)
                .or_else(|| table.vector(&part.to_lowercase()));
            if let Some(row) = row {
                hits += 1;
                for (acc, v) in sum.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
    }
    if hits == 0 {
        stats.oov_tokens += 1;
        stats.all_oov_units += 1;
        WordVector {
            vector: None,
            fully_covered: false,
        }
    } else if hits == parts.len() {
        // Every part resolved, so the word is covered even though its
        // joined surface form is not a vocab entry.
        WordVector {
            vector: Some(sum),
            fully_covered: true,
        }
    } else {
        stats.oov_tokens += 1;
        WordVector {
            vector: Some(sum),
            fully_covered: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub dataset: String,
    pub spearman: f64,
    pub pairs_total: usize,
    pub pairs_retained: usize,
    pub pairs_dropped: usize,
    pub oov: OovStats,
}

/// Scores word pairs by cosine of their table vectors and reports the
/// Spearman correlation against the gold scores. Under `Skip` a pair is
/// dropped when either word is not fully in vocabulary; under
/// `ZeroIfAllOov` a pair survives as long as each word resolved to at
/// least one known part. Pairs involving a zero-norm vector are dropped
/// either way since their cosine is undefined.
pub fn eval_similarity(
    table: &EmbeddingTable,
    ds: &WordPairDataset,
    policy: OovPolicy,
) -> Result<SimilarityReport, EvalError> {
    let mut stats = OovStats::default();
    let mut predicted = Vec::new();
    let mut gold = Vec::new();
    for (w1, w2, score) in &ds.entries {
        let a = lookup_word(table, w1, &mut stats);
        let b = lookup_word(table, w2, &mut stats);
        let keep = match policy {
            OovPolicy::Skip => a.fully_covered && b.fully_covered,
            OovPolicy::ZeroIfAllOov => a.vector.is_some() && b.vector.is_some(),
        };
        if !keep {
            continue;
        }
        let (va, vb) = (a.vector.unwrap(), b.vector.unwrap());
        let (na, nb) = (l2_norm(&va), l2_norm(&vb));
        if na <= 0.0 || nb <= 0.0 {
            continue;
        }
        predicted.push(dot(&va, &vb) / (na * nb));
        gold.push(*score);
    }
    if predicted.len() < 2 {
        return Err(EvalError::TooFewPairs {
            retained: predicted.len(),
        });
    }
    Ok(SimilarityReport {
        dataset: ds.name.clone(),
        spearman: spearman(&predicted, &gold)?,
        pairs_total: ds.entries.len(),
        pairs_retained: predicted.len(),
        pairs_dropped: ds.entries.len() - predicted.len(),
        oov: stats,
    })
}

/// How classes absent from both predictions and gold enter the macro
/// average: as zeros (the default) or not at all.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentClasses {
    #[default]
    ScoreZero,
    Exclude,
}

/// Per-class F1 as `2tp / (2tp + fp + fn)`, with the empty-class 0/0
/// case scored as 0.
pub fn per_class_f1(pred: &[usize], gold: &[usize], n_classes: usize) -> Vec<f64> {
    assert_eq!(pred.len(), gold.len(), "prediction and gold lengths differ");
    assert!(!pred.is_empty(), "need at least one prediction");
    assert!(
        pred.iter().chain(gold).all(|&label| label < n_classes),
        "label id out of range"
    );
    let mut tp = vec![0u64; n_classes];
    let mut fp = vec![0u64; n_classes];
    let mut fneg = vec![0u64; n_classes];
    for (&p, &g) in pred.iter().zip(gold) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[g] += 1;
        }
    }
    (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect()
}

pub fn macro_f1(pred: &[usize], gold: &[usize], n_classes: usize, absent: AbsentClasses) -> f64 {
    let per_class = per_class_f1(pred, gold, n_classes);
    match absent {
        AbsentClasses::ScoreZero => per_class.iter().sum::<f64>() / n_classes as f64,
        AbsentClasses::Exclude => {
            let present: Vec<f64> = (0..n_classes)
                .filter(|c| pred.contains(c) || gold.contains(c))
                .map(|c| per_class[c])
                .collect();
            per_class_mean(&present)
        }
    }
}

fn per_class_mean(values: &[f64]) -> f64 {
    // per_class_f1 rejects empty inputs, so at least one class is
    // always present.
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classify,
    Nli,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskKind,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub accuracy: f64,
    pub label_names: Vec<String>,
    pub train_examples: usize,
    pub test_examples: usize,
    /// Fraction of task token occurrences covered by the table vocab.
    pub token_coverage: f64,
    /// Fraction of distinct task token types covered.
    pub type_coverage: f64,
    pub oov: OovStats,
    pub gamma: f64,
    pub c: f64,
    pub svm_converged: bool,
}

struct Tokenized {
    tokens: Vec<String>,
    tokens2: Option<Vec<String>>,
    label: usize,
}

/// Trains an SVM on summed sentence vectors and scores it on the test
/// split. `Classify` trains on the train split; `Nli` trains on the
/// validation split (these datasets reserve their original training
/// split for systems that can afford it) and embeds each example as a
/// premise-hypothesis concatenation.
///
/// OOV tokens contribute nothing to a sentence vector and an all-OOV
/// sentence becomes a zero row; rows are never dropped, because the
/// test split must be scored in full.
pub fn run_task(
    table: &EmbeddingTable,
    ds: &LabeledTextDataset,
    task: TaskKind,
    cfg: &SvmConfig,
) -> Result<TaskReport, EvalError> {
    let (train, train_split) = match task {
        TaskKind::Classify => (&ds.train, "train"),
        TaskKind::Nli => (&ds.validation, "validation"),
    };
    if train.is_empty() {
        return Err(EvalError::MissingSplit { split: train_split });
    }
    if ds.test.is_empty() {
        return Err(EvalError::MissingSplit { split: "test" });
    }
    let pair_mode = match task {
        TaskKind::Nli => true,
        TaskKind::Classify => train
            .iter()
            .chain(ds.test.iter())
            .any(|e| e.text2.is_some()),
    };

    let tokenizer = TokenizerConfig::default();
    let tokenize_split = |examples: &[TextExample],
                          split: &'static str|
     -> Result<Vec<Tokenized>, EvalError> {
        examples
            .iter()
            .enumerate()
            .map(|(index, example)| {
                let tokens2 = match (&example.text2, pair_mode) {
                    (Some(text2), true) => Some(tokenizer.tokenize(text2)),
                    (None, true) => {
                        return Err(EvalError::MissingPairText {
                            split,
                            index: index + 1,
                        });
                    }
                    _ => None,
                };
                Ok(Tokenized {
                    tokens: tokenizer.tokenize(&example.text),
                    tokens2,
                    label: example.label,
                })
            })
            .collect()
    };
    let train_tok = tokenize_split(train, train_split)?;
    let test_tok = tokenize_split(&ds.test, "test")?;

    let mut stats = OovStats::default();
    let mut embed_unit = |tokens: &[String]| -> Vec<f64> {
        if tokens.is_empty() {
            // The tokenizer can reduce punctuation-only text to nothing.
            stats.all_oov_units += 1;
            return vec![0.0; table.dim()];
        }
        embed_sentence(tokens, table, OovPolicy::ZeroIfAllOov, &mut stats)
            .expect("the zero policy always produces a vector")
    };
    let width = if pair_mode { 2 * table.dim() } else { table.dim() };
    let mut featurize = |split: &[Tokenized]| -> (DenseMatrix, Vec<usize>) {
        let mut x = DenseMatrix::zeros(split.len(), width);
        let mut y = Vec::with_capacity(split.len());
        for (row, unit) in split.iter().enumerate() {
            let first = embed_unit(&unit.tokens);
            x.row_mut(row)[..table.dim()].copy_from_slice(&first);
            if let Some(tokens2) = &unit.tokens2 {
                let second = embed_unit(tokens2);
                x.row_mut(row)[table.dim()..].copy_from_slice(&second);
            }
            y.push(unit.label);
        }
        (x, y)
    };
    let (train_x, train_y) = featurize(&train_tok);
    let (test_x, test_y) = featurize(&test_tok);

    let mut token_total = 0u64;
    let mut token_hits = 0u64;
    let mut types: HashSet<&str> = HashSet::new();
    for unit in train_tok.iter().chain(&test_tok) {
        for token in unit.tokens.iter().chain(unit.tokens2.iter().flatten()) {
            token_total += 1;
            if table.vector(token).is_some() {
                token_hits += 1;
            }
            types.insert(token.as_str());
        }
    }
    let type_hits = types.iter().filter(|t| table.vector(t).is_some()).count();
    let token_coverage = if token_total > 0 {
        token_hits as f64 / token_total as f64
    } else {
        0.0
    };
    let type_coverage = if types.is_empty() {
        0.0
    } else {
        type_hits as f64 / types.len() as f64
    };

    let model = svm_train(&train_x, &train_y, cfg)?;
    let predictions = svm_predict(&model, &test_x)?;
    let correct = predictions
        .iter()
        .zip(&test_y)
        .filter(|(p, g)| p == g)
        .count();
    let n_classes = ds.label_names.len();
    let per_class = per_class_f1(&predictions, &test_y, n_classes);
    Ok(TaskReport {
        task,
        macro_f1: macro_f1(&predictions, &test_y, n_classes, AbsentClasses::ScoreZero),
        per_class_f1: per_class,
        accuracy: correct as f64 / test_y.len() as f64,
        label_names: ds.label_names.clone(),
        train_examples: train_tok.len(),
        test_examples: test_tok.len(),
        token_coverage,
        type_coverage,
        oov: stats,
        gamma: model.gamma,
        c: model.c,
        svm_converged: model.converged(),
    })
}

/// Pearson and Spearman correlation between shared-vocabulary size and
/// a metric improvement, over one record per evaluation run. Both
/// coefficients are computed on the raw counts; any log scaling is a
/// plotting concern and would not change the Spearman side anyway.
pub fn correlate_improvement(records: &[(f64, f64)]) -> Result<(f64, f64), EvalError> {
    if records.len() < 3 {
        return Err(EvalError::TooFewRecords {
            got: records.len(),
        });
    }
    let counts: Vec<f64> = records.iter().map(|r| r.0).collect();
    let improvements: Vec<f64> = records.iter().map(|r| r.1).collect();
    Ok((
        pearson(&counts, &improvements)?,
        spearman(&counts, &improvements)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;

    fn table(tokens: &[&str], rows: Vec<Vec<f64>>) -> EmbeddingTable {
        let entries = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), (tokens.len() - i) as u64))
            .collect();
        let vocab = Vocabulary::from_ordered_entries(entries, tokens.len() as u64).unwrap();
        EmbeddingTable::new(vocab, DenseMatrix::from_rows(&rows)).unwrap()
    }

    #[test]
    fn sentence_vectors_sum_in_vocab_rows() {
        let t = table(&["a", "b"], vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        let mut stats = OovStats::default();
        let v = embed_sentence(&["a", "b"], &t, OovPolicy::Skip, &mut stats).unwrap();
        assert_eq!(v, vec![1.0, 2.0]);
        let v = embed_sentence(&["a", "a"], &t, OovPolicy::Skip, &mut stats).unwrap();
        assert_eq!(v, vec![2.0, 0.0]);
        assert_eq!(stats.oov_tokens, 0);
        assert_eq!(stats.total_tokens, 4);
    }

    #[test]
    fn all_oov_sentences_follow_the_policy() {
        let t = table(&["a"], vec![vec![1.0, 0.0]]);
        let mut stats = OovStats::default();
        assert!(embed_sentence(&["x", "y"], &t, OovPolicy::Skip, &mut stats).is_none());
        assert_eq!(stats.all_oov_units, 1);
        assert_eq!(stats.oov_tokens, 2);
        let v = embed_sentence(&["x"], &t, OovPolicy::ZeroIfAllOov, &mut stats).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
        assert_eq!(stats.all_oov_units, 2);
    }

    #[test]
    fn token_order_does_not_change_the_sum() {
        // Dyadic coordinates make the sums exact in every order.
        let t = table(
            &["a", "b", "c"],
            vec![vec![0.5, 0.25], vec![0.25, 0.5], vec![1.0, 0.125]],
        );
        let mut stats = OovStats::default();
        let forward = embed_sentence(&["a", "b", "c"], &t, OovPolicy::Skip, &mut stats).unwrap();
        let backward = embed_sentence(&["c", "b", "a"], &t, OovPolicy::Skip, &mut stats).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn pair_vectors_concatenate_in_order() {
        let t = table(&["p", "h"], vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        let mut stats = OovStats::default();
        let v = embed_pair(&["p"], &["h"], &t, OovPolicy::Skip, &mut stats).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 2.0]);
        assert_eq!(v.len(), 2 * t.dim());
        let swapped = embed_pair(&["h"], &["p"], &t, OovPolicy::Skip, &mut stats).unwrap();
        assert_eq!(swapped, vec![0.0, 2.0, 1.0, 0.0]);
        assert!(embed_pair(&["x"], &["h"], &t, OovPolicy::Skip, &mut stats).is_none());
    }

    fn ranking_table() -> EmbeddingTable {
        table(
            &["sea", "ocean", "cup", "mug", "north", "south"],
            vec![
                vec![1.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 1.0, 0.1],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, -1.0],
            ],
        )
    }

    fn ranking_pairs() -> WordPairDataset {
        WordPairDataset {
            name: "toy".to_string(),
            entries: vec![
                ("sea".to_string(), "ocean".to_string(), 10.0),
                ("cup".to_string(), "mug".to_string(), 8.0),
                ("sea".to_string(), "cup".to_string(), 2.0),
                ("north".to_string(), "south".to_string(), 1.0),
            ],
        }
    }

    #[test]
    fn a_consistent_table_scores_a_perfect_ranking() {
        let report = eval_similarity(&ranking_table(), &ranking_pairs(), OovPolicy::Skip).unwrap();
        assert_eq!(report.spearman, 1.0);
        assert_eq!(report.pairs_retained, 4);
        assert_eq!(report.pairs_dropped, 0);
    }

    #[test]
    fn similarity_is_invariant_under_global_scaling() {
        let t = ranking_table();
        let mut scaled_rows: Vec<Vec<f64>> = Vec::new();
        for id in 0..t.len() as u32 {
            scaled_rows.push(t.row(id).iter().map(|v| v * 8.0).collect());
        }
        let scaled = table(
            &["sea", "ocean", "cup", "mug", "north", "south"],
            scaled_rows,
        );
        let a = eval_similarity(&t, &ranking_pairs(), OovPolicy::Skip).unwrap();
        let b = eval_similarity(&scaled, &ranking_pairs(), OovPolicy::Skip).unwrap();
        assert_eq!(a.spearman, b.spearman);
    }

    #[test]
    fn constant_predictions_are_a_degenerate_ranking() {
        let t = table(&["a", "b", "c"], vec![vec![1.0], vec![1.0], vec![1.0]]);
        let ds = WordPairDataset {
            name: "flat".to_string(),
            entries: vec![
                ("a".to_string(), "b".to_string(), 3.0),
                ("b".to_string(), "c".to_string(), 2.0),
                ("a".to_string(), "c".to_string(), 1.0),
            ],
        };
        assert!(matches!(
            eval_similarity(&t, &ds, OovPolicy::Skip),
            Err(EvalError::Numerics(NumericsError::DegenerateRanks))
        ));
    }

    #[test]
    fn benchmark_words_fall_back_through_surface_forms() {
        let t = table(
            &["cat", "new_york", "ice", "cream"],
            vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 1.0],
                vec![1.0, -1.0],
            ],
        );
        let mut stats = OovStats::default();
        // Case fold.
        let w = lookup_word(&t, "Cat", &mut stats);
        assert_eq!(w.vector.unwrap(), vec![1.0, 0.0]);
        assert!(w.fully_covered);
        // Space joined to the underscore convention.
        let w = lookup_word(&t, "New York", &mut stats);
        assert_eq!(w.vector.unwrap(), vec![0.0, 1.0]);
        assert!(w.fully_covered);
        // Split into parts and summed.
        let w = lookup_word(&t, "ice cream", &mut stats);
        assert_eq!(w.vector.unwrap(), vec![2.0, 0.0]);
        assert!(w.fully_covered);
        // Partial part coverage is usable but not full.
        let w = lookup_word(&t, "ice age", &mut stats);
        assert_eq!(w.vector.unwrap(), vec![1.0, 1.0]);
        assert!(!w.fully_covered);
        let w = lookup_word(&t, "dog", &mut stats);
        assert!(w.vector.is_none());
        assert_eq!(stats.all_oov_units, 1);
    }

    #[test]
    fn oov_policies_retain_different_pairs() {
        let t = table(
            &["sea", "ocean", "ice", "cup"],
            vec![
                vec![1.0, 0.0],
                vec![1.0, 0.1],
                vec![0.0, 1.0],
                vec![0.3, 1.0],
            ],
        );
        let ds = WordPairDataset {
            name: "mixed".to_string(),
            entries: vec![
                ("sea".to_string(), "ocean".to_string(), 9.0),
                ("ice age".to_string(), "cup".to_string(), 4.0),
                ("sea".to_string(), "cup".to_string(), 1.0),
            ],
        };
        // "ice age" is only half covered: dropped under Skip, kept as
        // the sum of its known parts under the zero policy.
        let strict = eval_similarity(&t, &ds, OovPolicy::Skip).unwrap();
        assert_eq!(strict.pairs_retained, 2);
        let lenient = eval_similarity(&t, &ds, OovPolicy::ZeroIfAllOov).unwrap();
        assert_eq!(lenient.pairs_retained, 3);
    }

    #[test]
    fn too_few_retained_pairs_is_an_error() {
        let t = table(&["a", "b"], vec![vec![1.0], vec![1.0]]);
        let ds = WordPairDataset {
            name: "thin".to_string(),
            entries: vec![
                ("a".to_string(), "b".to_string(), 1.0),
                ("x".to_string(), "y".to_string(), 2.0),
            ],
        };
        assert!(matches!(
            eval_similarity(&t, &ds, OovPolicy::Skip),
            Err(EvalError::TooFewPairs { retained: 1 })
        ));
    }

    #[test]
    fn zero_norm_vectors_cannot_be_ranked() {
        let t = table(
            &["a", "b", "z"],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]],
        );
        let ds = WordPairDataset {
            name: "zero".to_string(),
            entries: vec![
                ("a".to_string(), "b".to_string(), 5.0),
                ("a".to_string(), "z".to_string(), 4.0),
                ("b".to_string(), "z".to_string(), 3.0),
            ],
        };
        assert!(matches!(
            eval_similarity(&t, &ds, OovPolicy::Skip),
            Err(EvalError::TooFewPairs { retained: 1 })
        ));
    }

    #[test]
    fn f1_matches_hand_confusion_matrices() {
        assert_eq!(macro_f1(&[0, 1], &[0, 1], 2, AbsentClasses::ScoreZero), 1.0);
        let per = per_class_f1(&[0, 1, 0, 1], &[0, 0, 1, 1], 2);
        assert_eq!(per, vec![0.5, 0.5]);
        assert_eq!(
            macro_f1(&[0, 1, 0, 1], &[0, 0, 1, 1], 2, AbsentClasses::ScoreZero),
            0.5
        );
    }

    #[test]
    fn absent_classes_score_zero_or_drop_out() {
        let pred = [0, 0, 0];
        let gold = [0, 0, 0];
        assert_eq!(macro_f1(&pred, &gold, 2, AbsentClasses::ScoreZero), 0.5);
        assert_eq!(macro_f1(&pred, &gold, 2, AbsentClasses::Exclude), 1.0);
    }

    fn marker_dataset() -> (EmbeddingTable, LabeledTextDataset) {
        let t = table(
            &["good", "bad", "movie", "plot", "the"],
            vec![
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![0.0, 0.2],
                vec![0.0, -0.2],
                vec![0.1, 0.1],
            ],
        );
        let example = |text: &str, label: usize| TextExample {
            text: text.to_string(),
            text2: None,
            label,
        };
        let ds = LabeledTextDataset {
            label_names: vec!["neg".to_string(), "pos".to_string()],
            train: vec![
                example("the good movie", 1),
                example("good plot", 1),
                example("the good", 1),
                example("the bad movie", 0),
                example("bad plot", 0),
                example("the bad", 0),
            ],
            validation: vec![],
            test: vec![
                example("good movie plot", 1),
                example("the bad plot", 0),
                example("bad movie", 0),
                example("the good plot", 1),
            ],
        };
        (t, ds)
    }

    #[test]
    fn a_marker_word_task_is_learnable() {
        let (t, ds) = marker_dataset();
        let report = run_task(&t, &ds, TaskKind::Classify, &SvmConfig::default()).unwrap();
        assert!(report.macro_f1 >= 0.95, "macro F1 = {}", report.macro_f1);
        assert_eq!(report.accuracy, 1.0);
        assert!(report.svm_converged);
        assert_eq!(report.label_names, vec!["neg", "pos"]);
        assert_eq!(report.train_examples, 6);
        assert_eq!(report.test_examples, 4);
    }

    #[test]
    fn task_coverage_matches_a_brute_force_recount() {
        let (t, mut ds) = marker_dataset();
        ds.train.push(TextExample {
            text: "unseen scenery".to_string(),
            text2: None,
            label: 1,
        });
        let report = run_task(&t, &ds, TaskKind::Classify, &SvmConfig::default()).unwrap();

        let tokenizer = TokenizerConfig::default();
        let mut total = 0usize;
        let mut hits = 0usize;
        let mut types = std::collections::HashSet::new();
        for e in ds.train.iter().chain(&ds.test) {
            for tok in tokenizer.tokenize(&e.text) {
                total += 1;
                if t.vector(&tok).is_some() {
                    hits += 1;
                }
                types.insert(tok);
            }
        }
        let type_hits = types.iter().filter(|tok| t.vector(tok).is_some()).count();
        assert_eq!(report.token_coverage, hits as f64 / total as f64);
        assert_eq!(report.type_coverage, type_hits as f64 / types.len() as f64);
        assert_eq!(report.oov.oov_tokens, (total - hits) as u64);
    }

    #[test]
    fn uninformative_features_fall_to_the_majority_baseline() {
        let (_, ds) = marker_dataset();
        let zeros = table(
            &["good", "bad", "movie", "plot", "the"],
            vec![vec![0.0, 0.0]; 5],
        );
        let report = run_task(&zeros, &ds, TaskKind::Classify, &SvmConfig::default()).unwrap();
        // Constant features force a constant prediction, which scores
        // F1 on one class and zero on the other.
        let constant: Vec<usize> = vec![report.per_class_f1.iter().position(|&f| f > 0.0).unwrap(); 4];
        assert_eq!(
            report.macro_f1,
            macro_f1(&constant, &[1, 0, 0, 1], 2, AbsentClasses::ScoreZero)
        );
    }

    fn nli_dataset() -> (EmbeddingTable, LabeledTextDataset) {
        let t = table(
            &["yes", "no", "thing"],
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]],
        );
        let pair = |text: &str, text2: &str, label: usize| TextExample {
            text: text.to_string(),
            text2: Some(text2.to_string()),
            label,
        };
        let ds = LabeledTextDataset {
            label_names: vec!["contradiction".to_string(), "entailment".to_string()],
            train: vec![],
            validation: vec![
                pair("thing yes", "yes", 1),
                pair("thing yes", "no", 0),
                pair("thing no", "no", 1),
                pair("thing no", "yes", 0),
            ],
            test: vec![pair("yes thing", "yes", 1), pair("no thing", "yes", 0)],
        };
        (t, ds)
    }

    #[test]
    fn nli_trains_on_the_validation_split() {
        let (t, ds) = nli_dataset();
        // No train split at all: fine for nli, fatal for classify.
        let report = run_task(&t, &ds, TaskKind::Nli, &SvmConfig::default()).unwrap();
        assert_eq!(report.train_examples, 4);
        assert_eq!(report.accuracy, 1.0);
        assert!(matches!(
            run_task(&t, &ds, TaskKind::Classify, &SvmConfig::default()),
            Err(EvalError::MissingSplit { split: "train" })
        ));
    }

    #[test]
    fn nli_requires_both_texts() {
        let (t, mut ds) = nli_dataset();
        ds.validation[2].text2 = None;
        assert!(matches!(
            run_task(&t, &ds, TaskKind::Nli, &SvmConfig::default()),
            Err(EvalError::MissingPairText {
                split: "validation",
                index: 3
            })
        ));
    }

    #[test]
    fn label_renaming_does_not_move_the_score() {
        let (t, ds) = marker_dataset();
        let a = run_task(&t, &ds, TaskKind::Classify, &SvmConfig::default()).unwrap();

        // Swap the label names and ids consistently.
        let flip = |examples: &[TextExample]| -> Vec<TextExample> {
            examples
                .iter()
                .map(|e| TextExample {
                    text: e.text.clone(),
                    text2: e.text2.clone(),
                    label: 1 - e.label,
                })
                .collect()
        };
        let flipped = LabeledTextDataset {
            label_names: vec!["pos".to_string(), "zneg".to_string()],
            train: flip(&ds.train),
            validation: vec![],
            test: flip(&ds.test),
        };
        let b = run_task(&t, &flipped, TaskKind::Classify, &SvmConfig::default()).unwrap();
        assert_eq!(a.macro_f1, b.macro_f1);
        assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn correlation_needs_three_spread_records() {
        let linear: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let (p, s) = correlate_improvement(&linear).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert_eq!(s, 1.0);

        let convex: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, (i as f64).powi(3))).collect();
        let (p, s) = correlate_improvement(&convex).unwrap();
        assert!(p < 1.0);
        assert_eq!(s, 1.0);

        assert!(matches!(
            correlate_improvement(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(EvalError::TooFewRecords { got: 2 })
        ));
        assert!(matches!(
            correlate_improvement(&[(1.0, 5.0), (2.0, 5.0), (3.0, 5.0)]),
            Err(EvalError::Numerics(NumericsError::ZeroVariance))
        ));
    }
}

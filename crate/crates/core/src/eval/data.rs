//! Loaders for the two external dataset shapes the evaluators consume:
//! scored word pairs and labeled text (optionally text pairs).
//!
//! Both loaders are deliberately thin. Word-pair files are split on a
//! sniffed delimiter without quote handling, which covers the
//! similarity benchmarks this crate targets; a file with quoted commas
//! inside fields needs preprocessing first.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::EvalError;

/// Scored word pairs, e.g. a semantic-similarity benchmark. Higher gold
/// scores mean more similar.
#[derive(Debug, Clone)]
pub struct WordPairDataset {
    pub name: String,
    pub entries: Vec<(String, String, f64)>,
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad_record(path: &Path, line: usize, reason: impl Into<String>) -> EvalError {
    EvalError::BadRecord {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// Reads a word-pair file: one pair per line, first two fields are the
/// words, the last field is the gold score. The delimiter is sniffed
/// from the first line (tab if present, comma otherwise) and a header
/// line is skipped when its last field does not parse as a number.
pub fn load_word_pairs(path: &Path) -> Result<WordPairDataset, EvalError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pairs".to_string());

    let mut entries = Vec::new();
    let mut delimiter = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let delim = *delimiter.get_or_insert_with(|| if line.contains('\t') { '\t' } else { ',' });
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        if fields.len() < 3 {
            return Err(bad_record(
                path,
                idx + 1,
                format!("expected at least 3 fields, got {}", fields.len()),
            ));
        }
        let last = fields[fields.len() - 1];
        let score = match last.parse::<f64>() {
            Ok(s) => s,
            // A non-numeric trailing field is only acceptable as a header.
            Err(_) if entries.is_empty() && idx == 0 => continue,
            Err(_) => {
                return Err(bad_record(path, idx + 1, format!("bad score {last:?}")));
            }
        };
        if !score.is_finite() {
            return Err(bad_record(path, idx + 1, format!("non-finite score {last:?}")));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(bad_record(path, idx + 1, "empty word field"));
        }
        entries.push((fields[0].to_string(), fields[1].to_string(), score));
    }
    if entries.len() < 2 {
        return Err(EvalError::InvalidDataset {
            path: path.display().to_string(),
            reason: format!("need at least 2 scored pairs, found {}", entries.len()),
        });
    }
    Ok(WordPairDataset { name, entries })
}

/// One labeled example: a text, an optional second text for pair tasks,
/// and a label id indexing into [`LabeledTextDataset::label_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct TextExample {
    pub text: String,
    pub text2: Option<String>,
    pub label: usize,
}

/// A classification or inference dataset with up to three splits. Label
/// ids are positions in `label_names`, which holds the distinct label
/// strings of the whole dataset in sorted order, so ids are stable
/// across splits and across loads.
#[derive(Debug, Clone)]
pub struct LabeledTextDataset {
    pub label_names: Vec<String>,
    pub train: Vec<TextExample>,
    pub validation: Vec<TextExample>,
    pub test: Vec<TextExample>,
}

struct RawExample {
    text: String,
    text2: Option<String>,
    label: String,
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: String,
    #[serde(default)]
    text2: Option<String>,
    label: serde_json::Value,
}

fn parse_tsv_split(path: &Path) -> Result<Vec<RawExample>, EvalError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (text, text2, label) = match fields.as_slice() {
            [text, label] => (*text, None, *label),
            [text, text2, label] => (*text, Some(*text2), *label),
            _ => {
                return Err(bad_record(
                    path,
                    idx + 1,
                    format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
                ));
            }
        };
        if text.is_empty() || text2.is_some_and(str::is_empty) {
            return Err(bad_record(path, idx + 1, "empty text field"));
        }
        if label.is_empty() {
            return Err(bad_record(path, idx + 1, "empty label field"));
        }
        out.push(RawExample {
            text: text.to_string(),
            text2: text2.map(str::to_string),
            label: label.to_string(),
        });
    }
    Ok(out)
}

fn parse_jsonl_split(path: &Path) -> Result<Vec<RawExample>, EvalError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(line)
            .map_err(|e| bad_record(path, idx + 1, e.to_string()))?;
        let label = match &record.label {
            serde_json::Value::String(s) if !s.is_empty() => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(bad_record(path, idx + 1, format!("bad label {other}")));
            }
        };
        if record.text.is_empty() || record.text2.as_deref().is_some_and(str::is_empty) {
            return Err(bad_record(path, idx + 1, "empty text field"));
        }
        out.push(RawExample {
            text: record.text,
            text2: record.text2,
            label,
        });
    }
    Ok(out)
}

fn load_split(dir: &Path, split: &str) -> Result<Option<Vec<RawExample>>, EvalError> {
    // "dev" is the common alias for the validation split on disk.
    let stems: &[&str] = if split == "validation" {
        &["validation", "dev"]
    } else {
        &[split]
    };
    for stem in stems {
        let tsv = dir.join(format!("{stem}.tsv"));
        if tsv.is_file() {
            return parse_tsv_split(&tsv).map(Some);
        }
        let jsonl = dir.join(format!("{stem}.jsonl"));
        if jsonl.is_file() {
            return parse_jsonl_split(&jsonl).map(Some);
        }
    }
    Ok(None)
}

/// Loads a dataset directory holding `train`, `validation` (or `dev`),
/// and `test` splits as `.tsv` (text, optional second text, label name)
/// or `.jsonl` ({"text", "text2"?, "label"}) files. Missing splits load
/// as empty; at least one split file must exist.
pub fn load_labeled_dir(dir: &Path) -> Result<LabeledTextDataset, EvalError> {
    let raw_train = load_split(dir, "train")?;
    let raw_validation = load_split(dir, "validation")?;
    let raw_test = load_split(dir, "test")?;
    if raw_train.is_none() && raw_validation.is_none() && raw_test.is_none() {
        return Err(EvalError::InvalidDataset {
            path: dir.display().to_string(),
            reason: "no train/validation/test split files found".to_string(),
        });
    }

    let raw_train = raw_train.unwrap_or_default();
    let raw_validation = raw_validation.unwrap_or_default();
    let raw_test = raw_test.unwrap_or_default();
    let label_names: Vec<String> = raw_train
        .iter()
        .chain(&raw_validation)
        .chain(&raw_test)
        .map(|r| r.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let resolve = |raw: Vec<RawExample>| -> Vec<TextExample> {
        raw.into_iter()
            .map(|r| TextExample {
                text: r.text,
                text2: r.text2,
                label: label_names
                    .binary_search(&r.label)
                    .expect("label set was built from these records"),
            })
            .collect()
    };
    Ok(LabeledTextDataset {
        train: resolve(raw_train),
        validation: resolve(raw_validation),
        test: resolve(raw_test),
        label_names,
    })
}

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::CorpusError;

/// Minimum-frequency threshold for vocabulary construction. `Auto` applies
/// 5 to corpora above one million tokens and 2 below, so small datasets
/// keep more of their tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinCount {
    Auto,
    Fixed(u64),
}

impl MinCount {
    pub fn resolve(self, total_tokens: u64) -> Result<u64, CorpusError> {
        match self {
            MinCount::Auto => Ok(if total_tokens > 1_000_000 { 5 } else { 2 }),
            MinCount::Fixed(0) => Err(CorpusError::InvalidMinCount),
            MinCount::Fixed(n) => Ok(n),
        }
    }
}

/// Frequency-ordered token table. Row ids are assigned by descending
/// corpus frequency with ties broken lexicographically, so the same corpus
/// always produces the same ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    total_tokens: u64,
}

impl Vocabulary {
    fn build(entries: Vec<(String, u64)>, total_tokens: u64) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (id, (token, count)) in entries.into_iter().enumerate() {
            if index.insert(token.clone(), id as u32).is_some() {
                return Err(CorpusError::BadVocabLine {
                    path: Default::default(),
                    line: id + 1,
                    reason: format!("duplicate token {token:?}"),
                });
            }
            tokens.push(token);
            counts.push(count);
        }
        Ok(Vocabulary {
            tokens,
            counts,
            index,
            total_tokens,
        })
    }

    /// Sorts `counts` into canonical order and assigns row ids.
    pub fn from_counts(
        counts: HashMap<String, u64>,
        min_count: u64,
        total_tokens: u64,
    ) -> Result<Self, CorpusError> {
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        entries.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
        Self::build(entries, total_tokens)
    }

    /// Builds from already-ordered rows, e.g. when loading an embedding
    /// file. The given order is kept as-is and becomes the id assignment.
    pub fn from_ordered_entries(
        entries: Vec<(String, u64)>,
        total_tokens: u64,
    ) -> Result<Self, CorpusError> {
        Self::build(entries, total_tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Rows in id order as `(id, token, count)`.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &str, u64)> {
        self.tokens
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(id, (t, c))| (id as u32, t.as_str(), *c))
    }
}

/// Incremental frequency counter for multi-file corpora. Feed it every
/// token, then [`VocabCounter::finish`] applies the threshold and freezes
/// the canonical ordering.
#[derive(Debug, Default)]
pub struct VocabCounter {
    counts: HashMap<String, u64>,
    total: u64,
}

impl VocabCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_tokens<I: IntoIterator<Item = S>, S: Into<String>>(&mut self, tokens: I) {
        for token in tokens {
            *self.counts.entry(token.into()).or_insert(0) += 1;
            self.total += 1;
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    pub fn merge(&mut self, other: VocabCounter) {
        for (token, count) in other.counts {
            *self.counts.entry(token).or_insert(0) += count;
        }
        self.total += other.total;
    }

    pub fn finish(self, min_count: MinCount) -> Result<Vocabulary, CorpusError> {
        if self.total == 0 {
            return Err(CorpusError::EmptyCorpus);
        }
        let threshold = min_count.resolve(self.total)?;
        Vocabulary::from_counts(self.counts, threshold, self.total)
    }
}

/// One-shot vocabulary construction from a token stream.
pub fn build_vocab<I, S>(tokens: I, min_count: MinCount) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut counter = VocabCounter::new();
    counter.add_tokens(tokens);
    counter.finish(min_count)
}

/// Writes `token<TAB>count` lines in id order.
pub fn write_vocab(vocab: &Vocabulary, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (_, token, count) in vocab.iter() {
        if token.contains('\t') || token.contains('\n') || token.contains('\r') {
            return Err(CorpusError::UnserializableToken {
                token: token.to_string(),
            });
        }
        writeln!(out, "{token}\t{count}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

/// Reads a vocabulary file, enforcing the canonical ordering so a corrupt
/// or hand-reordered file cannot silently shift row ids.
///
/// The file does not carry the original corpus size, so `total_tokens` of
/// the result is the sum of retained counts (a lower bound).
pub fn read_vocab(path: &Path) -> Result<Vocabulary, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let reader = BufReader::new(file);
    let bad = |line: usize, reason: String| CorpusError::BadVocabLine {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut entries: Vec<(String, u64)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (token, count) = line
            .split_once('\t')
            .ok_or_else(|| bad(lineno + 1, "expected token<TAB>count".into()))?;
        let count: u64 = count
            .parse()
            .map_err(|e| bad(lineno + 1, format!("bad count: {e}")))?;
        if let Some((prev_token, prev_count)) = entries.last() {
            let in_order = count < *prev_count || (count == *prev_count && token > prev_token.as_str());
            if !in_order {
                return Err(bad(
                    lineno + 1,
                    "rows out of canonical order (descending count, lexicographic ties)".into(),
                ));
            }
        }
        entries.push((token.to_string(), count));
    }
    if entries.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let total = entries.iter().map(|(_, c)| *c).sum();
    Vocabulary::from_ordered_entries(entries, total)
}

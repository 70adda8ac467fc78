//! Corpus handling: tokenization, vocabulary construction, and windowed
//! co-occurrence counting with harmonic distance weights.
//!
//! Counting follows the original GloVe conventions: a symmetric window,
//! weight `1/d` for a pair at distance `d`, windows that never cross line
//! boundaries, and out-of-vocabulary tokens that occupy positions without
//! contributing counts.

mod cooccur;
mod shards;
mod vocab;

pub use cooccur::{
    count_cooccurrences, count_cooccurrences_parallel, CooccurrenceAccumulator, CooccurrenceStore,
};
pub use shards::{read_shards, write_shards, SHARD_MAGIC, SHARD_VERSION};
pub use vocab::{build_vocab, read_vocab, write_vocab, MinCount, VocabCounter, Vocabulary};

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed-encoding: invalid UTF-8 at byte offset {byte_offset}{}", path_suffix(.path))]
    MalformedEncoding {
        path: Option<PathBuf>,
        byte_offset: u64,
    },
    #[error("empty-corpus: no tokens found")]
    EmptyCorpus,
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error("window {window} exceeds the exact-arithmetic limit for harmonic weights")]
    WindowTooLarge { window: usize },
    #[error("shard count must be at least 1")]
    InvalidShardCount,
    #[error("token {token:?} cannot be serialized (contains a tab or newline)")]
    UnserializableToken { token: String },
    #[error("vocabulary file {path}: line {line}: {reason}")]
    BadVocabLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("shard {path}: bad magic, not a co-occurrence shard")]
    BadMagic { path: PathBuf },
    #[error("shard {path}: unsupported version {version}")]
    BadVersion { path: PathBuf, version: u32 },
    #[error("shard {path}: truncated at {bytes} bytes, payload is not a whole number of 16-byte records")]
    TruncatedShard { path: PathBuf, bytes: u64 },
    #[error("shard {path}: record at byte {offset} has non-positive or non-finite weight")]
    CorruptRecord { path: PathBuf, offset: u64 },
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn path_suffix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" in {}", p.display()),
        None => String::new(),
    }
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Tokenizer scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerScheme {
    /// Split on ASCII/Unicode whitespace runs.
    Whitespace,
    /// Split on Unicode word boundaries and keep only word-like segments,
    /// so "don't stop" yields ["don't", "stop"].
    UnicodeWordBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerConfig {
    pub scheme: TokenizerScheme,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            scheme: TokenizerScheme::UnicodeWordBoundary,
            lowercase: true,
        }
    }
}

impl TokenizerConfig {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let raw: Vec<&str> = match self.scheme {
            TokenizerScheme::Whitespace => text.split_whitespace().collect(),
            TokenizerScheme::UnicodeWordBoundary => text.unicode_words().collect(),
        };
        raw.into_iter()
            .map(|t| {
                if self.lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                }
            })
            .collect()
    }

    /// Tokenizes a raw byte line, rejecting invalid UTF-8 with the offset
    /// of the first bad byte relative to the start of the slice.
    pub fn tokenize_bytes(&self, bytes: &[u8]) -> Result<Vec<String>, CorpusError> {
        match std::str::from_utf8(bytes) {
            Ok(text) => Ok(self.tokenize(text)),
            Err(e) => Err(CorpusError::MalformedEncoding {
                path: None,
                byte_offset: e.valid_up_to() as u64,
            }),
        }
    }
}

/// Opens a corpus file as a line reader, transparently decompressing
/// gzip (sniffed from the magic bytes, not the extension).
pub fn open_text(path: &Path) -> Result<Box<dyn BufRead>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(|e| CorpusError::io(path, e))?;
    if head.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

/// Streams tokenized lines from a corpus file. Byte offsets in encoding
/// errors refer to the decompressed stream.
pub struct CorpusLines {
    path: PathBuf,
    reader: Box<dyn BufRead>,
    tokenizer: TokenizerConfig,
    offset: u64,
    buf: Vec<u8>,
}

impl CorpusLines {
    pub fn open(path: &Path, tokenizer: TokenizerConfig) -> Result<Self, CorpusError> {
        Ok(CorpusLines {
            path: path.to_path_buf(),
            reader: open_text(path)?,
            tokenizer,
            offset: 0,
            buf: Vec::new(),
        })
    }
}

impl Iterator for CorpusLines {
    type Item = Result<Vec<String>, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.buf.clear();
        let read = match self.reader.read_until(b'\n', &mut self.buf) {
            Ok(n) => n,
            Err(e) => return Some(Err(CorpusError::io(&self.path, e))),
        };
        if read == 0 {
            return None;
        }
        let line_start = self.offset;
        self.offset += read as u64;
        let mut line = self.buf.as_slice();
        if line.ends_with(b"\n") {
            line = &line[..line.len() - 1];
        }
        if line.ends_with(b"\r") {
            line = &line[..line.len() - 1];
        }
        Some(self.tokenizer.tokenize_bytes(line).map_err(|e| match e {
            CorpusError::MalformedEncoding { byte_offset, .. } => CorpusError::MalformedEncoding {
                path: Some(self.path.clone()),
                byte_offset: line_start + byte_offset,
            },
            other => other,
        }))
    }
}

//! The embedding container shared by every stage, plus its two on-disk
//! interchange formats.
//!
//! Text format: an optional `<V> <dim>` header line, then one
//! `word v1 .. vdim` line per row, space separated. Values are printed
//! with Rust's shortest-roundtrip float formatting, so reading them back
//! reproduces the exact bits. Binary format: an 8-byte magic, u32 version,
//! u32 precision flag (0 = f32, 1 = f64), u64 row count, u32 dim, the
//! vocabulary block (length-prefixed UTF-8 token + u64 count per row),
//! then the row-major payload. All integers little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::numerics::DenseMatrix;

pub const EMBEDDING_MAGIC: [u8; 8] = *b"EFEMB001";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("row count {rows} does not match vocabulary size {vocab}")]
    RowCountMismatch { rows: usize, vocab: usize },
    #[error("row {row} contains a non-finite value")]
    NonFinite { row: usize },
    #[error("embedding table has no rows")]
    Empty,
    #[error("token {token:?} cannot be written in the text format (contains whitespace)")]
    UnserializableToken { token: String },
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: not an embedding file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported version {version}")]
    BadVersion { path: PathBuf, version: u32 },
    #[error("{path}: unsupported precision flag {flag}")]
    BadPrecision { path: PathBuf, flag: u32 },
    #[error("{path}: file ends mid-structure ({context})")]
    Truncated { path: PathBuf, context: &'static str },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EmbeddingError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Payload precision of the binary format. Text is always written from
/// the in-memory f64 values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// A vocabulary-bound dense embedding matrix. Rows align with vocabulary
/// ids and are guaranteed finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    vectors: DenseMatrix,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, vectors: DenseMatrix) -> Result<Self, EmbeddingError> {
        if vectors.rows() != vocab.len() {
            return Err(EmbeddingError::RowCountMismatch {
                rows: vectors.rows(),
                vocab: vocab.len(),
            });
        }
        for i in 0..vectors.rows() {
            if vectors.row(i).iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { row: i });
            }
        }
        Ok(EmbeddingTable { vocab, vectors })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, id: u32) -> &[f64] {
        self.vectors.row(id as usize)
    }

    /// Vector for a surface token, if present.
    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vocab.id(token).map(|id| self.row(id))
    }

    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }
}

/// Writes the text interchange format, with the `<V> <dim>` header.
pub fn write_text(table: &EmbeddingTable, path: &Path) -> Result<(), EmbeddingError> {
    let file = File::create(path).map_err(|e| EmbeddingError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| EmbeddingError::io(path, e);
    writeln!(out, "{} {}", table.len(), table.dim()).map_err(io)?;
    for (id, token, _) in table.vocab.iter() {
        if token.chars().any(char::is_whitespace) {
            return Err(EmbeddingError::UnserializableToken {
                token: token.to_string(),
            });
        }
        out.write_all(token.as_bytes()).map_err(io)?;
        for v in table.row(id) {
            write!(out, " {v}").map_err(io)?;
        }
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads the text format. The header line is optional: a first line of
/// exactly two integers is taken as `<V> <dim>`, anything else as data.
/// Corpus frequencies are not part of this format, so all counts load
/// as zero.
pub fn read_text(path: &Path) -> Result<EmbeddingTable, EmbeddingError> {
    let file = File::open(path).map_err(|e| EmbeddingError::io(path, e))?;
    let reader = BufReader::new(file);
    let parse_err = |line: usize, reason: String| EmbeddingError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut declared: Option<(usize, usize)> = None;
    let mut dim: Option<usize> = None;
    let mut entries: Vec<(String, u64)> = Vec::new();
    let mut data: Vec<f64> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EmbeddingError::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 0 && fields.len() == 2 {
            if let (Ok(v), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                declared = Some((v, d));
                continue;
            }
        }
        if fields.len() < 2 {
            return Err(parse_err(lineno + 1, "expected a token and values".into()));
        }
        let row_dim = fields.len() - 1;
        match dim {
            None => {
                if let Some((_, d)) = declared {
                    if row_dim != d {
                        return Err(parse_err(
                            lineno + 1,
                            format!("row has {row_dim} values but header declares {d}"),
                        ));
                    }
                }
                dim = Some(row_dim);
            }
            Some(d) if d != row_dim => {
                return Err(parse_err(
                    lineno + 1,
                    format!("row has {row_dim} values, previous rows had {d}"),
                ));
            }
            _ => {}
        }
        entries.push((fields[0].to_string(), 0));
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|e| parse_err(lineno + 1, format!("bad value {f:?}: {e}")))?;
            data.push(v);
        }
    }

    let dim = dim.ok_or(EmbeddingError::Empty)?;
    if let Some((v, _)) = declared {
        if v != entries.len() {
            return Err(parse_err(
                0,
                format!("header declares {v} rows, file has {}", entries.len()),
            ));
        }
    }
    let rows = entries.len();
    let vocab = Vocabulary::from_ordered_entries(entries, 0).map_err(|e| EmbeddingError::Parse {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    EmbeddingTable::new(vocab, DenseMatrix::from_vec(rows, dim, data))
}

/// Writes the binary format at the given payload precision. `F32` is
/// lossy; `F64` round-trips bit for bit.
pub fn write_binary(
    table: &EmbeddingTable,
    path: &Path,
    precision: Precision,
) -> Result<(), EmbeddingError> {
    let file = File::create(path).map_err(|e| EmbeddingError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| EmbeddingError::io(path, e);
    out.write_all(&EMBEDDING_MAGIC).map_err(io)?;
    out.write_all(&EMBEDDING_VERSION.to_le_bytes()).map_err(io)?;
    let flag: u32 = match precision {
        Precision::F32 => 0,
        Precision::F64 => 1,
    };
    out.write_all(&flag.to_le_bytes()).map_err(io)?;
    out.write_all(&(table.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&(table.dim() as u32).to_le_bytes()).map_err(io)?;
    for (_, token, count) in table.vocab.iter() {
        out.write_all(&(token.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(token.as_bytes()).map_err(io)?;
        out.write_all(&count.to_le_bytes()).map_err(io)?;
    }
    for i in 0..table.len() {
        for v in table.row(i as u32) {
            match precision {
                Precision::F32 => out.write_all(&(*v as f32).to_le_bytes()).map_err(io)?,
                Precision::F64 => out.write_all(&v.to_le_bytes()).map_err(io)?,
            }
        }
    }
    out.flush().map_err(io)
}

pub fn read_binary(path: &Path) -> Result<EmbeddingTable, EmbeddingError> {
    let file = File::open(path).map_err(|e| EmbeddingError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let truncated = |context: &'static str| EmbeddingError::Truncated {
        path: path.to_path_buf(),
        context,
    };

    let mut header = [0u8; 8];
    reader.read_exact(&mut header).map_err(|_| truncated("magic"))?;
    if header != EMBEDDING_MAGIC {
        return Err(EmbeddingError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = read_u32(&mut reader).map_err(|_| truncated("version"))?;
    if version != EMBEDDING_VERSION {
        return Err(EmbeddingError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let flag = read_u32(&mut reader).map_err(|_| truncated("precision flag"))?;
    let precision = match flag {
        0 => Precision::F32,
        1 => Precision::F64,
        other => {
            return Err(EmbeddingError::BadPrecision {
                path: path.to_path_buf(),
                flag: other,
            })
        }
    };
    let rows = read_u64(&mut reader).map_err(|_| truncated("row count"))? as usize;
    let dim = read_u32(&mut reader).map_err(|_| truncated("dim"))? as usize;

    let mut entries = Vec::with_capacity(rows);
    for _ in 0..rows {
        let len = read_u32(&mut reader).map_err(|_| truncated("token length"))? as usize;
        let mut buf = vec![0u8; len];
        reader.read_exact(&mut buf).map_err(|_| truncated("token bytes"))?;
        let token = String::from_utf8(buf).map_err(|e| EmbeddingError::Corrupt {
            path: path.to_path_buf(),
            reason: format!("token is not UTF-8: {e}"),
        })?;
        let count = read_u64(&mut reader).map_err(|_| truncated("token count"))?;
        entries.push((token, count));
    }
    let vocab = Vocabulary::from_ordered_entries(entries, 0).map_err(|e| EmbeddingError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;

    let mut data = Vec::with_capacity(rows * dim);
    match precision {
        Precision::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..rows * dim {
                reader.read_exact(&mut buf).map_err(|_| truncated("payload"))?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
        Precision::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..rows * dim {
                reader.read_exact(&mut buf).map_err(|_| truncated("payload"))?;
                data.push(f64::from_le_bytes(buf));
            }
        }
    }
    EmbeddingTable::new(vocab, DenseMatrix::from_vec(rows, dim, data))
}

/// Loads either format, sniffing the binary magic.
pub fn read_embedding(path: &Path) -> Result<EmbeddingTable, EmbeddingError> {
    let mut file = File::open(path).map_err(|e| EmbeddingError::io(path, e))?;
    let mut head = [0u8; 8];
    let n = file.read(&mut head).map_err(|e| EmbeddingError::io(path, e))?;
    drop(file);
    if n == 8 && head == EMBEDDING_MAGIC {
        read_binary(path)
    } else {
        read_text(path)
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, MinCount};

    fn sample_table() -> EmbeddingTable {
        let vocab = build_vocab(
            ["the", "the", "the", "cat", "cat", "sat"].map(String::from),
            MinCount::Fixed(1),
        )
        .unwrap();
        let vectors = DenseMatrix::from_rows(&[
            vec![0.1, -2.5, 3.25],
            vec![1.0 / 3.0, 1e-17, -42.0],
            vec![0.0, 7.125, std::f64::consts::PI],
        ]);
        EmbeddingTable::new(vocab, vectors).unwrap()
    }

    #[test]
    fn rejects_row_mismatch_and_nonfinite() {
        let vocab = build_vocab(["a", "b"].map(String::from), MinCount::Fixed(1)).unwrap();
        assert!(matches!(
            EmbeddingTable::new(vocab.clone(), DenseMatrix::zeros(3, 2)),
            Err(EmbeddingError::RowCountMismatch { .. })
        ));
        let bad = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![f64::NAN, 0.0]]);
        assert!(matches!(
            EmbeddingTable::new(vocab, bad),
            Err(EmbeddingError::NonFinite { row: 1 })
        ));
    }

    #[test]
    fn text_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let table = sample_table();
        write_text(&table, &path).unwrap();
        let loaded = read_text(&path).unwrap();
        assert_eq!(loaded.dim(), table.dim());
        assert_eq!(loaded.len(), table.len());
        for (id, token, _) in table.vocab().iter() {
            assert_eq!(loaded.vector(token).unwrap(), table.row(id));
        }
    }

    #[test]
    fn text_without_header_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "cat 1.5 2.5\ndog -0.25 0\n").unwrap();
        let table = read_text(&path).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.dim(), 2);
        assert_eq!(table.vector("dog").unwrap(), &[-0.25, 0.0]);
    }

    #[test]
    fn text_ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "cat 1.5 2.5\ndog -0.25\n").unwrap();
        assert!(matches!(
            read_text(&path),
            Err(EmbeddingError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn binary_roundtrip_preserves_bits_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let table = sample_table();
        write_binary(&table, &path, Precision::F64).unwrap();
        let loaded = read_binary(&path).unwrap();
        for (id, token, count) in table.vocab().iter() {
            assert_eq!(loaded.vocab().id(token), Some(id));
            assert_eq!(loaded.vocab().count(id), count);
            let a = table.row(id);
            let b = loaded.row(id);
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn f32_payload_loads_with_reduced_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb32.bin");
        let table = sample_table();
        write_binary(&table, &path, Precision::F32).unwrap();
        let loaded = read_binary(&path).unwrap();
        assert_eq!(loaded.row(0)[2], 3.25); // exactly representable
        assert!((loaded.row(1)[0] - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn sniffing_dispatches_on_magic() {
        let dir = tempfile::tempdir().unwrap();
        let text = dir.path().join("a.emb");
        let bin = dir.path().join("b.emb");
        let table = sample_table();
        write_text(&table, &text).unwrap();
        write_binary(&table, &bin, Precision::F64).unwrap();
        assert_eq!(read_embedding(&text).unwrap().len(), table.len());
        assert_eq!(read_embedding(&bin).unwrap().len(), table.len());
    }

    #[test]
    fn truncated_binary_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        write_binary(&sample_table(), &path, Precision::F64).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_binary(&path),
            Err(EmbeddingError::Truncated { .. })
        ));
    }
}

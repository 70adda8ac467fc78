use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{CooccurrenceStore, CorpusError};

/// Leading bytes of every co-occurrence shard.
pub const SHARD_MAGIC: [u8; 8] = *b"EFCOOC01";
pub const SHARD_VERSION: u32 = 1;

const HEADER_LEN: u64 = 12;
const RECORD_LEN: u64 = 16;

/// Writes the store as `shard_count` binary shards under `dir`, named
/// `cooccur-NNNNN.bin`. Entries are dealt round-robin in canonical order,
/// so the split is deterministic. Each shard carries the magic/version
/// header followed by `(u32 i, u32 j, f64 weight)` little-endian records
/// with `i <= j`.
pub fn write_shards(
    store: &CooccurrenceStore,
    dir: &Path,
    shard_count: usize,
) -> Result<Vec<PathBuf>, CorpusError> {
    if shard_count == 0 {
        return Err(CorpusError::InvalidShardCount);
    }
    std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let mut writers = Vec::with_capacity(shard_count);
    let mut paths = Vec::with_capacity(shard_count);
    for n in 0..shard_count {
        let path = dir.join(format!("cooccur-{n:05}.bin"));
        let file = File::create(&path).map_err(|e| CorpusError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&SHARD_MAGIC)
            .and_then(|_| w.write_all(&SHARD_VERSION.to_le_bytes()))
            .map_err(|e| CorpusError::io(&path, e))?;
        writers.push(w);
        paths.push(path);
    }
    for (n, (i, j, weight)) in store.iter().enumerate() {
        let w = &mut writers[n % shard_count];
        let path = &paths[n % shard_count];
        w.write_all(&i.to_le_bytes())
            .and_then(|_| w.write_all(&j.to_le_bytes()))
            .and_then(|_| w.write_all(&weight.to_le_bytes()))
            .map_err(|e| CorpusError::io(path, e))?;
    }
    for (w, path) in writers.iter_mut().zip(&paths) {
        w.flush().map_err(|e| CorpusError::io(path, e))?;
    }
    Ok(paths)
}

/// Reads one shard file or every `*.bin` under a directory, summing
/// duplicate entries across shards.
pub fn read_shards(path: &Path) -> Result<CooccurrenceStore, CorpusError> {
    let meta = std::fs::metadata(path).map_err(|e| CorpusError::io(path, e))?;
    let mut files: Vec<PathBuf> = if meta.is_dir() {
        let mut v = Vec::new();
        for entry in std::fs::read_dir(path).map_err(|e| CorpusError::io(path, e))? {
            let entry = entry.map_err(|e| CorpusError::io(path, e))?;
            let p = entry.path();
            if p.extension().is_some_and(|e| e == "bin") {
                v.push(p);
            }
        }
        v
    } else {
        vec![path.to_path_buf()]
    };
    files.sort();

    let mut store = CooccurrenceStore::new();
    for file in &files {
        read_one_shard(file, &mut store)?;
    }
    Ok(store)
}

fn read_one_shard(path: &Path, store: &mut CooccurrenceStore) -> Result<(), CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let total_bytes = file.metadata().map_err(|e| CorpusError::io(path, e))?.len();
    let mut reader = BufReader::new(file);

    let mut header = [0u8; HEADER_LEN as usize];
    reader
        .read_exact(&mut header)
        .map_err(|_| CorpusError::TruncatedShard {
            path: path.to_path_buf(),
            bytes: total_bytes,
        })?;
    if header[..8] != SHARD_MAGIC {
        return Err(CorpusError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != SHARD_VERSION {
        return Err(CorpusError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    if !(total_bytes - HEADER_LEN).is_multiple_of(RECORD_LEN) {
        return Err(CorpusError::TruncatedShard {
            path: path.to_path_buf(),
            bytes: total_bytes,
        });
    }

    let mut record = [0u8; RECORD_LEN as usize];
    let mut offset = HEADER_LEN;
    while offset < total_bytes {
        reader
            .read_exact(&mut record)
            .map_err(|e| CorpusError::io(path, e))?;
        let i = u32::from_le_bytes(record[0..4].try_into().unwrap());
        let j = u32::from_le_bytes(record[4..8].try_into().unwrap());
        let weight = f64::from_le_bytes(record[8..16].try_into().unwrap());
        if !weight.is_finite() || weight <= 0.0 {
            return Err(CorpusError::CorruptRecord {
                path: path.to_path_buf(),
                offset,
            });
        }
        store.add_weight(i, j, weight);
        offset += RECORD_LEN;
    }
    Ok(())
}

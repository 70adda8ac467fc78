//! Run provenance. Every command that writes an artifact also writes a
//! manifest next to it: the command, the fully resolved config, digests
//! of everything read and written, the seeds in play, and the wall clock.
//! In single-thread mode the manifest pins the run completely, so a run
//! can be reproduced from the manifest alone.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::AppConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Fully resolved config, after file values and flag overrides.
    pub config: AppConfig,
    pub threads: usize,
    /// Seeds by role, e.g. "glove" or "svd". Empty for seedless stages.
    pub seeds: BTreeMap<String, u64>,
    /// Input path to SHA-256 content digest.
    pub inputs: BTreeMap<String, String>,
    /// Output path to SHA-256 content digest.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut file = std::fs::File::open(path)
        .with_context(|| format!("cannot open {} for hashing", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file
            .read(&mut buf)
            .with_context(|| format!("cannot read {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Where a manifest lives relative to the artifact: inside a directory
/// output, or as a `.manifest.json` sibling of a file output.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut name = out
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

/// Accumulates digests while a stage runs, then freezes them with the
/// elapsed wall clock.
pub struct ManifestBuilder {
    command: String,
    config: AppConfig,
    threads: usize,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &AppConfig, threads: usize) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config: config.clone(),
            threads,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, role: &str, value: u64) -> &mut Self {
        self.seeds.insert(role.to_string(), value);
        self
    }

    /// Digests a file, or every file under a directory.
    pub fn input(&mut self, path: &Path) -> anyhow::Result<&mut Self> {
        for file in files_under(path)? {
            let digest = sha256_file(&file)?;
            self.inputs.insert(file.display().to_string(), digest);
        }
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<&mut Self> {
        for file in files_under(path)? {
            let digest = sha256_file(&file)?;
            self.outputs.insert(file.display().to_string(), digest);
        }
        Ok(self)
    }

    /// Finalizes the manifest and writes it as pretty JSON.
    pub fn write(self, manifest_path: &Path) -> anyhow::Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: TOOL_VERSION.to_string(),
            config: self.config,
            threads: self.threads,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(manifest_path, json.as_bytes())
            .with_context(|| format!("cannot write manifest {}", manifest_path.display()))?;
        Ok(manifest)
    }
}

/// The file itself, or every regular file under a directory in sorted
/// order. Manifests already present are not digested again.
fn files_under(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(path)
        .with_context(|| format!("missing input or output path {}", path.display()))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    let mut dirs = vec![path.to_path_buf()];
    while let Some(dir) = dirs.pop() {
        for entry in std::fs::read_dir(&dir)
            .with_context(|| format!("cannot list {}", dir.display()))?
        {
            let p = entry?.path();
            if p.is_dir() {
                dirs.push(p);
            } else if p
                .file_name()
                .is_none_or(|n| !n.to_string_lossy().ends_with("manifest.json"))
            {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_are_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, b"hello\n").unwrap();
        let d1 = sha256_file(&p).unwrap();
        let d2 = sha256_file(&p).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 64);
        std::fs::write(&p, b"hello!\n").unwrap();
        assert_ne!(sha256_file(&p).unwrap(), d1);
    }

    #[test]
    fn manifest_echo_reparses_to_the_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, b"data").unwrap();
        let cfg = AppConfig {
            dim: 12,
            ..AppConfig::default()
        };

        let mut builder = ManifestBuilder::new("vocab", &cfg, 1);
        builder.seed("glove", 42);
        builder.input(&input).unwrap();
        let mpath = dir.path().join("out.manifest.json");
        let written = builder.write(&mpath).unwrap();

        let text = std::fs::read_to_string(&mpath).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back, written);
        assert_eq!(back.seeds["glove"], 42);
        assert!(back.inputs.keys().any(|k| k.ends_with("in.txt")));
    }

    #[test]
    fn directory_outputs_list_each_file() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("shards");
        std::fs::create_dir(&sub).unwrap();
        std::fs::write(sub.join("b.bin"), b"bb").unwrap();
        std::fs::write(sub.join("a.bin"), b"aa").unwrap();
        std::fs::write(sub.join("manifest.json"), b"{}").unwrap();

        let mut builder = ManifestBuilder::new("cooccur", &AppConfig::default(), 2);
        builder.output(&sub).unwrap();
        let written = builder.write(&sub.join("manifest.json")).unwrap();
        let keys: Vec<&String> = written.outputs.keys().collect();
        assert_eq!(keys.len(), 2);
        assert!(keys[0].ends_with("a.bin"));
        assert!(keys[1].ends_with("b.bin"));
    }

    #[test]
    fn manifest_paths_follow_the_artifact_shape() {
        let dir = tempfile::tempdir().unwrap();
        let file_out = dir.path().join("glove.bin");
        assert_eq!(
            manifest_path_for(&file_out),
            dir.path().join("glove.bin.manifest.json")
        );
        let dir_out = dir.path().join("shards");
        std::fs::create_dir(&dir_out).unwrap();
        assert_eq!(manifest_path_for(&dir_out), dir_out.join("manifest.json"));
    }
}

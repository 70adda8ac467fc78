//! One function per pipeline stage. The subcommands call these directly
//! and `pipeline` chains them, so a pipeline run and the equivalent
//! sequence of individual commands execute byte-for-byte the same code
//! with the same resolved config.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use embfuse_core::corpus::{
    count_cooccurrences_parallel, read_shards, read_vocab, write_shards, write_vocab, CorpusLines,
    TokenizerConfig, VocabCounter,
};
use embfuse_core::embedding::{read_embedding, write_binary, EmbeddingTable, Precision};
use embfuse_core::eval::{
    eval_similarity, load_labeled_dir, load_word_pairs, run_task, OovPolicy, SimilarityReport,
    TaskKind, TaskReport,
};
use embfuse_core::fuse::{
    align_vocab, build_merged_space, learn_projection, normalize_graph_to_glove,
    project_full_vocab, shared_graph_rows, FuseReport, MatchPolicy,
};
use embfuse_core::glove::{self, export_vectors, ExportMode, TrainMode};
use embfuse_core::graph::{build_term_matrix, factor_ppmi, parse_assertions, ppmi, TermLabeling};

use crate::config::{AppConfig, FitTarget, PipelineConfig};
use crate::manifest::{manifest_path_for, ManifestBuilder, RunManifest};

/// Expands a glob into a sorted, nonempty file list.
pub fn expand_glob(pattern: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in glob::glob(pattern).with_context(|| format!("bad glob pattern {pattern:?}"))? {
        let path = entry?;
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no files match {pattern:?}");
    }
    Ok(files)
}

pub fn run_vocab(
    input: &str,
    cfg: &AppConfig,
    threads: usize,
    out: &Path,
) -> anyhow::Result<RunManifest> {
    let files = expand_glob(input)?;
    let tokenizer = TokenizerConfig::default();
    let mut counter = VocabCounter::new();
    for file in &files {
        for line in CorpusLines::open(file, tokenizer)? {
            counter.add_tokens(line?);
        }
    }
    let vocab = counter.finish(cfg.min_count.to_core())?;
    write_vocab(&vocab, out)?;
    eprintln!(
        "vocab: {} types kept over {} tokens -> {}",
        vocab.len(),
        vocab.total_tokens(),
        out.display()
    );

    let mut m = ManifestBuilder::new("vocab", cfg, threads);
    for file in &files {
        m.input(file)?;
    }
    m.output(out)?;
    m.write(&manifest_path_for(out))
}

pub fn run_cooccur(
    input: &str,
    vocab_path: &Path,
    cfg: &AppConfig,
    threads: usize,
    out_dir: &Path,
) -> anyhow::Result<RunManifest> {
    let vocab = read_vocab(vocab_path)?;
    let files = expand_glob(input)?;
    let tokenizer = TokenizerConfig::default();
    let mut lines: Vec<Vec<String>> = Vec::new();
    for file in &files {
        for line in CorpusLines::open(file, tokenizer)? {
            let tokens = line?;
            if !tokens.is_empty() {
                lines.push(tokens);
            }
        }
    }
    let store = count_cooccurrences_parallel(&lines, &vocab, cfg.window, threads)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let shard_files = write_shards(&store, out_dir, threads.max(1))?;
    eprintln!(
        "cooccur: {} cells, total weight {:.3}, {} shard(s) -> {}",
        store.len(),
        store.total_weight(),
        shard_files.len(),
        out_dir.display()
    );

    let mut m = ManifestBuilder::new("cooccur", cfg, threads);
    m.input(vocab_path)?;
    for file in &files {
        m.input(file)?;
    }
    m.output(out_dir)?;
    m.write(&manifest_path_for(out_dir))
}

/// Training mode resolution: one thread is always deterministic, and the
/// parallel mode takes its worker count from `--threads`.
pub fn glove_mode(parallel: bool, threads: usize) -> TrainMode {
    if parallel && threads > 1 {
        TrainMode::Parallel { workers: threads }
    } else {
        TrainMode::Deterministic
    }
}

pub fn run_glove(
    shards: &Path,
    vocab_path: &Path,
    cfg: &AppConfig,
    mode: TrainMode,
    export: ExportMode,
    threads: usize,
    out: &Path,
) -> anyhow::Result<RunManifest> {
    let vocab = read_vocab(vocab_path)?;
    let store = read_shards(shards)?;
    let params = cfg.glove_params();
    let (model, stats) = glove::train(&store, &vocab, &params, mode)?;
    let table = export_vectors(&model, &vocab, export)?;
    write_binary(&table, out, Precision::F64)?;
    if let Some(last) = stats.last() {
        eprintln!(
            "glove: {} epochs, final mean cost {:.6} -> {}",
            stats.len(),
            last.mean_cost,
            out.display()
        );
    }

    let mut m = ManifestBuilder::new("glove", cfg, threads);
    m.seed("glove", params.seed);
    m.input(vocab_path)?;
    m.input(shards)?;
    m.output(out)?;
    m.write(&manifest_path_for(out))
}

pub fn run_graph_ppmi(
    dump: &Path,
    filter: Option<&std::collections::BTreeSet<String>>,
    labeling: TermLabeling,
    cfg: &AppConfig,
    threads: usize,
    out: &Path,
) -> anyhow::Result<RunManifest> {
    let reader = BufReader::new(embfuse_core::corpus::open_text(dump)?);
    let batch = parse_assertions(reader, filter)?;
    if batch.assertions.is_empty() {
        bail!(
            "no assertions left from {} after filtering ({} records read)",
            dump.display(),
            batch.total_records
        );
    }
    let (vocab, matrix) = build_term_matrix(&batch.assertions, labeling)?;
    let p = ppmi(&matrix, cfg.cds)?;
    let table = factor_ppmi(&p, &vocab, cfg.dim, cfg.sigma_weight, &cfg.svd_options())?;
    write_binary(&table, out, Precision::F64)?;
    eprintln!(
        "graph-ppmi: {} assertions ({} skipped), {} terms, width {} -> {}",
        batch.assertions.len(),
        batch.skipped_records,
        table.len(),
        table.dim(),
        out.display()
    );

    let mut m = ManifestBuilder::new("graph-ppmi", cfg, threads);
    m.seed("svd", cfg.seed);
    m.input(dump)?;
    m.output(out)?;
    m.write(&manifest_path_for(out))
}

pub struct MergeOutput {
    pub manifest: RunManifest,
    pub report: FuseReport,
}

pub fn run_merge(
    glove_path: &Path,
    graph_path: &Path,
    cfg: &AppConfig,
    strip_lang_tag: bool,
    threads: usize,
    report_path: Option<&Path>,
    out: &Path,
) -> anyhow::Result<MergeOutput> {
    let glove = read_embedding(glove_path)?;
    let graph = read_embedding(graph_path)?;
    let policy = MatchPolicy {
        strip_graph_lang_tag: strip_lang_tag,
        ..MatchPolicy::default()
    };
    let alignment = align_vocab(&glove, &graph, policy)?;
    let (normalized, scale) = normalize_graph_to_glove(&graph, &glove, &alignment, cfg.norm)?;
    let (merged, _svd) =
        build_merged_space(&glove, &normalized, &alignment, cfg.k_prime, &cfg.svd_options())?;
    // The splice source doubles as the fit target, so keeping rows on the
    // shared vocabulary always keeps rows from the space the projection
    // was trained against.
    let fit_target: EmbeddingTable = match cfg.target {
        FitTarget::Merged => merged,
        FitTarget::Ppmi => shared_graph_rows(&normalized, &glove, &alignment)?,
    };
    let model = learn_projection(&glove, &fit_target, &alignment, &cfg.sgd_config())?;
    let fused = project_full_vocab(&glove, &model, &fit_target, cfg.splice)?;
    write_binary(&fused, out, Precision::F64)?;

    let report = FuseReport {
        coverage: alignment.coverage,
        shared_tokens: alignment.len(),
        fit_mse: model.fit_mse,
        scale,
        k_prime: cfg.k_prime,
        svd_seed: cfg.seed,
        sgd_seed: cfg.seed,
    };
    if let Some(rp) = report_path {
        let json = serde_json::to_string_pretty(&report)?;
        std::fs::write(rp, json.as_bytes())
            .with_context(|| format!("cannot write report {}", rp.display()))?;
    }
    eprintln!(
        "merge: {} shared tokens ({:.1}% coverage), fit mse {:.3e} -> {}",
        alignment.len(),
        100.0 * alignment.coverage,
        model.fit_mse,
        out.display()
    );

    let mut m = ManifestBuilder::new("merge", cfg, threads);
    m.seed("svd", cfg.seed);
    m.seed("sgd", cfg.seed);
    m.input(glove_path)?;
    m.input(graph_path)?;
    m.output(out)?;
    if let Some(rp) = report_path {
        m.output(rp)?;
    }
    let manifest = m.write(&manifest_path_for(out))?;
    Ok(MergeOutput { manifest, report })
}

/// Metric report wrapper: the score payload plus the config echo and the
/// seeds that were in effect, so a report is self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalDoc<R> {
    pub config: AppConfig,
    pub seeds: BTreeMap<String, u64>,
    pub report: R,
}

fn write_eval_doc<R: Serialize>(
    command: &str,
    doc: &EvalDoc<R>,
    cfg: &AppConfig,
    threads: usize,
    inputs: &[&Path],
    out: Option<&Path>,
) -> anyhow::Result<Option<RunManifest>> {
    let json = serde_json::to_string_pretty(doc)?;
    println!("{json}");
    let Some(out) = out else { return Ok(None) };
    std::fs::write(out, json.as_bytes())
        .with_context(|| format!("cannot write report {}", out.display()))?;
    let mut m = ManifestBuilder::new(command, cfg, threads);
    for input in inputs {
        m.input(input)?;
    }
    m.output(out)?;
    Ok(Some(m.write(&manifest_path_for(out))?))
}

pub fn run_eval_sim(
    emb: &Path,
    pairs: &Path,
    cfg: &AppConfig,
    threads: usize,
    out: Option<&Path>,
) -> anyhow::Result<EvalDoc<SimilarityReport>> {
    let table = read_embedding(emb)?;
    let ds = load_word_pairs(pairs)?;
    let report = eval_similarity(&table, &ds, OovPolicy::default())?;
    let doc = EvalDoc {
        config: cfg.clone(),
        seeds: BTreeMap::new(),
        report,
    };
    write_eval_doc("eval-sim", &doc, cfg, threads, &[emb, pairs], out)?;
    Ok(doc)
}

pub fn run_eval_task(
    kind: TaskKind,
    emb: &Path,
    data: &Path,
    cfg: &AppConfig,
    threads: usize,
    out: Option<&Path>,
) -> anyhow::Result<EvalDoc<TaskReport>> {
    let table = read_embedding(emb)?;
    let ds = load_labeled_dir(data)?;
    let report = run_task(&table, &ds, kind, &cfg.svm_config())?;
    let command = match kind {
        TaskKind::Classify => "eval-classify",
        TaskKind::Nli => "eval-nli",
    };
    let doc = EvalDoc {
        config: cfg.clone(),
        seeds: BTreeMap::new(),
        report,
    };
    write_eval_doc(command, &doc, cfg, threads, &[emb, data], out)?;
    Ok(doc)
}

/// A fuse report's coverage joined with an externally measured metric
/// delta, correlated across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub runs: usize,
    pub pearson: f64,
    pub spearman: f64,
}

pub fn run_correlate(
    reports: &str,
    deltas_path: &Path,
    cfg: &AppConfig,
    threads: usize,
    out: Option<&Path>,
) -> anyhow::Result<CorrelationSummary> {
    let report_paths = expand_glob(reports)?;
    let deltas = read_deltas(deltas_path)?;
    let mut records = Vec::new();
    for path in &report_paths {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read report {}", path.display()))?;
        let report: FuseReport = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a fuse report", path.display()))?;
        let delta = lookup_delta(&deltas, path).with_context(|| {
            format!("no metric delta for report {}", path.display())
        })?;
        records.push((report.coverage, delta));
    }
    let (pearson, spearman) = embfuse_core::eval::correlate_improvement(&records)?;
    let summary = CorrelationSummary {
        runs: records.len(),
        pearson,
        spearman,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    println!("{json}");
    if let Some(out) = out {
        std::fs::write(out, json.as_bytes())
            .with_context(|| format!("cannot write {}", out.display()))?;
        let mut m = ManifestBuilder::new("correlate", cfg, threads);
        for path in &report_paths {
            m.input(path)?;
        }
        m.input(deltas_path)?;
        m.output(out)?;
        m.write(&manifest_path_for(out))?;
    }
    Ok(summary)
}

/// Reads `key<TAB>delta` lines. Keys may be full report paths or the
/// report's parent directory name, which is how per-run directories are
/// usually labeled.
fn read_deltas(path: &Path) -> anyhow::Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read deltas {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('\t') else {
            bail!("{}:{}: expected key<TAB>delta", path.display(), idx + 1);
        };
        let delta: f64 = value.trim().parse().with_context(|| {
            format!("{}:{}: bad delta {value:?}", path.display(), idx + 1)
        })?;
        map.insert(key.to_string(), delta);
    }
    if map.is_empty() {
        bail!("{} has no delta records", path.display());
    }
    Ok(map)
}

fn lookup_delta(deltas: &BTreeMap<String, f64>, report: &Path) -> Option<f64> {
    if let Some(d) = deltas.get(&report.display().to_string()) {
        return Some(*d);
    }
    let parent = report.parent()?.file_name()?.to_string_lossy().to_string();
    deltas.get(&parent).copied()
}

/// Artifact names a pipeline run leaves in its output directory.
pub struct PipelinePaths {
    pub vocab: PathBuf,
    pub shards: PathBuf,
    pub glove: PathBuf,
    pub graph: PathBuf,
    pub fused: PathBuf,
    pub fuse_report: PathBuf,
    pub sim_report: PathBuf,
    pub classify_report: PathBuf,
    pub nli_report: PathBuf,
}

impl PipelinePaths {
    pub fn new(out_dir: &Path) -> Self {
        PipelinePaths {
            vocab: out_dir.join("vocab.tsv"),
            shards: out_dir.join("shards"),
            glove: out_dir.join("glove.bin"),
            graph: out_dir.join("ppmi.bin"),
            fused: out_dir.join("fused.bin"),
            fuse_report: out_dir.join("fuse_report.json"),
            sim_report: out_dir.join("sim_report.json"),
            classify_report: out_dir.join("classify_report.json"),
            nli_report: out_dir.join("nli_report.json"),
        }
    }
}

/// Chains every stage over one output directory. Each stage writes its
/// own manifest exactly as the standalone command would; the pipeline
/// then writes an umbrella manifest covering external inputs and all
/// artifacts.
pub fn run_pipeline(pcfg: &PipelineConfig, threads: usize) -> anyhow::Result<RunManifest> {
    let cfg = &pcfg.params;
    let out_dir = &pcfg.out_dir;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let paths = PipelinePaths::new(out_dir);

    run_vocab(&pcfg.corpus, cfg, threads, &paths.vocab)?;
    run_cooccur(&pcfg.corpus, &paths.vocab, cfg, threads, &paths.shards)?;
    run_glove(
        &paths.shards,
        &paths.vocab,
        cfg,
        glove_mode(true, threads),
        ExportMode::WordPlusContext,
        threads,
        &paths.glove,
    )?;
    let (filter, labeling) = pcfg.graph_scope();
    run_graph_ppmi(&pcfg.graph, filter.as_ref(), labeling, cfg, threads, &paths.graph)?;
    // Language-tagged graph tables need the tag stripped to meet corpus
    // tokens; single-language tables are already bare.
    let strip = pcfg.lang.is_none();
    run_merge(
        &paths.glove,
        &paths.graph,
        cfg,
        strip,
        threads,
        Some(&paths.fuse_report),
        &paths.fused,
    )?;
    if let Some(pairs) = &pcfg.pairs {
        run_eval_sim(&paths.fused, pairs, cfg, threads, Some(&paths.sim_report))?;
    }
    if let Some(data) = &pcfg.classify_data {
        run_eval_task(
            TaskKind::Classify,
            &paths.fused,
            data,
            cfg,
            threads,
            Some(&paths.classify_report),
        )?;
    }
    if let Some(data) = &pcfg.nli_data {
        run_eval_task(
            TaskKind::Nli,
            &paths.fused,
            data,
            cfg,
            threads,
            Some(&paths.nli_report),
        )?;
    }

    let mut m = ManifestBuilder::new("pipeline", cfg, threads);
    m.seed("glove", cfg.seed);
    m.seed("svd", cfg.seed);
    m.seed("sgd", cfg.seed);
    for file in expand_glob(&pcfg.corpus)? {
        m.input(&file)?;
    }
    m.input(&pcfg.graph)?;
    if let Some(p) = &pcfg.pairs {
        m.input(p)?;
    }
    if let Some(p) = &pcfg.classify_data {
        m.input(p)?;
    }
    if let Some(p) = &pcfg.nli_data {
        m.input(p)?;
    }
    m.output(out_dir)?;
    m.write(&out_dir.join("manifest.json"))
}

//! `embfuse`: one binary exposing every stage of the embedding pipeline
//! plus an end-to-end `pipeline` command.
//!
//! Stage order mirrors the data flow: `vocab` and `cooccur` digest a
//! corpus, `glove` trains corpus vectors on the counts, `graph-ppmi`
//! factors a concept graph into vectors, `merge` fuses the two spaces,
//! and the `eval-*` commands score a table. `correlate` relates fuse
//! coverage to measured metric changes across runs.
//!
//! Flags override config file values; a missing config means documented
//! defaults. `--threads 1` (the default) makes every stage deterministic,
//! and the `EMBFUSE_THREADS` variable supplies the default thread count.

pub mod config;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use embfuse_core::eval::TaskKind;
use embfuse_core::fuse::{NormPolicy, SplicePolicy};
use embfuse_core::glove::ExportMode;
use embfuse_core::graph::{SigmaWeight, TermLabeling};

use config::{AppConfig, FitTarget, GammaArg, MinCountArg};

#[derive(Debug, Parser)]
#[command(
    name = "embfuse",
    version,
    about = "Train, fuse, and evaluate word embeddings"
)]
pub struct Cli {
    /// Worker threads. 1 is fully deterministic. Defaults to
    /// EMBFUSE_THREADS, then 1.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a frequency-ranked vocabulary from corpus files.
    Vocab {
        /// Corpus file glob; gzipped files are detected by content.
        #[arg(long)]
        input: String,
        /// "auto" or a fixed count threshold.
        #[arg(long, value_parser = clap::builder::ValueParser::new(MinCountArg::from_str_arg))]
        min_count: Option<MinCountArg>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Vocabulary TSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Count distance-weighted co-occurrences into shards.
    Cooccur {
        /// Corpus file glob.
        #[arg(long)]
        input: String,
        /// Vocabulary TSV from `vocab`.
        #[arg(long)]
        vocab: PathBuf,
        /// Window size in tokens.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Shard directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train corpus embeddings on counted co-occurrences.
    Glove {
        /// Shard directory (or single shard file) from `cooccur`.
        #[arg(long)]
        shards: PathBuf,
        /// Vocabulary TSV from `vocab`.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long = "xmax")]
        x_max: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        /// Deterministic single-worker or racy multi-worker updates.
        #[arg(long, value_enum, default_value_t = GloveModeArg::Deterministic)]
        mode: GloveModeArg,
        /// Which parameter blocks form the exported vectors.
        #[arg(long, value_enum, default_value_t = ExportArg::WordPlusContext)]
        export: ExportArg,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Embedding file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Factor a concept graph into PPMI embeddings.
    GraphPpmi {
        /// Assertion dump, plain or gzipped TSV.
        #[arg(long)]
        dump: PathBuf,
        /// Language tag to keep in single mode.
        #[arg(long)]
        lang: Option<String>,
        /// One language's subgraph or the whole dump.
        #[arg(long, value_enum, default_value_t = GraphModeArg::Single)]
        mode: GraphModeArg,
        #[arg(long)]
        dim: Option<usize>,
        /// Context distribution smoothing exponent.
        #[arg(long)]
        cds: Option<f64>,
        /// Singular value weighting of output rows.
        #[arg(long, value_enum)]
        sigma_weight: Option<SigmaArg>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Embedding file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse corpus embeddings with graph embeddings.
    Merge {
        /// Corpus embedding table.
        #[arg(long)]
        glove: PathBuf,
        /// Graph embedding table.
        #[arg(long)]
        graph: PathBuf,
        /// Width of the merged space.
        #[arg(long)]
        kprime: Option<usize>,
        /// How the graph table is rescaled first.
        #[arg(long, value_enum)]
        norm: Option<NormArg>,
        /// Row source for shared-vocabulary tokens.
        #[arg(long, value_enum)]
        splice: Option<SpliceArg>,
        /// Fit the projection against the merged space or the graph rows.
        #[arg(long, value_enum)]
        target: Option<FitTarget>,
        /// Strip `lang/` prefixes from graph tokens before matching.
        #[arg(long)]
        strip_lang_tag: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fuse report JSON to write.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Fused embedding file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an embedding table on scored word pairs.
    EvalSim {
        #[arg(long)]
        emb: PathBuf,
        /// CSV or TSV with two words and a gold score per line.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report JSON to write; the report always goes to stdout too.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score an SVM text classifier over sentence vectors.
    EvalClassify {
        #[arg(long)]
        emb: PathBuf,
        /// Directory with train/test (and optional validation) splits.
        #[arg(long)]
        data: PathBuf,
        /// SVM box constraint.
        #[arg(long = "C")]
        c: Option<f64>,
        /// "scale" or a fixed RBF width.
        #[arg(long, value_parser = clap::builder::ValueParser::new(GammaArg::from_str_arg))]
        gamma: Option<GammaArg>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Like eval-classify, but trains on the validation split of a
    /// premise/hypothesis task.
    EvalNli {
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long, value_parser = clap::builder::ValueParser::new(GammaArg::from_str_arg))]
        gamma: Option<GammaArg>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlate fuse-report coverage with measured metric deltas.
    Correlate {
        /// Glob over fuse report JSON files.
        #[arg(long)]
        reports: String,
        /// TSV of report path (or run directory name) to metric delta.
        #[arg(long = "metric-deltas")]
        metric_deltas: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage end-to-end from one pipeline config.
    Pipeline {
        /// Pipeline YAML: `params` plus input and output paths.
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GloveModeArg {
    Deterministic,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportArg {
    Word,
    WordPlusContext,
}

impl ExportArg {
    fn to_core(self) -> ExportMode {
        match self {
            ExportArg::Word => ExportMode::Word,
            ExportArg::WordPlusContext => ExportMode::WordPlusContext,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphModeArg {
    Single,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaArg {
    None,
    Sqrt,
    Full,
}

impl SigmaArg {
    fn to_core(self) -> SigmaWeight {
        match self {
            SigmaArg::None => SigmaWeight::None,
            SigmaArg::Sqrt => SigmaWeight::Sqrt,
            SigmaArg::Full => SigmaWeight::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    GlobalMeanL2,
    PerVectorL2,
}

impl NormArg {
    fn to_core(self) -> NormPolicy {
        match self {
            NormArg::GlobalMeanL2 => NormPolicy::GlobalMeanL2,
            NormArg::PerVectorL2 => NormPolicy::PerVectorL2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpliceArg {
    Projected,
    KeepMerged,
}

impl SpliceArg {
    fn to_core(self) -> SplicePolicy {
        match self {
            SpliceArg::Projected => SplicePolicy::ProjectedEverywhere,
            SpliceArg::KeepMerged => SplicePolicy::KeepMergedOnShared,
        }
    }
}

impl MinCountArg {
    fn from_str_arg(s: &str) -> Result<Self, String> {
        s.parse()
    }
}

impl GammaArg {
    fn from_str_arg(s: &str) -> Result<Self, String> {
        s.parse()
    }
}

/// Thread count precedence: flag, then the environment variable, then 1.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> anyhow::Result<usize> {
    let threads = match (flag, env) {
        (Some(n), _) => n,
        (None, Some(text)) => text
            .trim()
            .parse::<usize>()
            .map_err(|_| anyhow::anyhow!("EMBFUSE_THREADS must be an integer, got {text:?}"))?,
        (None, None) => 1,
    };
    if threads == 0 {
        anyhow::bail!("--threads must be at least 1");
    }
    Ok(threads)
}

fn base_config(path: Option<&PathBuf>) -> anyhow::Result<AppConfig> {
    Ok(match path {
        Some(p) => config::load_config(p)?,
        None => AppConfig::default(),
    })
}

fn over<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Executes a parsed command line. Flags beat config file values; every
/// artifact-producing invocation leaves a manifest beside its output.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = resolve_threads(cli.threads, std::env::var("EMBFUSE_THREADS").ok().as_deref())?;
    match cli.command {
        Command::Vocab {
            input,
            min_count,
            config,
            out,
        } => {
            let mut cfg = base_config(config.as_ref())?;
            over(&mut cfg.min_count, min_count);
            stages::run_vocab(&input, &cfg, threads, &out)?;
        }
        Command::Cooccur {
            input,
            vocab,
            window,
            config,
            out,
        } => {
            let mut cfg = base_config(config.as_ref())?;
            over(&mut cfg.window, window);
            stages::run_cooccur(&input, &vocab, &cfg, threads, &out)?;
        }
        Command::Glove {
            shards,
            vocab,
            dim,
            x_max,
            alpha,
            lr,
            iters,
            mode,
            export,
            config,
            out,
        } => {
            let mut cfg = base_config(config.as_ref())?;
            over(&mut cfg.dim, dim);
            over(&mut cfg.x_max, x_max);
            over(&mut cfg.alpha, alpha);
            over(&mut cfg.lr, lr);
            over(&mut cfg.iters, iters);
            let tmode = stages::glove_mode(mode == GloveModeArg::Parallel, threads);
            stages::run_glove(&shards, &vocab, &cfg, tmode, export.to_core(), threads, &out)?;
        }
        Command::GraphPpmi {
            dump,
            lang,
            mode,
            dim,
            cds,
            sigma_weight,
            config,
            out,
        } => {
            let mut cfg = base_config(config.as_ref())?;
            over(&mut cfg.dim, dim);
            over(&mut cfg.cds, cds);
            over(&mut cfg.sigma_weight, sigma_weight.map(SigmaArg::to_core));
            let (filter, labeling) = match mode {
                GraphModeArg::Single => {
                    let lang = lang.ok_or_else(|| {
                        anyhow::anyhow!("--lang is required with --mode single")
                    })?;
                    (
                        Some(std::collections::BTreeSet::from([lang])),
                        TermLabeling::Plain,
                    )
                }
                GraphModeArg::All => (None, TermLabeling::LanguageTagged),
            };
            stages::run_graph_ppmi(&dump, filter.as_ref(), labeling, &cfg, threads, &out)?;
        }
        Command::Merge {
            glove,
            graph,
            kprime,
            norm,
            splice,
            target,
            strip_lang_tag,
            config,
            report,
            out,
        } => {
            let mut cfg = base_config(config.as_ref())?;
            over(&mut cfg.k_prime, kprime);
            over(&mut cfg.norm, norm.map(NormArg::to_core));
            over(&mut cfg.splice, splice.map(SpliceArg::to_core));
            over(&mut cfg.target, target);
            stages::run_merge(
                &glove,
                &graph,
                &cfg,
                strip_lang_tag,
                threads,
                report.as_deref(),
                &out,
            )?;
        }
        Command::EvalSim {
            emb,
            pairs,
            config,
            out,
        } => {
            let cfg = base_config(config.as_ref())?;
            stages::run_eval_sim(&emb, &pairs, &cfg, threads, out.as_deref())?;
        }
        Command::EvalClassify {
            emb,
            data,
            c,
            gamma,
            config,
            out,
        } => {
            let mut cfg = base_config(config.as_ref())?;
            over(&mut cfg.c, c);
            over(&mut cfg.gamma, gamma);
            stages::run_eval_task(TaskKind::Classify, &emb, &data, &cfg, threads, out.as_deref())?;
        }
        Command::EvalNli {
            emb,
            data,
            c,
            gamma,
            config,
            out,
        } => {
            let mut cfg = base_config(config.as_ref())?;
            over(&mut cfg.c, c);
            over(&mut cfg.gamma, gamma);
            stages::run_eval_task(TaskKind::Nli, &emb, &data, &cfg, threads, out.as_deref())?;
        }
        Command::Correlate {
            reports,
            metric_deltas,
            config,
            out,
        } => {
            let cfg = base_config(config.as_ref())?;
            stages::run_correlate(&reports, &metric_deltas, &cfg, threads, out.as_deref())?;
        }
        Command::Pipeline { config } => {
            let pcfg = config::load_pipeline_config(&config)?;
            stages::run_pipeline(&pcfg, threads)?;
        }
    }
    Ok(())
}

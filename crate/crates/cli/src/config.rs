//! Run configuration: one flat key-value document shared by every
//! subcommand, plus the pipeline spec that adds input and output paths.
//!
//! Defaults are the hyperparameters the toolkit was built around, so an
//! empty config file is a complete config. Unknown keys are rejected and
//! type errors name the offending key path.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use embfuse_core::corpus::MinCount;
use embfuse_core::eval::{GammaPolicy, SvmConfig};
use embfuse_core::fuse::{NormPolicy, SplicePolicy};
use embfuse_core::glove::GloveParams;
use embfuse_core::graph::{SigmaWeight, TermLabeling};
use embfuse_core::numerics::{SgdConfig, SvdOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Invalid { path: String, message: String },
}

/// Vocabulary cutoff: `auto` picks a corpus-size-dependent threshold,
/// a number fixes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MinCountArg {
    #[default]
    Auto,
    Fixed(u64),
}

impl MinCountArg {
    pub fn to_core(self) -> MinCount {
        match self {
            MinCountArg::Auto => MinCount::Auto,
            MinCountArg::Fixed(n) => MinCount::Fixed(n),
        }
    }
}

impl FromStr for MinCountArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(MinCountArg::Auto);
        }
        s.parse::<u64>()
            .map(MinCountArg::Fixed)
            .map_err(|_| format!("expected \"auto\" or an unsigned integer, got {s:?}"))
    }
}

impl Serialize for MinCountArg {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            MinCountArg::Auto => ser.serialize_str("auto"),
            MinCountArg::Fixed(n) => ser.serialize_u64(*n),
        }
    }
}

impl<'de> Deserialize<'de> for MinCountArg {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = MinCountArg;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "\"auto\" or an unsigned integer")
            }

            fn visit_str<E: de::Error>(self, s: &str) -> Result<MinCountArg, E> {
                MinCountArg::from_str(s).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, n: u64) -> Result<MinCountArg, E> {
                Ok(MinCountArg::Fixed(n))
            }

            fn visit_i64<E: de::Error>(self, n: i64) -> Result<MinCountArg, E> {
                u64::try_from(n)
                    .map(MinCountArg::Fixed)
                    .map_err(|_| E::custom("min_count cannot be negative"))
            }
        }
        de.deserialize_any(V)
    }
}

/// RBF kernel width: `scale` derives it from the feature variance, a
/// number fixes it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GammaArg {
    #[default]
    Scale,
    Fixed(f64),
}

impl GammaArg {
    pub fn to_core(self) -> GammaPolicy {
        match self {
            GammaArg::Scale => GammaPolicy::Scale,
            GammaArg::Fixed(g) => GammaPolicy::Fixed(g),
        }
    }
}

impl FromStr for GammaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("scale") {
            return Ok(GammaArg::Scale);
        }
        s.parse::<f64>()
            .map(GammaArg::Fixed)
            .map_err(|_| format!("expected \"scale\" or a number, got {s:?}"))
    }
}

impl Serialize for GammaArg {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            GammaArg::Scale => ser.serialize_str("scale"),
            GammaArg::Fixed(g) => ser.serialize_f64(*g),
        }
    }
}

impl<'de> Deserialize<'de> for GammaArg {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = GammaArg;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "\"scale\" or a number")
            }

            fn visit_str<E: de::Error>(self, s: &str) -> Result<GammaArg, E> {
                GammaArg::from_str(s).map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, g: f64) -> Result<GammaArg, E> {
                Ok(GammaArg::Fixed(g))
            }

            fn visit_u64<E: de::Error>(self, g: u64) -> Result<GammaArg, E> {
                Ok(GammaArg::Fixed(g as f64))
            }

            fn visit_i64<E: de::Error>(self, g: i64) -> Result<GammaArg, E> {
                Ok(GammaArg::Fixed(g as f64))
            }
        }
        de.deserialize_any(V)
    }
}

/// What the projection is fitted against: the merged SVD space or the
/// normalized graph rows directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    #[default]
    Merged,
    Ppmi,
}

/// Every tunable knob, flat. Field names double as config file keys and
/// the manifest's config echo, so changes here are format changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Embedding width, for both the corpus and the graph space.
    pub dim: usize,
    /// Co-occurrence window size in tokens.
    pub window: usize,
    /// Weighting cutoff for frequent co-occurrence cells.
    pub x_max: f64,
    /// Weighting exponent below the cutoff.
    pub alpha: f64,
    /// AdaGrad learning rate for embedding training.
    pub lr: f64,
    /// Embedding training epochs.
    pub iters: usize,
    /// Vocabulary frequency cutoff.
    pub min_count: MinCountArg,
    /// Context distribution smoothing exponent for PPMI.
    pub cds: f64,
    /// Width of the merged space.
    pub k_prime: usize,
    /// SVM box constraint.
    pub c: f64,
    /// SVM RBF width policy.
    pub gamma: GammaArg,
    /// Base seed for every stochastic stage.
    pub seed: u64,
    /// Singular value weighting of graph embedding rows.
    pub sigma_weight: SigmaWeight,
    /// How the graph table is rescaled before merging.
    pub norm: NormPolicy,
    /// Row source for shared-vocabulary tokens in the fused table.
    pub splice: SplicePolicy,
    /// Fit target for the projection.
    pub target: FitTarget,
    /// Projection SGD learning rate.
    pub proj_lr: f64,
    /// Projection SGD epochs.
    pub proj_epochs: usize,
    /// Projection SGD minibatch size.
    pub proj_batch: usize,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            dim: 300,
            window: 10,
            x_max: 100.0,
            alpha: 0.75,
            lr: 0.05,
            iters: 100,
            min_count: MinCountArg::Auto,
            cds: 0.75,
            k_prime: 300,
            c: 1.0,
            gamma: GammaArg::Scale,
            seed: 42,
            sigma_weight: SigmaWeight::None,
            norm: NormPolicy::GlobalMeanL2,
            splice: SplicePolicy::ProjectedEverywhere,
            target: FitTarget::Merged,
            proj_lr: 0.01,
            proj_epochs: 200,
            proj_batch: 64,
        }
    }
}

impl AppConfig {
    pub fn glove_params(&self) -> GloveParams {
        GloveParams {
            dim: self.dim,
            x_max: self.x_max,
            alpha: self.alpha,
            lr: self.lr,
            iterations: self.iters,
            seed: self.seed,
        }
    }

    pub fn svd_options(&self) -> SvdOptions {
        SvdOptions {
            seed: self.seed,
            ..SvdOptions::default()
        }
    }

    pub fn sgd_config(&self) -> SgdConfig {
        SgdConfig {
            lr: self.proj_lr,
            epochs: self.proj_epochs,
            batch: self.proj_batch,
            seed: self.seed,
        }
    }

    pub fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            c: self.c,
            gamma: self.gamma.to_core(),
            ..SvmConfig::default()
        }
    }
}

/// Parses a config document. YAML, and therefore also JSON; an empty
/// document means all defaults.
pub fn parse_config(text: &str) -> Result<AppConfig, String> {
    if text.trim().is_empty() {
        return Ok(AppConfig::default());
    }
    let de = serde_yaml::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(format_path_error)
}

pub fn load_config(path: &Path) -> Result<AppConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text).map_err(|message| ConfigError::Invalid {
        path: path.display().to_string(),
        message,
    })
}

fn format_path_error<E: fmt::Display>(err: serde_path_to_error::Error<E>) -> String {
    let path = err.path().to_string();
    if path == "." {
        err.inner().to_string()
    } else {
        format!("{path}: {}", err.inner())
    }
}

/// Config for the end-to-end `pipeline` command: the flat knobs under
/// `params` plus the inputs and the output directory. Relative paths are
/// resolved against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub params: AppConfig,
    /// Corpus file glob.
    pub corpus: String,
    /// Graph assertion dump, plain or gzipped.
    pub graph: PathBuf,
    /// Keep only this language's assertions and label terms bare. When
    /// absent the whole dump is used with language-tagged terms.
    #[serde(default)]
    pub lang: Option<String>,
    /// Word similarity pairs to score the fused table on.
    #[serde(default)]
    pub pairs: Option<PathBuf>,
    /// Labeled single-text task directory.
    #[serde(default)]
    pub classify_data: Option<PathBuf>,
    /// Labeled text-pair task directory.
    #[serde(default)]
    pub nli_data: Option<PathBuf>,
    /// Where every stage writes its artifacts.
    pub out_dir: PathBuf,
}

impl PipelineConfig {
    /// Assertion filter and term labeling implied by `lang`.
    pub fn graph_scope(&self) -> (Option<BTreeSet<String>>, TermLabeling) {
        match &self.lang {
            Some(lang) => (
                Some(BTreeSet::from([lang.clone()])),
                TermLabeling::Plain,
            ),
            None => (None, TermLabeling::LanguageTagged),
        }
    }
}

pub fn load_pipeline_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let de = serde_yaml::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Invalid {
        path: path.display().to_string(),
        message: format_path_error(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert_eq!(cfg.dim, 300);
        assert_eq!(cfg.window, 10);
        assert_eq!(cfg.x_max, 100.0);
        assert_eq!(cfg.alpha, 0.75);
        assert_eq!(cfg.lr, 0.05);
        assert_eq!(cfg.iters, 100);
        assert_eq!(cfg.cds, 0.75);
        assert_eq!(cfg.k_prime, 300);
        assert_eq!(cfg.c, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("dim: 50\nwindowsize: 3\n").unwrap_err();
        assert!(err.contains("windowsize"), "{err}");
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = parse_config("alpha: \"x\"\n").unwrap_err();
        assert!(err.contains("alpha"), "{err}");
    }

    #[test]
    fn min_count_accepts_auto_and_numbers() {
        assert_eq!(parse_config("min_count: auto\n").unwrap().min_count, MinCountArg::Auto);
        assert_eq!(
            parse_config("min_count: 7\n").unwrap().min_count,
            MinCountArg::Fixed(7)
        );
        let err = parse_config("min_count: -3\n").unwrap_err();
        assert!(err.contains("min_count"), "{err}");
    }

    #[test]
    fn gamma_accepts_scale_and_numbers() {
        assert_eq!(parse_config("gamma: scale\n").unwrap().gamma, GammaArg::Scale);
        assert_eq!(
            parse_config("gamma: 0.25\n").unwrap().gamma,
            GammaArg::Fixed(0.25)
        );
    }

    #[test]
    fn enum_keys_use_their_documented_spellings() {
        let cfg = parse_config(
            "norm: per-vector-l2\nsplice: keep_merged_on_shared\ntarget: ppmi\nsigma_weight: sqrt\n",
        )
        .unwrap();
        assert_eq!(cfg.norm, NormPolicy::PerVectorL2);
        assert_eq!(cfg.splice, SplicePolicy::KeepMergedOnShared);
        assert_eq!(cfg.target, FitTarget::Ppmi);
        assert_eq!(cfg.sigma_weight, SigmaWeight::Sqrt);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = AppConfig {
            dim: 17,
            min_count: MinCountArg::Fixed(3),
            gamma: GammaArg::Fixed(0.5),
            ..AppConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: AppConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn pipeline_config_keeps_params_nested() {
        let text = "\
params:
  dim: 8
  iters: 20
corpus: data/*.txt
graph: graph.tsv
lang: en
out_dir: runs/demo
";
        let cfg: PipelineConfig = {
            let de = serde_yaml::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).unwrap()
        };
        assert_eq!(cfg.params.dim, 8);
        assert_eq!(cfg.params.iters, 20);
        assert_eq!(cfg.params.window, 10);
        assert_eq!(cfg.corpus, "data/*.txt");
        let (filter, labeling) = cfg.graph_scope();
        assert!(filter.unwrap().contains("en"));
        assert_eq!(labeling, TermLabeling::Plain);
    }
}

//! The single TOML file that drives every stage.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Unknown keys are rejected, and type errors name the offending key.

use std::path::{Path, PathBuf};

use newsim_core::encoder::{FeatureConfig, SiameseTrainConfig, DEFAULT_MAX_SEQ_LEN};
use newsim_core::fusion::{Activation, FusionTrainConfig, DEFAULT_HIDDEN};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Where every stage writes its artifacts.
    pub work_dir: PathBuf,
    /// Base seed; each stage derives its own seed from it.
    pub seed: u64,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            work_dir: PathBuf::from("work"),
            seed: 42,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
            augment: AugmentConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub pairs: PathBuf,
    pub docs: PathBuf,
    /// Pre-extracted mentions; when absent, the pattern extractor runs.
    pub entities: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    /// Precomputed document embeddings, required when `encoder.kind = "precomputed"`.
    pub embeddings: Option<PathBuf>,
    /// Extra documents (external corpus or fulfilled translations).
    pub extra_docs: Option<PathBuf>,
    /// A translation plan whose fulfilled entries have documents in `extra_docs`.
    pub translation_plan: Option<PathBuf>,
    pub min_tokens: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            pairs: PathBuf::from("pairs.csv"),
            docs: PathBuf::from("docs.jsonl"),
            entities: None,
            gazetteer: None,
            embeddings: None,
            extra_docs: None,
            translation_plan: None,
            min_tokens: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Fraction of each language-pair stratum used for training.
    pub train_ratio: f64,
    /// Languages whose pairs all go to the development split.
    pub held_out_langs: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_ratio: 0.8,
            held_out_langs: vec!["ar".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hashed,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub buckets: u32,
    pub dim: usize,
    pub word_unigrams: bool,
    /// Character n-gram length; 0 disables character features.
    pub char_ngram: usize,
    pub max_seq_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for EncoderConfig {
    /// 4 epochs, batch size 8, learning rate 2e-5 and 512-token truncation.
    fn default() -> Self {
        let features = FeatureConfig::default();
        let train = SiameseTrainConfig::default();
        EncoderConfig {
            kind: EncoderKind::Hashed,
            buckets: features.buckets,
            dim: features.dim,
            word_unigrams: features.word_unigrams,
            char_ngram: features.char_ngram,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
        }
    }
}

impl EncoderConfig {
    pub fn feature_config(&self, seed: u64) -> FeatureConfig {
        FeatureConfig {
            buckets: self.buckets,
            dim: self.dim,
            seed,
            word_unigrams: self.word_unigrams,
            char_ngram: self.char_ngram,
            max_seq_len: self.max_seq_len,
        }
    }

    pub fn train_config(&self, seed: u64) -> SiameseTrainConfig {
        SiameseTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            ..SiameseTrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Share of the training pairs held back for early stopping.
    pub validation_fraction: f64,
    /// When >= 2, the narrative feature of each training pair comes from an
    /// encoder trained without that pair's fold.
    pub cross_fit_folds: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let t = FusionTrainConfig::default();
        FusionConfig {
            hidden: DEFAULT_HIDDEN,
            activation: t.activation,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            patience: t.patience,
            validation_fraction: 0.1,
            cross_fit_folds: 0,
        }
    }
}

impl FusionConfig {
    pub fn train_config(&self, seed: u64) -> FusionTrainConfig {
        FusionTrainConfig {
            hidden: self.hidden,
            activation: self.activation,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Neighbors retrieved per query document.
    pub k: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub bm25_intra: bool,
    /// Retrieve from `data.extra_docs` as well (queries still come from training documents).
    pub bm25_external: bool,
    pub random: bool,
    /// Random pairs to draw; 0 means as many as BM25 produced.
    pub random_count: usize,
    pub translated: bool,
    /// Plan entries per eligible English pair.
    pub translations_per_pair: usize,
    /// Target language pairs, written `"de-en"`, with sampling weights.
    pub translation_targets: Vec<(String, f64)>,
    /// Histogram bins for the pseudo-label distribution report.
    pub bins: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            k: 5,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            bm25_intra: true,
            bm25_external: false,
            random: true,
            random_count: 0,
            translated: false,
            translations_per_pair: 1,
            translation_targets: vec![("de-en".into(), 1.0), ("en-es".into(), 1.0)],
            bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Raw-scale error above which a prediction counts as a serious mistake.
    pub serious_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { serious_threshold: 2.0 }
    }
}

/// Stage seeds are fixed offsets of the base seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedUse {
    Split,
    EncoderInit,
    EncoderTrain,
    Augment,
    Fusion,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            key: e.path().to_string(),
            message: e.inner().message().to_owned(),
        })
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        fix(&mut self.data.pairs);
        fix(&mut self.data.docs);
        for p in [
            &mut self.data.entities,
            &mut self.data.gazetteer,
            &mut self.data.embeddings,
            &mut self.data.extra_docs,
            &mut self.data.translation_plan,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, message: String| {
            Err(CliError::Config {
                key: key.to_owned(),
                message,
            })
        };
        if !(self.split.train_ratio > 0.0 && self.split.train_ratio < 1.0) {
            return bad("split.train_ratio", format!("{} not in (0, 1)", self.split.train_ratio));
        }
        if !(0.0..1.0).contains(&self.fusion.validation_fraction) {
            return bad("fusion.validation_fraction", "must be in [0, 1)".into());
        }
        if self.encoder.kind == EncoderKind::Precomputed && self.data.embeddings.is_none() {
            return bad("data.embeddings", "required when encoder.kind = \"precomputed\"".into());
        }
        if self.augment.bm25_external && self.data.extra_docs.is_none() {
            return bad("data.extra_docs", "required when augment.bm25_external = true".into());
        }
        for (i, (pair, w)) in self.augment.translation_targets.iter().enumerate() {
            if pair.split_once('-').is_none() || w.is_nan() || *w < 0.0 {
                return bad(
                    "augment.translation_targets",
                    format!("entry {i}: expected [\"<lang>-<lang>\", weight >= 0]"),
                );
            }
        }
        Ok(())
    }

    pub fn seed_for(&self, purpose: SeedUse) -> u64 {
        self.seed.wrapping_add(purpose as u64)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.encoder.epochs, 4);
        assert_eq!(cfg.encoder.batch_size, 8);
        assert_eq!(cfg.encoder.learning_rate, 2e-5);
        assert_eq!(cfg.encoder.max_seq_len, 512);
        assert_eq!(cfg.fusion.hidden, 32);
        assert_eq!(cfg.augment.k, 5);
        assert_eq!(PipelineConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(PipelineConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_key() {
        let err = PipelineConfig::parse("[encoder]\nepochs = \"four\"\n").unwrap_err();
        assert!(matches!(&err, CliError::Config { key, .. } if key == "encoder.epochs"), "{err}");
        let err = PipelineConfig::parse("[fusion]\nwidth = 3\n").unwrap_err();
        assert!(matches!(&err, CliError::Config { key, .. } if key.starts_with("fusion")), "{err}");
        let mut cfg = PipelineConfig::default();
        cfg.split.train_ratio = 1.0;
        assert!(matches!(cfg.validate(), Err(CliError::Config { key, .. }) if key == "split.train_ratio"));
    }

    #[test]
    fn relative_paths_follow_config_dir() {
        let mut cfg = PipelineConfig::parse("[data]\npairs = \"p.csv\"\ndocs = \"/abs/d.jsonl\"\n").unwrap();
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.data.pairs, PathBuf::from("/base/p.csv"));
        assert_eq!(cfg.data.docs, PathBuf::from("/abs/d.jsonl"));
        assert_eq!(cfg.work_dir, PathBuf::from("/base/work"));
    }
}

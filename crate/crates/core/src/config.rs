//! Flat `key = value` run configuration with dotted keys.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::TauSchedule;
use crate::dataio::SequenceConfig;
use crate::encoder::{AggregateNorm, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::relgraph::GraphConfig;
use crate::trainer::{EncodingRefresh, TrainConfig};

/// Every tunable of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_path: PathBuf,
    pub delimiter: char,
    pub sequences: SequenceConfig,
    /// Interactions rated below this are removed before sequencing.
    pub min_rating: Option<f64>,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub noise_ratio: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sequences = SequenceConfig::default();
        Self {
            data_path: PathBuf::from("data/ml-100k/ratings.tsv"),
            delimiter: '\t',
            model: ModelConfig { max_positions: sequences.max_len + 2, ..Default::default() },
            sequences,
            min_rating: None,
            graph: GraphConfig::default(),
            train: TrainConfig::default(),
            noise_ratio: 0.2,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match value {
        "" | "none" | "auto" | "all" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show<T: Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or(none.to_string(), T::to_string)
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "data.path",
        "data.delimiter",
        "data.min_seq_len",
        "data.min_item_freq",
        "data.max_len",
        "data.min_rating",
        "graph.user_ratio",
        "graph.item_ratio",
        "encoder.dim",
        "encoder.aggregate_norm",
        "encoder.interaction_norm",
        "encoder.refresh",
        "augment.enabled",
        "augment.tau_init",
        "augment.tau_anneal_every",
        "augment.tau_anneal_factor",
        "augment.tau_floor",
        "augment.short_threshold",
        "augment.share_selector",
        "denoise.denoiser",
        "denoise.drop_threshold",
        "recommend.backbone",
        "recommend.max_positions",
        "trainer.batch_size",
        "trainer.learning_rate",
        "trainer.l2",
        "trainer.max_epochs",
        "trainer.patience",
        "trainer.prefixes_per_user",
        "trainer.seed",
        "trainer.filter_seen",
        "trainer.eval_batch_size",
        "oups.noise_ratio",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let tau: &mut TauSchedule = &mut self.train.tau;
        let enc: &mut EncoderConfig = &mut self.model.encoder;
        match key.trim() {
            "data.path" => self.data_path = PathBuf::from(v),
            "data.delimiter" => {
                self.delimiter = match v {
                    "tab" | "\\t" => '\t',
                    "comma" => ',',
                    "space" => ' ',
                    s if s.chars().count() == 1 => s.chars().next().unwrap(),
                    s => return Err(Error::Config(format!("data.delimiter: {s:?} is not a single character"))),
                }
            }
            "data.min_seq_len" => self.sequences.min_seq_len = parse(key, v)?,
            "data.min_item_freq" => self.sequences.min_item_freq = parse(key, v)?,
            "data.max_len" => self.sequences.max_len = parse(key, v)?,
            "data.min_rating" => self.min_rating = optional(key, v)?,
            "graph.user_ratio" => self.graph.user_ratio = parse(key, v)?,
            "graph.item_ratio" => self.graph.item_ratio = parse(key, v)?,
            "encoder.dim" => enc.dim = parse(key, v)?,
            "encoder.aggregate_norm" => enc.aggregate_norm = parse::<AggregateNorm>(key, v)?,
            "encoder.interaction_norm" => enc.interaction_norm = parse::<AggregateNorm>(key, v)?,
            "encoder.refresh" => self.train.refresh = parse::<EncodingRefresh>(key, v)?,
            "augment.enabled" => self.model.augmentation = parse(key, v)?,
            "augment.tau_init" => tau.init = parse(key, v)?,
            "augment.tau_anneal_every" => tau.every = parse(key, v)?,
            "augment.tau_anneal_factor" => tau.factor = parse(key, v)?,
            "augment.tau_floor" => tau.floor = parse(key, v)?,
            "augment.short_threshold" => self.model.short_threshold = optional(key, v)?,
            "augment.share_selector" => self.model.share_selector = parse(key, v)?,
            "denoise.denoiser" => self.model.denoiser = v.to_string(),
            "denoise.drop_threshold" => self.model.drop_threshold = parse(key, v)?,
            "recommend.backbone" => self.model.backbone = v.to_string(),
            "recommend.max_positions" => self.model.max_positions = parse(key, v)?,
            "trainer.batch_size" => self.train.batch_size = parse(key, v)?,
            "trainer.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "trainer.l2" => self.train.l2 = parse(key, v)?,
            "trainer.max_epochs" => self.train.max_epochs = parse(key, v)?,
            "trainer.patience" => self.train.patience = parse(key, v)?,
            "trainer.prefixes_per_user" => self.train.prefixes_per_user = optional(key, v)?,
            "trainer.seed" => self.train.seed = parse(key, v)?,
            "trainer.filter_seen" => self.train.filter_seen = parse(key, v)?,
            "trainer.eval_batch_size" => self.train.eval_batch_size = parse(key, v)?,
            "oups.noise_ratio" => self.noise_ratio = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let tau = &self.train.tau;
        let enc = &self.model.encoder;
        let norm = |n: AggregateNorm| match n {
            AggregateNorm::None => "none",
            AggregateNorm::Mean => "mean",
        };
        Some(match key {
            "data.path" => self.data_path.display().to_string(),
            "data.delimiter" => match self.delimiter {
                '\t' => "tab".into(),
                ' ' => "space".into(),
                c => c.to_string(),
            },
            "data.min_seq_len" => self.sequences.min_seq_len.to_string(),
            "data.min_item_freq" => self.sequences.min_item_freq.to_string(),
            "data.max_len" => self.sequences.max_len.to_string(),
            "data.min_rating" => show(&self.min_rating, "none"),
            "graph.user_ratio" => self.graph.user_ratio.to_string(),
            "graph.item_ratio" => self.graph.item_ratio.to_string(),
            "encoder.dim" => enc.dim.to_string(),
            "encoder.aggregate_norm" => norm(enc.aggregate_norm).into(),
            "encoder.interaction_norm" => norm(enc.interaction_norm).into(),
            "encoder.refresh" => match self.train.refresh {
                EncodingRefresh::PerStep => "per_step".into(),
                EncodingRefresh::PerEpoch => "per_epoch".into(),
            },
            "augment.enabled" => self.model.augmentation.to_string(),
            "augment.tau_init" => tau.init.to_string(),
            "augment.tau_anneal_every" => tau.every.to_string(),
            "augment.tau_anneal_factor" => tau.factor.to_string(),
            "augment.tau_floor" => tau.floor.to_string(),
            "augment.short_threshold" => show(&self.model.short_threshold, "auto"),
            "augment.share_selector" => self.model.share_selector.to_string(),
            "denoise.denoiser" => self.model.denoiser.clone(),
            "denoise.drop_threshold" => self.model.drop_threshold.to_string(),
            "recommend.backbone" => self.model.backbone.clone(),
            "recommend.max_positions" => self.model.max_positions.to_string(),
            "trainer.batch_size" => self.train.batch_size.to_string(),
            "trainer.learning_rate" => self.train.learning_rate.to_string(),
            "trainer.l2" => self.train.l2.to_string(),
            "trainer.max_epochs" => self.train.max_epochs.to_string(),
            "trainer.patience" => self.train.patience.to_string(),
            "trainer.prefixes_per_user" => show(&self.train.prefixes_per_user, "all"),
            "trainer.seed" => self.train.seed.to_string(),
            "trainer.filter_seen" => self.train.filter_seen.to_string(),
            "trainer.eval_batch_size" => self.train.eval_batch_size.to_string(),
            "oups.noise_ratio" => self.noise_ratio.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k, v)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// The effective configuration, one key per line, readable by `apply_text`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).unwrap()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("trainer.seed = 9 # night run\n\n# comment\naugment.short_threshold = 12.5\ntrainer.prefixes_per_user = 3")
            .unwrap();
        let mut again = RunConfig::default();
        again.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.train.seed, 9);
        assert_eq!(again.model.short_threshold, Some(12.5));
    }

    #[test]
    fn every_key_is_readable_and_writable() {
        let cfg = RunConfig::default();
        for key in RunConfig::KEYS {
            let v = cfg.get(key).unwrap_or_else(|| panic!("{key}"));
            let mut c = RunConfig::default();
            c.set(key, &v).unwrap();
            assert_eq!(c, cfg, "{key}");
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("trainer.sed = 3").is_err());
        assert!(cfg.apply_override("trainer.batch_size=abc").is_err());
        assert!(cfg.apply_override("no_equals").is_err());
        let err = cfg.apply_text("\n\nbogus = 1").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        cfg.apply_override("encoder.refresh=per-step").unwrap();
        assert_eq!(cfg.train.refresh, EncodingRefresh::PerStep);
    }
}

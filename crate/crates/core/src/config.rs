//! Run configuration: a TOML file of dotted sections, command-line
//! `key=value` overrides, and a flat sorted snapshot whose SHA-256 digest
//! identifies the run.
//!
//! ```toml
//! [data]
//! source = "books.jsonl"
//! target = "kitchen.jsonl"
//!
//! [train]
//! epochs = 4
//! batch_pairs = 16
//!
//! [strategy]
//! choice = "auto"
//! threshold = 5.0
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, Temperature};
use crate::model::{Encoder, HeadDims, Network, PrecomputedEncoder, TextEncoder, ToyEncoder, ToyEncoderConfig};
use crate::strategy::{StrategyChoice, StrategyConfig, DEFAULT_ENTROPY_START_EPOCH, DEFAULT_THRESHOLD};
use crate::trainer::{hex_digest, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub source_domain: Option<String>,
    pub target_domain: Option<String>,
    /// Labeled held-out target documents for evaluation.
    pub test: Option<PathBuf>,
    /// Target pos:neg ratio when the target pool carries no labels.
    pub target_ratio: Option<f64>,
    /// Corpus file whose labels give the target pos:neg ratio.
    pub target_labels: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub bt_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Toy,
    /// Frozen features read from a file keyed by document id.
    Pretrained,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(EncoderKind::Toy),
            "pretrained" => Ok(EncoderKind::Pretrained),
            other => Err(Error::Config(format!("unknown encoder {other:?} (toy|pretrained)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub features: Option<PathBuf>,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub projection_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let toy = ToyEncoderConfig::default();
        EncoderConfig {
            kind: EncoderKind::Toy,
            features: None,
            vocab_size: toy.vocab_size,
            embed_dim: toy.embed_dim,
            hidden_dim: toy.hidden_dim,
            projection_dim: 128,
        }
    }
}

impl EncoderConfig {
    pub fn toy(&self) -> ToyEncoderConfig {
        ToyEncoderConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}

/// Training hyperparameters as written in the config file; the resolved
/// strategy is attached by [`RunConfig::train_config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: u32,
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub tau: f64,
    pub seed: u64,
    /// Non-positive disables clipping.
    pub grad_clip: f64,
    pub ce_on_views: bool,
    pub weight_ce: f64,
    pub weight_con: f64,
    pub weight_ent: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            epochs: t.epochs,
            batch_pairs: t.batch_pairs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            warmup_fraction: t.warmup_fraction,
            tau: t.tau.value(),
            seed: t.seed,
            grad_clip: t.grad_clip.unwrap_or(0.0),
            ce_on_views: t.ce_on_views,
            weight_ce: t.weights.ce,
            weight_con: t.weights.con,
            weight_ent: t.weights.ent,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySettings {
    pub choice: StrategyChoice,
    pub threshold: f64,
    pub allow_ablation: bool,
    pub entropy_start_epoch: u32,
}

impl Default for StrategySettings {
    fn default() -> Self {
        StrategySettings {
            choice: StrategyChoice::Auto,
            threshold: DEFAULT_THRESHOLD,
            allow_ablation: false,
            entropy_start_epoch: DEFAULT_ENTROPY_START_EPOCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub augment: AugmentationConfig,
    pub train: TrainSettings,
    pub strategy: StrategySettings,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Reads `path` (or starts from defaults) and applies `key=value`
    /// overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                raw.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config = Self::from_table(table)?;
        config.validate()?;
        Ok(config)
    }

    /// Applies one `section.key=value` override to an already-built config.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        apply_override(&mut table, assignment)?;
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        Temperature::new(self.train.tau)?;
        if let Some(r) = self.data.target_ratio {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("data.target_ratio must be positive, got {r}")));
            }
        }
        if !(self.strategy.threshold > 1.0) {
            return Err(Error::Config("strategy.threshold must exceed 1".into()));
        }
        if self.encoder.kind == EncoderKind::Pretrained && self.encoder.features.is_none() {
            return Err(Error::Config("encoder.kind = pretrained needs encoder.features".into()));
        }
        Ok(())
    }

    /// Trainer configuration with the given resolved strategy.
    pub fn train_config(&self, strategy: StrategyConfig) -> Result<TrainConfig> {
        let t = &self.train;
        let config = TrainConfig {
            epochs: t.epochs,
            batch_pairs: t.batch_pairs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            warmup_fraction: t.warmup_fraction,
            tau: Temperature::new(t.tau)?,
            strategy,
            weights: LossWeights::new(t.weight_ce, t.weight_con, t.weight_ent)?,
            seed: t.seed,
            grad_clip: (t.grad_clip > 0.0).then_some(t.grad_clip),
            ce_on_views: t.ce_on_views,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
        };
        config.validate()?;
        Ok(config)
    }

    /// Freshly initialized network for this configuration, seeded by
    /// `train.seed`.
    pub fn build_network(&self) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        let encoder = match self.encoder.kind {
            EncoderKind::Toy => Encoder::Toy(ToyEncoder::new(self.encoder.toy(), &mut rng)?),
            EncoderKind::Pretrained => {
                let path = self
                    .encoder
                    .features
                    .as_ref()
                    .ok_or_else(|| Error::Config("encoder.kind = pretrained needs encoder.features".into()))?;
                Encoder::Precomputed(PrecomputedEncoder::load(path)?)
            }
        };
        let dims = HeadDims {
            projection_dim: self.encoder.projection_dim,
            ..HeadDims::for_hidden(encoder.hidden_dim())
        };
        Ok(Network::new(encoder, dims, &mut rng))
    }

    /// One `key = value` line per leaf, sorted by key. Unset optional
    /// fields are omitted.
    pub fn snapshot(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn hash(&self) -> String {
        hex_digest(self.snapshot().as_bytes())
    }

    /// Parses a snapshot back into a config.
    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut table = toml::Table::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Config(format!("malformed snapshot line {line:?}")))?;
            insert_dotted(&mut table, key, parse_value(value)?)?;
        }
        Self::from_table(table)
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => out.push(format!("{prefix} = {leaf}")),
    }
}

fn parse_value(raw: &str) -> Result<toml::Value> {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => Ok(t.remove("v").expect("key present")),
        Err(e) => Err(Error::Config(format!("bad value {raw:?}: {e}"))),
    }
}

fn insert_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {s} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// `section.key=value`; values that are not valid TOML literals are taken as
/// strings.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let raw = raw.trim();
    let value = parse_value(raw).unwrap_or_else(|_| toml::Value::String(raw.to_string()));
    insert_dotted(table, key.trim(), value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_trainer_defaults() {
        let rc = RunConfig::default();
        let tc = rc.train_config(StrategyConfig::default()).unwrap();
        assert_eq!(tc, TrainConfig::default());
    }

    #[test]
    fn file_and_overrides() {
        let text = "[train]\nepochs = 2\n[data]\nsource = \"a.jsonl\"\n";
        let rc = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(rc.train.epochs, 2);
        let rc2 = rc.with_override("train.batch_pairs=8").unwrap();
        assert_eq!(rc2.train.batch_pairs, 8);
        let rc3 = rc.with_override("data.target=b.jsonl").unwrap();
        assert_eq!(rc3.data.target, Some(PathBuf::from("b.jsonl")));
        let rc4 = rc.with_override("strategy.choice=in-domain").unwrap();
        assert_eq!(rc4.strategy.choice, StrategyChoice::InDomain);
        assert!(rc.with_override("train.nope=1").is_err());
        assert!(rc.with_override("noequals").is_err());
    }

    #[test]
    fn snapshot_round_trips_and_hash_tracks_changes() {
        let rc = RunConfig::default().with_override("data.source=x.jsonl").unwrap();
        let snap = rc.snapshot();
        assert!(snap.contains("train.epochs = 4\n"));
        assert!(snap.lines().collect::<Vec<_>>().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(RunConfig::from_snapshot(&snap).unwrap(), rc);
        assert_eq!(rc.hash(), rc.clone().hash());
        assert_ne!(rc.hash(), rc.with_override("train.seed=1").unwrap().hash());
        assert_eq!(rc.hash().len(), 64);
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().with_override("encoder.kind=pretrained").unwrap().validate().is_err());
        assert!(RunConfig::default().with_override("strategy.threshold=0.5").unwrap().validate().is_err());
    }
}

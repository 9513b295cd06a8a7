//! Synthetic two-domain sentiment corpora and a small transfer experiment
//! harness built on them.
//!
//! Each document mixes topic words drawn from its domain's private
//! vocabulary with sentiment words. Sentiment words are either shared by
//! both domains or private to one domain. Source documents lean on shared
//! sentiment words, target documents mostly on their own, so a classifier
//! fitted to the source alone only partly transfers. The generated lexicon
//! links every private sentiment word to shared words of the same polarity,
//! which is what synonym substitution exploits.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentMethod, AugmentationConfig, Augmenter, Lexicon};
use crate::corpus::{label_distribution, Document, DomainCorpus, Label, LabelDistribution, LabeledDocument};
use crate::error::{Error, Result};
use crate::evalviz::{evaluate_network, EvalReport};
use crate::model::{Encoder, HeadDims, Network, ToyEncoder, ToyEncoderConfig};
use crate::strategy::{measure_shift, resolve_strategy, ShiftMeasure, StrategyChoice, StrategyConfig};
use crate::trainer::{fit, LossReport, TrainConfig, TrainData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub source_domain: String,
    pub target_domain: String,
    /// Labeled source documents, split evenly between the classes.
    pub n_source: usize,
    pub n_target: usize,
    /// Held-out labeled target documents, split evenly between the classes.
    pub n_target_test: usize,
    /// Positive-to-negative ratio of the unlabeled target pool.
    pub target_pos_ratio: f64,
    pub topic_vocab: usize,
    /// Private sentiment words per polarity per domain.
    pub private_sentiment: usize,
    pub topic_tokens: usize,
    pub sentiment_tokens: usize,
    /// Probability that a sentiment token is a shared word.
    pub source_shared_rate: f64,
    pub target_shared_rate: f64,
    /// Probability that a sentiment token has the opposite polarity.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            source_domain: "alpha".into(),
            target_domain: "beta".into(),
            n_source: 2000,
            n_target: 3000,
            n_target_test: 1000,
            target_pos_ratio: 1.0,
            topic_vocab: 200,
            private_sentiment: 12,
            topic_tokens: 3,
            sentiment_tokens: 4,
            source_shared_rate: 0.6,
            target_shared_rate: 0.15,
            noise_rate: 0.15,
            seed: 0,
        }
    }
}

pub const SHARED_POSITIVE: [&str; 6] = ["good", "great", "excellent", "love", "wonderful", "best"];
pub const SHARED_NEGATIVE: [&str; 6] = ["bad", "poor", "terrible", "hate", "awful", "worst"];

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub config: SyntheticConfig,
    /// Labeled source pool; no unlabeled part.
    pub source: DomainCorpus,
    /// Unlabeled target pool.
    pub target: DomainCorpus,
    /// Hidden labels of the unlabeled target pool, in order.
    pub target_hidden_labels: Vec<Label>,
    pub target_test: Vec<LabeledDocument>,
    pub lexicon: Lexicon,
}

impl SyntheticData {
    pub fn source_distribution(&self) -> Result<LabelDistribution> {
        label_distribution(&self.source.labeled)
    }

    pub fn target_distribution(&self) -> Result<LabelDistribution> {
        let n_pos = self.target_hidden_labels.iter().filter(|&&l| l == Label::Positive).count();
        LabelDistribution::new(n_pos as u64, (self.target_hidden_labels.len() - n_pos) as u64)
    }

    pub fn shift(&self) -> Result<ShiftMeasure> {
        measure_shift(&self.source_distribution()?, &self.target_distribution()?)
    }
}

struct Vocab {
    topic: Vec<String>,
    positive: Vec<String>,
    negative: Vec<String>,
}

fn vocab(domain: &str, config: &SyntheticConfig) -> Vocab {
    Vocab {
        topic: (0..config.topic_vocab).map(|i| format!("{domain}topic{i}")).collect(),
        positive: (0..config.private_sentiment).map(|i| format!("{domain}pos{i}")).collect(),
        negative: (0..config.private_sentiment).map(|i| format!("{domain}neg{i}")).collect(),
    }
}

fn sentence(vocab: &Vocab, label: Label, shared_rate: f64, config: &SyntheticConfig, rng: &mut impl Rng) -> String {
    let mut tokens: Vec<&str> = (0..config.topic_tokens)
        .map(|_| vocab.topic.choose(rng).expect("topic vocab").as_str())
        .collect();
    for _ in 0..config.sentiment_tokens {
        let flipped = rng.gen_bool(config.noise_rate);
        let positive = (label == Label::Positive) != flipped;
        let word = if rng.gen_bool(shared_rate) {
            let pool: &[&str] = if positive { &SHARED_POSITIVE } else { &SHARED_NEGATIVE };
            *pool.choose(rng).expect("shared pool")
        } else {
            let pool = if positive { &vocab.positive } else { &vocab.negative };
            pool.choose(rng).expect("private pool").as_str()
        };
        tokens.push(word);
    }
    tokens.shuffle(rng);
    tokens.join(" ")
}

fn balanced_labels(n: usize, rng: &mut impl Rng) -> Vec<Label> {
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n / 2 { Label::Positive } else { Label::Negative })
        .collect();
    labels.shuffle(rng);
    labels
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    if config.n_source < 2 || config.n_target < 1 || config.n_target_test < 2 {
        return Err(Error::InvalidArgument("synthetic pools are too small".into()));
    }
    if !(config.target_pos_ratio > 0.0 && config.target_pos_ratio.is_finite()) {
        return Err(Error::InvalidArgument("target_pos_ratio must be positive".into()));
    }
    for (name, p) in [
        ("source_shared_rate", config.source_shared_rate),
        ("target_shared_rate", config.target_shared_rate),
        ("noise_rate", config.noise_rate),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name} {p} outside [0, 1]")));
        }
    }
    if config.topic_vocab == 0 || config.private_sentiment == 0 || config.sentiment_tokens == 0 {
        return Err(Error::InvalidArgument("synthetic vocabularies must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let src_vocab = vocab(&config.source_domain, config);
    let tgt_vocab = vocab(&config.target_domain, config);

    let source_labeled = balanced_labels(config.n_source, &mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let text = sentence(&src_vocab, label, config.source_shared_rate, config, &mut rng);
            Ok(LabeledDocument::new(
                Document::new(format!("{}-{i}", config.source_domain), text, &config.source_domain)?,
                label,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_pos = ((config.n_target as f64) * config.target_pos_ratio / (1.0 + config.target_pos_ratio)).round() as usize;
    let mut hidden: Vec<Label> = (0..config.n_target)
        .map(|i| if i < n_pos { Label::Positive } else { Label::Negative })
        .collect();
    hidden.shuffle(&mut rng);
    let target_unlabeled = hidden
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let text = sentence(&tgt_vocab, label, config.target_shared_rate, config, &mut rng);
            Document::new(format!("{}-u{i}", config.target_domain), text, &config.target_domain)
        })
        .collect::<Result<Vec<_>>>()?;

    let target_test = balanced_labels(config.n_target_test, &mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let text = sentence(&tgt_vocab, label, config.target_shared_rate, config, &mut rng);
            Ok(LabeledDocument::new(
                Document::new(format!("{}-t{i}", config.target_domain), text, &config.target_domain)?,
                label,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut lexicon = Lexicon::new();
    for v in [&src_vocab, &tgt_vocab] {
        for (private, shared) in [(&v.positive, &SHARED_POSITIVE), (&v.negative, &SHARED_NEGATIVE)] {
            for (i, word) in private.iter().enumerate() {
                let a = shared[i % shared.len()];
                let b = shared[(i + 1) % shared.len()];
                lexicon.insert_group(&[word.as_str(), a, b]);
            }
        }
    }

    Ok(SyntheticData {
        config: config.clone(),
        source: DomainCorpus::new(&config.source_domain, source_labeled, Vec::new())?,
        target: DomainCorpus::new(&config.target_domain, Vec::new(), target_unlabeled)?,
        target_hidden_labels: hidden,
        target_test,
        lexicon,
    })
}

/// Settings for one synthetic training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRun {
    pub train: TrainConfig,
    pub encoder: ToyEncoderConfig,
    /// Seeds parameter initialization and augmentation.
    pub seed: u64,
}

impl TransferRun {
    /// Toy-scale defaults: a small encoder and a learning rate suited to
    /// randomly initialized embeddings.
    pub fn toy(strategy: StrategyConfig, seed: u64) -> Self {
        TransferRun {
            train: TrainConfig {
                learning_rate: 5e-3,
                strategy,
                seed,
                ..TrainConfig::default()
            },
            encoder: ToyEncoderConfig {
                vocab_size: 4096,
                embed_dim: 32,
                hidden_dim: 32,
            },
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    pub report: EvalReport,
    pub reports: Vec<LossReport>,
    pub network: Network,
}

pub fn toy_network(encoder: ToyEncoderConfig, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = ToyEncoder::new(encoder, &mut rng)?;
    Ok(Network::new(Encoder::Toy(enc), HeadDims::for_hidden(encoder.hidden_dim), &mut rng))
}

/// Trains on the synthetic pools with synonym-substitution views and
/// reports accuracy on the held-out target set.
pub fn run_transfer(data: &SyntheticData, run: &TransferRun) -> Result<TransferResult> {
    let augmenter = Augmenter::synonyms(
        AugmentationConfig {
            method: AugmentMethod::SynonymSubstitution,
            seed: run.seed,
            ..AugmentationConfig::default()
        },
        Arc::new(data.lexicon.clone()),
    )?;
    let network = toy_network(run.encoder, run.seed)?;
    let train_data = TrainData {
        source: &data.source.labeled,
        target: &data.target.unlabeled,
        augmenter: &augmenter,
    };
    let (network, reports) = fit(network, &train_data, &run.train)?;
    let report = evaluate_network(&network, &data.target_test, &run.train.hash())?;
    Ok(TransferResult {
        report,
        reports,
        network,
    })
}

/// Strategy chosen by the automatic rule for this data's label shift.
pub fn auto_strategy(data: &SyntheticData, threshold: f64) -> Result<StrategyConfig> {
    let shift = data.shift()?;
    resolve_strategy(StrategyChoice::Auto, Some(&shift), threshold, false, crate::strategy::DEFAULT_ENTROPY_START_EPOCH)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::SynonymProvider;

    #[test]
    fn sizes_and_ratio() {
        let data = generate(&SyntheticConfig {
            target_pos_ratio: 7.0,
            ..SyntheticConfig::default()
        })
        .unwrap();
        assert_eq!(data.source.labeled.len(), 2000);
        assert_eq!(data.target.unlabeled.len(), 3000);
        assert_eq!(data.target_test.len(), 1000);
        let src = data.source_distribution().unwrap();
        assert_eq!((src.n_pos, src.n_neg), (1000, 1000));
        let tgt = data.target_distribution().unwrap();
        assert_eq!(tgt.n_pos, 2625);
        assert!((data.shift().unwrap().shift - 7.0).abs() < 1e-12);
    }

    #[test]
    fn vocabularies_are_disjoint_except_shared_sentiment() {
        let data = generate(&SyntheticConfig::default()).unwrap();
        let words = |docs: Vec<&Document>| {
            docs.iter()
                .flat_map(|d| d.text.split(' ').map(str::to_string).collect::<Vec<_>>())
                .collect::<std::collections::BTreeSet<_>>()
        };
        let src = words(data.source.labeled.iter().map(|d| &d.base).collect());
        let tgt = words(data.target.unlabeled.iter().collect());
        for w in src.intersection(&tgt) {
            assert!(SHARED_POSITIVE.contains(&w.as_str()) || SHARED_NEGATIVE.contains(&w.as_str()), "{w}");
        }
        assert!(!data.lexicon.lookup("betapos3").is_empty());
        assert!(data.lexicon.lookup("betapos3").iter().all(|w| SHARED_POSITIVE.contains(&w.as_str())));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&SyntheticConfig::default()).unwrap();
        let b = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target_test, b.target_test);
    }
}

//! Batch construction, the learning-rate schedule, single optimization
//! steps, and the epoch loop with checkpointing and resume.
//!
//! Each step samples `N` labeled source documents and `N` unlabeled target
//! documents, pairs every document with its positive view, and encodes all
//! `4N` texts with the shared network. Rows are laid out as
//! `[s1, s1', s2, s2', ..., t1, t1', ...]`.
//!
//! * cross-entropy: original source rows (augmented views too with
//!   `ce_on_views`)
//! * contrastive: all `4N` rows at once (pooled) or the two `2N` halves
//!   separately (in-domain)
//! * entropy: every target row, only once `epoch >= entropy_start_epoch`

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::Augmenter;
use crate::checkpoint::{self, CheckpointManifest, EncoderSpec};
use crate::corpus::{Document, LabeledDocument};
use crate::error::{Error, Result};
use crate::losses::{
    contrastive_loss_with_grad, cross_entropy_with_grad, in_domain_contrastive_loss_with_grad, joint_loss,
    prediction_entropy_with_grad, LossWeights, ProjectionBatch, Temperature,
};
use crate::model::{Network, TextEncoder};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig};
use crate::strategy::{ContrastiveMode, StrategyConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    /// Pairs sampled per domain per step (`N`).
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub tau: Temperature,
    pub strategy: StrategyConfig,
    pub weights: LossWeights,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Also apply cross-entropy to the augmented source views.
    pub ce_on_views: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_pairs: 16,
            learning_rate: 2e-5,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
            tau: Temperature::default(),
            strategy: StrategyConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            grad_clip: Some(1.0),
            ce_on_views: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_pairs < 1 {
            return Err(Error::InvalidArgument("batch_pairs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidArgument(format!(
                "warmup_fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be finite and >= 0".into()));
        }
        if self.strategy.entropy_start_epoch < 1 {
            return Err(Error::InvalidArgument("entropy_start_epoch must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("grad_clip must be positive".into()));
            }
        }
        self.weights.validate()
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `ceil(warmup_fraction * total_steps)`, treating products within float
/// noise of an integer as that integer (`0.1 * 30` is 3, not 4).
pub fn warmup_steps(total_steps: u64, warmup_fraction: f64) -> u64 {
    let x = warmup_fraction * total_steps as f64;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Linear warmup from 0 to the peak rate over the first
/// `ceil(warmup_fraction * total_steps)` steps, then linear decay to 0 at
/// `total_steps`.
pub fn lr_at(step: u64, total_steps: u64, config: &TrainConfig) -> Result<f64> {
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond total {total_steps}")));
    }
    let peak = config.learning_rate;
    let warmup = warmup_steps(total_steps, config.warmup_fraction);
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let decay_span = total_steps - warmup;
    if decay_span == 0 || step == warmup {
        return Ok(peak);
    }
    Ok(peak * (total_steps - step) as f64 / decay_span as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePair {
    pub original: LabeledDocument,
    pub positive: Document,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetPair {
    pub original: Document,
    pub positive: Document,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub source_pairs: Vec<SourcePair>,
    pub target_pairs: Vec<TargetPair>,
    /// Set when a pool was smaller than one batch and had to be sampled with
    /// replacement.
    pub sampled_with_replacement: bool,
}

impl MixedBatch {
    /// Row order fed to the network.
    pub fn documents(&self) -> Vec<&Document> {
        let src = self.source_pairs.iter().flat_map(|p| [&p.original.base, &p.positive]);
        let tgt = self.target_pairs.iter().flat_map(|p| [&p.original, &p.positive]);
        src.chain(tgt).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.documents().iter().map(|d| d.id.clone()).collect()
    }
}

/// Shuffled walk over a pool, reshuffling whenever it runs out.
#[derive(Debug, Clone)]
struct PoolCursor {
    order: Vec<usize>,
    pos: usize,
}

impl PoolCursor {
    fn new(len: usize, rng: &mut impl Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        PoolCursor { order, pos: 0 }
    }

    fn take(&mut self, n: usize, rng: &mut impl Rng) -> (Vec<usize>, bool) {
        let len = self.order.len();
        if len < n {
            return ((0..n).map(|_| rng.gen_range(0..len)).collect(), true);
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos == len {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        (out, false)
    }
}

/// Draws consecutive batches for one epoch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    source: PoolCursor,
    target: PoolCursor,
}

impl BatchSampler {
    pub fn new(source: &[LabeledDocument], target: &[Document], rng: &mut impl Rng) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::EmptyInput("source pool has no labeled documents"));
        }
        if target.is_empty() {
            return Err(Error::EmptyInput("target pool has no unlabeled documents"));
        }
        Ok(BatchSampler {
            source: PoolCursor::new(source.len(), rng),
            target: PoolCursor::new(target.len(), rng),
        })
    }

    pub fn next_batch<R: Rng>(
        &mut self,
        source: &[LabeledDocument],
        target: &[Document],
        n: usize,
        augmenter: &Augmenter,
        rng: &mut R,
    ) -> Result<MixedBatch> {
        let (src_idx, src_repl) = self.source.take(n, rng);
        let (tgt_idx, tgt_repl) = self.target.take(n, rng);
        if src_repl {
            log::warn!("source pool ({}) smaller than batch ({n}); sampling with replacement", source.len());
        }
        if tgt_repl {
            log::warn!("target pool ({}) smaller than batch ({n}); sampling with replacement", target.len());
        }
        let augment = |doc: &Document, rng: &mut R| {
            augmenter.make_positive(doc, rng).map_err(|e| match e {
                Error::CacheMiss(_) => e,
                other => Error::Validation(format!("augmenting {}: {other}", doc.id)),
            })
        };
        let mut source_pairs = Vec::with_capacity(n);
        for i in src_idx {
            let original = source[i].clone();
            let positive = augment(&original.base, rng)?;
            source_pairs.push(SourcePair { original, positive });
        }
        let mut target_pairs = Vec::with_capacity(n);
        for i in tgt_idx {
            let original = target[i].clone();
            let positive = augment(&original, rng)?;
            target_pairs.push(TargetPair { original, positive });
        }
        Ok(MixedBatch {
            source_pairs,
            target_pairs,
            sampled_with_replacement: src_repl || tgt_repl,
        })
    }
}

/// Samples one batch of `n` source and `n` target pairs.
pub fn build_batch<R: Rng>(
    source: &[LabeledDocument],
    target: &[Document],
    n: usize,
    augmenter: &Augmenter,
    rng: &mut R,
) -> Result<MixedBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("batch needs at least one pair per domain".into()));
    }
    let mut sampler = BatchSampler::new(source, target, rng)?;
    sampler.next_batch(source, target, n, augmenter, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// 1-based.
    pub epoch: u32,
    /// Optimizer steps taken so far.
    pub global_step: u64,
    pub total_steps: u64,
    pub steps_per_epoch: u64,
    pub lr_current: f64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(total_steps: u64, steps_per_epoch: u64, seed: u64) -> Self {
        TrainState {
            epoch: 1,
            global_step: 0,
            total_steps,
            steps_per_epoch,
            lr_current: 0.0,
            seed,
        }
    }
}

/// Raw objective values and their weighted contributions for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub epoch: u32,
    pub lr: f64,
    pub ce: f64,
    pub con: f64,
    pub ent: f64,
    pub ce_contribution: f64,
    pub con_contribution: f64,
    /// Exactly 0 while entropy minimization is gated off.
    pub entropy_contribution: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// One metrics-log line. Each objective column is its weighted
/// contribution to `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: u32,
    pub lr: f64,
    pub ce: f64,
    pub con: f64,
    pub ent: f64,
    pub total: f64,
}

impl From<&LossReport> for MetricsRecord {
    fn from(r: &LossReport) -> Self {
        MetricsRecord {
            step: r.step,
            epoch: r.epoch,
            lr: r.lr,
            ce: r.ce_contribution,
            con: r.con_contribution,
            ent: r.entropy_contribution,
            total: r.total,
        }
    }
}

pub fn entropy_active(strategy: &StrategyConfig, epoch: u32) -> bool {
    strategy.entropy_enabled && epoch >= strategy.entropy_start_epoch
}

/// Forward, loss, backward, clip, and one AdamW update.
pub fn train_step(
    batch: &MixedBatch,
    network: &mut Network,
    optimizer: &mut AdamW,
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<LossReport> {
    if state.epoch < 1 {
        return Err(Error::InvalidArgument("epoch counter starts at 1".into()));
    }
    let n_src = batch.source_pairs.len();
    let n_tgt = batch.target_pairs.len();
    if n_src == 0 || n_tgt == 0 {
        return Err(Error::EmptyInput("batch needs pairs from both domains"));
    }
    let docs = batch.documents();
    let fp = network.forward(&docs)?;
    let src_rows = 2 * n_src;
    let rows = docs.len();

    let src_domain = &batch.source_pairs[0].original.base.domain;
    let tgt_domain = &batch.target_pairs[0].original.domain;
    let z_src = ProjectionBatch::single_domain(fp.projections.slice(s![..src_rows, ..]).to_owned(), src_domain)?;
    let z_tgt = ProjectionBatch::single_domain(fp.projections.slice(s![src_rows.., ..]).to_owned(), tgt_domain)?;
    let (con, d_proj) = match config.strategy.contrastive_mode {
        ContrastiveMode::Pooled => contrastive_loss_with_grad(&z_src.concat(&z_tgt)?, config.tau)?,
        ContrastiveMode::InDomain => {
            let (loss, gs, gt) = in_domain_contrastive_loss_with_grad(&z_src, &z_tgt, config.tau)?;
            let grad = ndarray::concatenate(Axis(0), &[gs.view(), gt.view()]).expect("matching widths");
            (loss, grad)
        }
    };

    let ce_rows: Vec<usize> = if config.ce_on_views {
        (0..src_rows).collect()
    } else {
        (0..src_rows).step_by(2).collect()
    };
    let ce_labels: Vec<usize> = ce_rows
        .iter()
        .map(|&r| batch.source_pairs[r / 2].original.label.index())
        .collect();
    let (ce, d_ce) = cross_entropy_with_grad(fp.logits.select(Axis(0), &ce_rows).view(), &ce_labels)?;

    let ent_rows: Vec<usize> = (src_rows..rows).collect();
    let (ent, d_ent) = prediction_entropy_with_grad(fp.logits.select(Axis(0), &ent_rows).view())?;
    let active = entropy_active(&config.strategy, state.epoch);

    let w = config.weights;
    let total = joint_loss(ce, con, ent, &w, active);
    if !total.is_finite() || !ce.is_finite() || !con.is_finite() || !ent.is_finite() {
        return Err(Error::NonFinite {
            step: state.global_step,
            ids: batch.ids(),
        });
    }

    let mut d_logits = Array2::<f64>::zeros(fp.logits.raw_dim());
    for (k, &r) in ce_rows.iter().enumerate() {
        let mut row = d_logits.row_mut(r);
        row.scaled_add(w.ce, &d_ce.row(k));
    }
    if active {
        for (k, &r) in ent_rows.iter().enumerate() {
            let mut row = d_logits.row_mut(r);
            row.scaled_add(w.ent, &d_ent.row(k));
        }
    }
    let d_proj = d_proj * w.con;
    let mut grads = network.backward(&fp.tape, d_proj.view(), d_logits.view());
    let grad_norm = match config.grad_clip {
        Some(max) => clip_global_norm(&mut grads, max),
        None => crate::optim::global_norm(&grads),
    };

    let lr = lr_at(state.global_step, state.total_steps, config)?;
    optimizer.step(network, &grads, lr)?;
    let report = LossReport {
        step: state.global_step,
        epoch: state.epoch,
        lr,
        ce,
        con,
        ent,
        ce_contribution: w.ce * ce,
        con_contribution: w.con * con,
        entropy_contribution: if active { w.ent * ent } else { 0.0 },
        total,
        grad_norm,
    };
    state.lr_current = lr;
    state.global_step += 1;
    Ok(report)
}

/// Steps per epoch: one pass over the larger pool, the smaller one cycled.
pub fn steps_per_epoch(source_len: usize, target_len: usize, batch_pairs: usize) -> u64 {
    source_len.max(target_len).div_ceil(batch_pairs) as u64
}

/// RNG for one epoch; independent of every other epoch's stream so a run
/// resumed from an epoch checkpoint replays exactly.
pub fn epoch_rng(seed: u64, epoch: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

pub struct TrainData<'a> {
    pub source: &'a [LabeledDocument],
    pub target: &'a [Document],
    pub augmenter: &'a Augmenter,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub config_hash: String,
    /// Epoch checkpoint to continue from.
    pub resume_from: Option<PathBuf>,
    /// Path of the feature file when the encoder is precomputed.
    pub encoder_features: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    /// Reports of the steps executed by this call (not replayed ones).
    pub reports: Vec<LossReport>,
    pub state: TrainState,
    pub network: Network,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";

pub fn checkpoint_dir(out_dir: &Path, epoch: u32) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch-{epoch}"))
}

pub fn final_checkpoint_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoints").join("final")
}

/// Latest `epoch-k` checkpoint under `out_dir`, if any.
pub fn latest_epoch_checkpoint(out_dir: &Path, max_epoch: u32) -> Option<PathBuf> {
    (1..=max_epoch)
        .rev()
        .map(|e| checkpoint_dir(out_dir, e))
        .find(|dir| dir.join(checkpoint::MANIFEST).exists())
}

/// Keeps only metrics lines from epochs `<= epoch`.
fn truncate_metrics(path: &Path, epoch: u32) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(&line)?;
        if rec.epoch <= epoch {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Runs one epoch of `state.steps_per_epoch` steps, passing each report to
/// `on_step`.
pub fn run_epoch(
    network: &mut Network,
    optimizer: &mut AdamW,
    state: &mut TrainState,
    data: &TrainData<'_>,
    config: &TrainConfig,
    epoch: u32,
    on_step: &mut dyn FnMut(&LossReport) -> Result<()>,
) -> Result<()> {
    state.epoch = epoch;
    let mut rng = epoch_rng(config.seed, epoch);
    let mut sampler = BatchSampler::new(data.source, data.target, &mut rng)?;
    for _ in 0..state.steps_per_epoch {
        let batch = sampler.next_batch(data.source, data.target, config.batch_pairs, data.augmenter, &mut rng)?;
        let report = train_step(&batch, network, optimizer, config, state)?;
        on_step(&report)?;
    }
    Ok(())
}

/// The full schedule in memory, without checkpoints or logs.
pub fn fit(mut network: Network, data: &TrainData<'_>, config: &TrainConfig) -> Result<(Network, Vec<LossReport>)> {
    config.validate()?;
    if data.source.is_empty() {
        return Err(Error::EmptyInput("source pool has no labeled documents"));
    }
    if data.target.is_empty() {
        return Err(Error::EmptyInput("target pool has no unlabeled documents"));
    }
    let spe = steps_per_epoch(data.source.len(), data.target.len(), config.batch_pairs);
    let mut state = TrainState::new(spe * config.epochs as u64, spe, config.seed);
    let mut optimizer = AdamW::new(config.adamw(), &network);
    let mut reports = Vec::with_capacity(state.total_steps as usize);
    for epoch in 1..=config.epochs {
        run_epoch(&mut network, &mut optimizer, &mut state, data, config, epoch, &mut |r| {
            reports.push(*r);
            Ok(())
        })?;
    }
    Ok((network, reports))
}

/// Runs `epochs * steps_per_epoch` steps, writing a checkpoint after every
/// epoch, a `final` checkpoint, and one metrics line per step. With
/// `resume_from`, continues after that epoch checkpoint.
pub fn train(
    mut network: Network,
    data: &TrainData<'_>,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.source.is_empty() {
        return Err(Error::EmptyInput("source pool has no labeled documents"));
    }
    if data.target.is_empty() {
        return Err(Error::EmptyInput("target pool has no unlabeled documents"));
    }
    let out = &options.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join(METRICS_FILE);

    let spe = steps_per_epoch(data.source.len(), data.target.len(), config.batch_pairs);
    let total = spe * config.epochs as u64;
    let mut state = TrainState::new(total, spe, config.seed);
    let mut optimizer = AdamW::new(config.adamw(), &network);
    let mut start_epoch = 1;

    if let Some(dir) = &options.resume_from {
        let ck = checkpoint::load_checkpoint(dir)?;
        let epoch = ck.manifest.epoch;
        if ck.manifest.config_hash != options.config_hash {
            return Err(Error::ManifestMismatch(format!(
                "checkpoint {} was written by config {}, current config is {}",
                dir.display(),
                ck.manifest.config_hash,
                options.config_hash
            )));
        }
        network = ck.network;
        if epoch >= config.epochs {
            return Err(Error::Checkpoint(format!(
                "{} already holds epoch {epoch} of {}",
                dir.display(),
                config.epochs
            )));
        }
        optimizer = checkpoint::load_optimizer(dir, &network, config.adamw())?;
        state.global_step = ck.manifest.global_step;
        state.epoch = epoch;
        start_epoch = epoch + 1;
        truncate_metrics(&metrics_path, epoch)?;
        log::info!("resuming after epoch {epoch} (step {})", state.global_step);
    } else {
        std::fs::write(&metrics_path, "").map_err(|e| Error::io(&metrics_path, e))?;
    }
    let snapshot = serde_json::to_string_pretty(config)?;
    write_text(&out.join(TRAIN_CONFIG_FILE), &snapshot)?;

    let encoder_spec: EncoderSpec = checkpoint::encoder_spec(&network.encoder, options.encoder_features.as_deref())?;
    let domains = vec![
        data.source[0].base.domain.clone(),
        data.target[0].domain.clone(),
    ];
    let file = std::fs::OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = std::io::BufWriter::new(file);
    let mut reports = Vec::new();

    for epoch in start_epoch..=config.epochs {
        run_epoch(&mut network, &mut optimizer, &mut state, data, config, epoch, &mut |report| {
            serde_json::to_writer(&mut metrics, &MetricsRecord::from(report))?;
            metrics.write_all(b"\n").map_err(|e| Error::io(&metrics_path, e))?;
            reports.push(*report);
            Ok(())
        })?;
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
        let manifest = CheckpointManifest {
            encoder_id: network.encoder.id(),
            encoder: encoder_spec.clone(),
            hidden_dim: network.encoder.hidden_dim(),
            heads: network.dims(),
            epoch,
            global_step: state.global_step,
            config_hash: options.config_hash.clone(),
            strategy: config.strategy,
            domains: domains.clone(),
            optimizer: Some(config.adamw()),
        };
        let dir = checkpoint_dir(out, epoch);
        checkpoint::save_checkpoint(&dir, &network, Some(&optimizer), &manifest)?;
        write_text(&dir.join(TRAIN_CONFIG_FILE), &snapshot)?;
        log::info!(
            "epoch {epoch}/{} done (step {}, lr {:.3e})",
            config.epochs,
            state.global_step,
            state.lr_current
        );
    }

    let final_dir = final_checkpoint_dir(out);
    let manifest = CheckpointManifest {
        encoder_id: network.encoder.id(),
        encoder: encoder_spec,
        hidden_dim: network.encoder.hidden_dim(),
        heads: network.dims(),
        epoch: config.epochs,
        global_step: state.global_step,
        config_hash: options.config_hash.clone(),
        strategy: config.strategy,
        domains,
        optimizer: Some(config.adamw()),
    };
    checkpoint::save_checkpoint(&final_dir, &network, Some(&optimizer), &manifest)?;
    write_text(&final_dir.join(TRAIN_CONFIG_FILE), &snapshot)?;

    Ok(TrainOutcome {
        final_checkpoint: final_dir,
        metrics_path,
        reports,
        state,
        network,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AugmentationConfig, Lexicon};
    use crate::model::{Encoder, HeadDims, ToyEncoder, ToyEncoderConfig};
    use std::sync::Arc;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn schedule_examples() {
        let c = cfg();
        assert_eq!(lr_at(0, 400, &c).unwrap(), 0.0);
        assert_eq!(lr_at(40, 400, &c).unwrap(), 2e-5);
        assert_eq!(lr_at(400, 400, &c).unwrap(), 0.0);
        assert!((lr_at(20, 400, &c).unwrap() - 1e-5).abs() < 1e-20);
        assert!((lr_at(220, 400, &c).unwrap() - 1e-5).abs() < 1e-20);
        assert!(lr_at(401, 400, &c).is_err());
        assert_eq!(warmup_steps(400, 0.1), 40);
        assert_eq!(warmup_steps(395, 0.1), 40);
        assert_eq!(warmup_steps(30, 0.1), 3);
        assert_eq!(warmup_steps(31, 0.1), 4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { warmup_fraction: 1.0, ..cfg() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..cfg() }.validate().is_err());
        assert!(TrainConfig { batch_pairs: 0, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
        assert_ne!(cfg().hash(), TrainConfig { seed: 1, ..cfg() }.hash());
    }

    fn pools() -> (Vec<LabeledDocument>, Vec<Document>) {
        use crate::corpus::Label;
        let src = (0..10)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
                LabeledDocument::new(Document::new(format!("s{i}"), format!("good item {i}"), "src").unwrap(), label)
            })
            .collect();
        let tgt = (0..7)
            .map(|i| Document::new(format!("t{i}"), format!("fine thing {i}"), "tgt").unwrap())
            .collect();
        (src, tgt)
    }

    fn augmenter() -> Augmenter {
        let mut lex = Lexicon::new();
        lex.insert_group(&["good", "fine"]);
        Augmenter::synonyms(AugmentationConfig::default(), Arc::new(lex)).unwrap()
    }

    #[test]
    fn batch_counts_and_determinism() {
        let (src, tgt) = pools();
        let aug = augmenter();
        let b1 = build_batch(&src, &tgt, 4, &aug, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(b1.source_pairs.len(), 4);
        assert_eq!(b1.target_pairs.len(), 4);
        assert_eq!(b1.documents().len(), 16);
        assert!(!b1.sampled_with_replacement);
        let b2 = build_batch(&src, &tgt, 4, &aug, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn tiny_target_pool_samples_with_replacement() {
        let (src, tgt) = pools();
        let aug = augmenter();
        let b = build_batch(&src, &tgt[..1], 3, &aug, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(b.sampled_with_replacement);
        assert_eq!(b.target_pairs.len(), 3);
        assert!(b.target_pairs.iter().all(|p| p.original.id == "t0"));
    }

    #[test]
    fn epoch_covers_every_source_document() {
        let (src, tgt) = pools();
        let aug = augmenter();
        let mut rng = epoch_rng(3, 1);
        let mut sampler = BatchSampler::new(&src, &tgt, &mut rng).unwrap();
        let spe = steps_per_epoch(src.len(), tgt.len(), 3);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..spe {
            let b = sampler.next_batch(&src, &tgt, 3, &aug, &mut rng).unwrap();
            seen.extend(b.source_pairs.iter().map(|p| p.original.base.id.clone()));
        }
        assert_eq!(seen.len(), src.len());
    }

    fn network(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = ToyEncoder::new(
            ToyEncoderConfig {
                vocab_size: 128,
                embed_dim: 8,
                hidden_dim: 8,
            },
            &mut rng,
        )
        .unwrap();
        Network::new(
            Encoder::Toy(enc),
            HeadDims {
                projection_hidden: 8,
                projection_dim: 6,
                classifier_hidden: 8,
            },
            &mut rng,
        )
    }

    #[test]
    fn entropy_gated_in_first_epoch() {
        let (src, tgt) = pools();
        let aug = augmenter();
        let batch = build_batch(&src, &tgt, 3, &aug, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let config = TrainConfig {
            learning_rate: 1e-2,
            ..cfg()
        };
        let mut net = network(1);
        let mut opt = AdamW::new(config.adamw(), &net);
        let mut state = TrainState::new(10, 5, 0);
        let r1 = train_step(&batch, &mut net, &mut opt, &config, &mut state).unwrap();
        assert_eq!(r1.entropy_contribution, 0.0);
        assert!(r1.ent > 0.0);
        state.epoch = 2;
        let r2 = train_step(&batch, &mut net, &mut opt, &config, &mut state).unwrap();
        assert!(r2.entropy_contribution > 0.0);
        assert_eq!(state.global_step, 2);
    }

    #[test]
    fn baseline_weights_reduce_to_cross_entropy() {
        let (src, tgt) = pools();
        let aug = augmenter();
        let batch = build_batch(&src, &tgt, 3, &aug, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let config = TrainConfig {
            weights: LossWeights::new(1.0, 0.0, 0.0).unwrap(),
            ..cfg()
        };
        let mut net = network(1);
        let mut opt = AdamW::new(config.adamw(), &net);
        let mut state = TrainState::new(10, 5, 0);
        state.epoch = 3;
        let r = train_step(&batch, &mut net, &mut opt, &config, &mut state).unwrap();
        assert_eq!(r.total, r.ce);
    }

    #[test]
    fn identical_steps_give_identical_updates() {
        let (src, tgt) = pools();
        let aug = augmenter();
        let batch = build_batch(&src, &tgt, 3, &aug, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let config = TrainConfig {
            learning_rate: 1e-3,
            ..cfg()
        };
        let run = || {
            let mut net = network(9);
            let mut opt = AdamW::new(config.adamw(), &net);
            let mut state = TrainState::new(10, 5, 0);
            state.global_step = 3;
            train_step(&batch, &mut net, &mut opt, &config, &mut state).unwrap();
            net
        };
        assert_eq!(run(), run());
    }
}

//! Checkpoint directories: one little-endian `f64` blob per component plus a
//! JSON manifest describing dimensions, encoder, and run identity.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Encoder, HeadDims, Mlp, Network, Params, PrecomputedEncoder, TextEncoder, ToyEncoder, ToyEncoderConfig};
use crate::optim::{AdamW, AdamWConfig};
use crate::strategy::StrategyConfig;

pub const MANIFEST: &str = "manifest.json";
const ENCODER_BLOB: &str = "encoder.bin";
const HEAD_BLOB: &str = "head.bin";
const CLASSIFIER_BLOB: &str = "classifier.bin";
const OPTIMIZER_BLOB: &str = "optimizer.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    Toy { config: ToyEncoderConfig },
    Precomputed { features: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub encoder_id: String,
    pub encoder: EncoderSpec,
    pub hidden_dim: usize,
    pub heads: HeadDims,
    pub epoch: u32,
    pub global_step: u64,
    pub config_hash: String,
    pub strategy: StrategyConfig,
    /// Domains seen in training: source first, then target.
    pub domains: Vec<String>,
    pub optimizer: Option<AdamWConfig>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub dir: PathBuf,
    pub manifest: CheckpointManifest,
    pub network: Network,
}

fn write_blob(path: &Path, tensors: &[&[f64]]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for t in tensors {
        for v in t.iter() {
            out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path, mut tensors: Vec<&mut [f64]>) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let expected: usize = tensors.iter().map(|t| t.len() * 8).sum();
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{} holds {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut chunks = bytes.chunks_exact(8);
    for t in tensors.iter_mut() {
        for v in t.iter_mut() {
            let chunk = chunks.next().expect("length checked");
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(())
}

pub fn encoder_spec(encoder: &Encoder, features: Option<&Path>) -> Result<EncoderSpec> {
    match encoder {
        Encoder::Toy(e) => Ok(EncoderSpec::Toy { config: e.config }),
        Encoder::Precomputed(_) => features
            .map(|p| EncoderSpec::Precomputed { features: p.to_path_buf() })
            .ok_or_else(|| Error::Checkpoint("precomputed encoder needs its feature file path".into())),
    }
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    network: &Network,
    optimizer: Option<&AdamW>,
    manifest: &CheckpointManifest,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Encoder::Toy(e) = &network.encoder {
        write_blob(&dir.join(ENCODER_BLOB), &e.tensors())?;
    }
    write_blob(&dir.join(HEAD_BLOB), &network.head.tensors())?;
    write_blob(&dir.join(CLASSIFIER_BLOB), &network.classifier.tensors())?;
    if let Some(opt) = optimizer {
        let mut state: Vec<&[f64]> = Vec::new();
        let steps = [opt.steps as f64];
        state.push(&steps);
        state.extend(opt.first_moment.iter().map(Vec::as_slice));
        state.extend(opt.second_moment.iter().map(Vec::as_slice));
        write_blob(&dir.join(OPTIMIZER_BLOB), &state)?;
    }
    let manifest_path = dir.join(MANIFEST);
    let raw = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&manifest_path, raw).map_err(|e| Error::io(&manifest_path, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = dir.as_ref().join(MANIFEST);
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&raw)?)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    // Shapes come from the manifest; values are overwritten from the blobs.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let encoder = match &manifest.encoder {
        EncoderSpec::Toy { config } => {
            let mut e = ToyEncoder::new(*config, &mut rng)?;
            read_blob(&dir.join(ENCODER_BLOB), e.tensors_mut())?;
            Encoder::Toy(e)
        }
        EncoderSpec::Precomputed { features } => Encoder::Precomputed(PrecomputedEncoder::load(features)?),
    };
    if encoder.hidden_dim() != manifest.hidden_dim {
        return Err(Error::Checkpoint(format!(
            "encoder width {} does not match manifest {}",
            encoder.hidden_dim(),
            manifest.hidden_dim
        )));
    }
    let d = manifest.hidden_dim;
    let h = manifest.heads;
    let mut head = Mlp::new(d, h.projection_hidden, h.projection_dim, &mut rng);
    let mut classifier = Mlp::new(d, h.classifier_hidden, 2, &mut rng);
    read_blob(&dir.join(HEAD_BLOB), head.tensors_mut())?;
    read_blob(&dir.join(CLASSIFIER_BLOB), classifier.tensors_mut())?;
    Ok(Checkpoint {
        dir: dir.to_path_buf(),
        manifest,
        network: Network {
            encoder,
            head,
            classifier,
        },
    })
}

pub fn load_optimizer(dir: impl AsRef<Path>, network: &Network, config: AdamWConfig) -> Result<AdamW> {
    let mut opt = AdamW::new(config, network);
    let mut steps = [0.0];
    {
        let mut state: Vec<&mut [f64]> = vec![&mut steps];
        state.extend(opt.first_moment.iter_mut().map(Vec::as_mut_slice));
        state.extend(opt.second_moment.iter_mut().map(Vec::as_mut_slice));
        read_blob(&dir.as_ref().join(OPTIMIZER_BLOB), state)?;
    }
    opt.steps = steps[0] as u64;
    Ok(opt)
}

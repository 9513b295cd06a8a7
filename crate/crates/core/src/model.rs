//! Encoder, projection head, and sentiment classifier.
//!
//! The encoder maps each document to a hidden feature `h`. The projection
//! head maps `h` to the space the contrastive loss works in, and the
//! classifier reads `h` directly (never the projection). All three are
//! differentiated by hand; parameters are plain row-major `f64` tensors.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

/// Flat access to every trainable tensor, in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Parallel to `tensors`; `true` for tensors that receive weight decay.
    fn decay_mask(&self) -> Vec<bool>;
}

fn uniform(rng: &mut impl Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Fan-in scaled uniform init in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: uniform(rng, (outputs, inputs), bound),
            bias: Array1::from_shape_simple_fn(outputs, || rng.gen_range(-bound..=bound)),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl Params for Linear {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    fn decay_mask(&self) -> Vec<bool> {
        vec![true, false]
    }
}

/// Two dense layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpTape {
    input: Array2<f64>,
    activated: Array2<f64>,
}

impl Mlp {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            hidden: Linear::new(inputs, hidden, rng),
            output: Linear::new(hidden, outputs, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            hidden: Linear::zeros(self.hidden.inputs(), self.hidden.outputs()),
            output: Linear::zeros(self.output.inputs(), self.output.outputs()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.output.outputs()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_tape(x).0
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpTape) {
        let activated = self.hidden.forward(x).mapv(|v| v.max(0.0));
        let out = self.output.forward(activated.view());
        (
            out,
            MlpTape {
                input: x.to_owned(),
                activated,
            },
        )
    }

    pub fn backward(&self, tape: &MlpTape, dy: ArrayView2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let d_act = self.output.backward(tape.activated.view(), dy, &mut grad.output);
        let d_pre = d_act * tape.activated.mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
        self.hidden.backward(tape.input.view(), d_pre.view(), &mut grad.hidden)
    }
}

impl Params for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.hidden.tensors();
        t.extend(self.output.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.hidden.tensors_mut();
        t.extend(self.output.tensors_mut());
        t
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = self.hidden.decay_mask();
        m.extend(self.output.decay_mask());
        m
    }
}

/// Maps a batch of documents to hidden features, one row per document.
pub trait TextEncoder {
    fn id(&self) -> String;
    fn hidden_dim(&self) -> usize;
    fn encode(&self, docs: &[&Document]) -> Result<Array2<f64>>;
}

/// Lowercased alphanumeric runs.
pub fn toy_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyEncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        ToyEncoderConfig {
            vocab_size: 16384,
            embed_dim: 32,
            hidden_dim: 32,
        }
    }
}

/// Mean of hashed token embeddings followed by a dense layer and `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    pub config: ToyEncoderConfig,
    /// `(vocab_size, embed_dim)`
    pub embedding: Array2<f64>,
    pub dense: Linear,
}

#[derive(Debug, Clone)]
pub struct ToyTape {
    buckets: Vec<Vec<usize>>,
    pooled: Array2<f64>,
    hidden: Array2<f64>,
}

impl ToyEncoder {
    pub fn new(config: ToyEncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.vocab_size == 0 || config.embed_dim == 0 || config.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!("toy encoder dims must be positive: {config:?}")));
        }
        Ok(ToyEncoder {
            config,
            embedding: uniform(rng, (config.vocab_size, config.embed_dim), 1.0),
            dense: Linear::new(config.embed_dim, config.hidden_dim, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ToyEncoder {
            config: self.config,
            embedding: Array2::zeros(self.embedding.raw_dim()),
            dense: Linear::zeros(self.dense.inputs(), self.dense.outputs()),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.config.vocab_size as u64) as usize
    }

    pub fn forward_tape(&self, docs: &[&Document]) -> (Array2<f64>, ToyTape) {
        let e = self.config.embed_dim;
        let mut pooled = Array2::zeros((docs.len(), e));
        let mut buckets = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            let ids: Vec<usize> = toy_tokens(&doc.text).map(|t| self.bucket(&t)).collect();
            if !ids.is_empty() {
                let mut row = pooled.row_mut(i);
                for &b in &ids {
                    row += &self.embedding.row(b);
                }
                row /= ids.len() as f64;
            }
            buckets.push(ids);
        }
        let hidden = self.dense.forward(pooled.view()).mapv(f64::tanh);
        (
            hidden.clone(),
            ToyTape {
                buckets,
                pooled,
                hidden,
            },
        )
    }

    pub fn backward(&self, tape: &ToyTape, d_hidden: ArrayView2<f64>, grad: &mut ToyEncoder) {
        let d_pre = &d_hidden * &tape.hidden.mapv(|h| 1.0 - h * h);
        let d_pooled = self.dense.backward(tape.pooled.view(), d_pre.view(), &mut grad.dense);
        for (i, ids) in tape.buckets.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let scaled = &d_pooled.row(i) / ids.len() as f64;
            for &b in ids {
                let mut row = grad.embedding.row_mut(b);
                row += &scaled;
            }
        }
    }
}

impl Params for ToyEncoder {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = vec![self.embedding.as_slice().expect("standard layout")];
        t.extend(self.dense.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = vec![self.embedding.as_slice_mut().expect("standard layout")];
        t.extend(self.dense.tensors_mut());
        t
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![true];
        m.extend(self.dense.decay_mask());
        m
    }
}

impl TextEncoder for ToyEncoder {
    fn id(&self) -> String {
        let c = self.config;
        format!("toy-hash-fnv1a(vocab={},embed={},hidden={})", c.vocab_size, c.embed_dim, c.hidden_dim)
    }

    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn encode(&self, docs: &[&Document]) -> Result<Array2<f64>> {
        Ok(self.forward_tape(docs).0)
    }
}

/// Frozen features produced offline by an external encoder (for example a
/// pretrained transformer's sequence-start token), keyed by document id.
/// Receives no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedEncoder {
    source: String,
    dim: usize,
    features: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct FeatureRecord {
    id: String,
    features: Vec<f64>,
}

impl PrecomputedEncoder {
    pub fn new(source: impl Into<String>, features: HashMap<String, Vec<f64>>) -> Result<Self> {
        let dim = features
            .values()
            .next()
            .map(Vec::len)
            .ok_or(Error::EmptyInput("precomputed feature table"))?;
        if dim == 0 {
            return Err(Error::InvalidArgument("zero-width feature vectors".into()));
        }
        for (id, f) in &features {
            if f.len() != dim {
                return Err(Error::Validation(format!("feature vector for {id} has width {}, expected {dim}", f.len())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("feature vector for {id} is not finite")));
            }
        }
        Ok(PrecomputedEncoder {
            source: source.into(),
            dim,
            features,
        })
    }

    /// Reads line-delimited `{"id": ..., "features": [...]}` records.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut features = HashMap::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FeatureRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            features.insert(rec.id, rec.features);
        }
        PrecomputedEncoder::new(path.display().to_string(), features)
    }
}

impl TextEncoder for PrecomputedEncoder {
    fn id(&self) -> String {
        format!("precomputed({},dim={})", self.source, self.dim)
    }

    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, docs: &[&Document]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((docs.len(), self.dim));
        for (i, doc) in docs.iter().enumerate() {
            let f = self.features.get(&doc.id).ok_or_else(|| Error::Encoder {
                index: i,
                message: format!("no precomputed features for document {}", doc.id),
            })?;
            out.row_mut(i).assign(&Array1::from(f.clone()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Toy(ToyEncoder),
    Precomputed(PrecomputedEncoder),
}

#[derive(Debug, Clone)]
pub enum EncoderTape {
    Toy(ToyTape),
    Frozen,
}

impl Encoder {
    fn inner(&self) -> &dyn TextEncoder {
        match self {
            Encoder::Toy(e) => e,
            Encoder::Precomputed(e) => e,
        }
    }

    pub fn forward_tape(&self, docs: &[&Document]) -> Result<(Array2<f64>, EncoderTape)> {
        match self {
            Encoder::Toy(e) => {
                let (h, tape) = e.forward_tape(docs);
                Ok((h, EncoderTape::Toy(tape)))
            }
            Encoder::Precomputed(e) => Ok((e.encode(docs)?, EncoderTape::Frozen)),
        }
    }

    pub fn zero_grad(&self) -> Option<ToyEncoder> {
        match self {
            Encoder::Toy(e) => Some(e.zeros_like()),
            Encoder::Precomputed(_) => None,
        }
    }
}

impl TextEncoder for Encoder {
    fn id(&self) -> String {
        self.inner().id()
    }

    fn hidden_dim(&self) -> usize {
        self.inner().hidden_dim()
    }

    fn encode(&self, docs: &[&Document]) -> Result<Array2<f64>> {
        self.inner().encode(docs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadDims {
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub classifier_hidden: usize,
}

impl HeadDims {
    /// Hidden widths equal to the encoder width, 128-dimensional projection.
    pub fn for_hidden(d: usize) -> Self {
        HeadDims {
            projection_hidden: d,
            projection_dim: 128,
            classifier_hidden: d,
        }
    }
}

/// Shared encoder with a projection head and a two-class classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoder: Encoder,
    pub head: Mlp,
    pub classifier: Mlp,
}

#[derive(Debug, Clone)]
pub struct NetworkTape {
    encoder: EncoderTape,
    head: MlpTape,
    classifier: MlpTape,
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub hidden: Array2<f64>,
    pub projections: Array2<f64>,
    pub logits: Array2<f64>,
    pub tape: NetworkTape,
}

/// Gradient buffers shaped like a [`Network`]'s trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Option<ToyEncoder>,
    pub head: Mlp,
    pub classifier: Mlp,
}

impl Network {
    pub fn new(encoder: Encoder, dims: HeadDims, rng: &mut impl Rng) -> Self {
        let d = encoder.hidden_dim();
        Network {
            head: Mlp::new(d, dims.projection_hidden, dims.projection_dim, rng),
            classifier: Mlp::new(d, dims.classifier_hidden, 2, rng),
            encoder,
        }
    }

    pub fn dims(&self) -> HeadDims {
        HeadDims {
            projection_hidden: self.head.hidden.outputs(),
            projection_dim: self.head.output_dim(),
            classifier_hidden: self.classifier.hidden.outputs(),
        }
    }

    pub fn forward(&self, docs: &[&Document]) -> Result<ForwardPass> {
        if docs.is_empty() {
            return Err(Error::EmptyInput("forward pass over an empty batch"));
        }
        let (hidden, enc_tape) = self.encoder.forward_tape(docs)?;
        if let Some((i, _)) = hidden
            .axis_iter(Axis(0))
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Encoder {
                index: i,
                message: format!("non-finite hidden feature for document {}", docs[i].id),
            });
        }
        let (projections, head_tape) = self.head.forward_tape(hidden.view());
        let (logits, cls_tape) = self.classifier.forward_tape(hidden.view());
        Ok(ForwardPass {
            hidden,
            projections,
            logits,
            tape: NetworkTape {
                encoder: enc_tape,
                head: head_tape,
                classifier: cls_tape,
            },
        })
    }

    pub fn zero_grad(&self) -> Gradients {
        Gradients {
            encoder: self.encoder.zero_grad(),
            head: self.head.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    /// Backpropagates loss gradients with respect to the projections and the
    /// logits through all three components.
    pub fn backward(&self, tape: &NetworkTape, d_projections: ArrayView2<f64>, d_logits: ArrayView2<f64>) -> Gradients {
        let mut grads = self.zero_grad();
        let d_hidden_head = self.head.backward(&tape.head, d_projections, &mut grads.head);
        let d_hidden_cls = self.classifier.backward(&tape.classifier, d_logits, &mut grads.classifier);
        let d_hidden = d_hidden_head + d_hidden_cls;
        if let (Encoder::Toy(enc), EncoderTape::Toy(t), Some(g)) = (&self.encoder, &tape.encoder, grads.encoder.as_mut()) {
            enc.backward(t, d_hidden.view(), g);
        }
        grads
    }
}

impl Params for Network {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = match &self.encoder {
            Encoder::Toy(e) => e.tensors(),
            Encoder::Precomputed(_) => vec![],
        };
        t.extend(self.head.tensors());
        t.extend(self.classifier.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = match &mut self.encoder {
            Encoder::Toy(e) => e.tensors_mut(),
            Encoder::Precomputed(_) => vec![],
        };
        t.extend(self.head.tensors_mut());
        t.extend(self.classifier.tensors_mut());
        t
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = match &self.encoder {
            Encoder::Toy(e) => e.decay_mask(),
            Encoder::Precomputed(_) => vec![],
        };
        m.extend(self.head.decay_mask());
        m.extend(self.classifier.decay_mask());
        m
    }
}

impl Params for Gradients {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.as_ref().map(Params::tensors).unwrap_or_default();
        t.extend(self.head.tensors());
        t.extend(self.classifier.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.as_mut().map(Params::tensors_mut).unwrap_or_default();
        t.extend(self.head.tensors_mut());
        t.extend(self.classifier.tensors_mut());
        t
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = self.encoder.as_ref().map(Params::decay_mask).unwrap_or_default();
        m.extend(self.head.decay_mask());
        m.extend(self.classifier.decay_mask());
        m
    }
}

/// Hidden features and projections for a batch; row `i` belongs to `docs[i]`.
pub fn forward_features(network: &Network, docs: &[&Document]) -> Result<(Array2<f64>, Array2<f64>)> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("forward_features over an empty batch"));
    }
    let hidden = network.encoder.encode(docs)?;
    let z = network.head.forward(hidden.view());
    Ok((hidden, z))
}

/// Two-class logits from hidden features.
pub fn classify(classifier: &Mlp, hidden: ArrayView2<f64>) -> Result<Array2<f64>> {
    if hidden.ncols() != classifier.input_dim() {
        return Err(Error::Dimension {
            expected: classifier.input_dim(),
            got: hidden.ncols(),
        });
    }
    if hidden.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite hidden feature".into()));
    }
    Ok(classifier.forward(hidden))
}

//! A small decoder-only transformer with hand-written backpropagation.
//!
//! The model reads a prefix (text tokens, k-means cluster ids, or continuous
//! feature frames) followed by `<bos>` and the target text, and is trained to
//! predict the text and `<eos>`. Each prefix kind has its own front-end:
//!
//! * text: a token embedding table,
//! * cluster: an embedding table over cluster ids followed by a two-layer perceptron,
//! * continuous: a two-layer perceptron adapter over feature frames.
//!
//! Blocks are pre-norm (layer norm, causal multi-head attention, GELU MLP) with
//! learned positional embeddings, a final layer norm and an untied output
//! projection. The final layer-norm output is `emb_out`; the front-end output
//! is `emb_in`.
//!
//! Two autoregressive feedback modes exist. Discrete feedback re-embeds the
//! argmax token through the text table. Continuous feedback appends `emb_out`
//! itself as the next input and is trained with
//! `CE + alpha * MSE(emb_out[t], emb_in[t + 1])`, the MSE target being the
//! teacher-forced embedding of the next ground-truth token.
//!
//! All arithmetic is generic over [`Real`], so gradient checks can run the
//! same code in `f64`.

mod checkpoint;
mod generate;
pub(crate) mod kernels;
mod model;
mod params;
mod train;
mod vocab;

use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta};
pub use generate::FeedbackStep;
pub use model::ForwardOutput;
pub use params::TensorInfo;
pub use train::{loss_from_outputs, AdamConfig, LossParts, StepMetrics};
pub use vocab::TextVocab;

use crate::featio::FeatureMatrix;

/// Floating-point type the model computes in.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + Default + Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum LmError {
    #[error("sequence of length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("input has {inputs} positions but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("operation needs feedback mode {needed:?}")]
    ModeMismatch { needed: FeedbackMode },
    #[error("model has no {0:?} front-end")]
    MissingFrontEnd(FrontEndKind),
    #[error("prefix feature dimension {found} does not match adapter input {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("token {token} out of range for vocabulary of {size}")]
    TokenOutOfRange { token: u32, size: usize },
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrontEndKind {
    TextEmbed,
    ClusterEmbedMlp,
    ContinuousAdapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterFrontConfig {
    /// Number of cluster ids; id `k` is reserved for padding.
    pub k: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterFrontConfig {
    pub in_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub feedback_mode: FeedbackMode,
    pub alpha: f64,
    pub cluster_front: Option<ClusterFrontConfig>,
    pub adapter_front: Option<AdapterFrontConfig>,
    pub precision: Precision,
    pub seed: u64,
    pub bos: u32,
    pub eos: u32,
    /// Target id ignored by the token-level loss.
    pub pad: Option<u32>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: TextVocab::default().len(),
            max_seq: 256,
            feedback_mode: FeedbackMode::Discrete,
            alpha: 100.0,
            cluster_front: None,
            adapter_front: None,
            precision: Precision::F32,
            seed: 0,
            bos: TextVocab::BOS,
            eos: TextVocab::EOS,
            pad: Some(TextVocab::PAD),
        }
    }
}

impl LmConfig {
    /// Full-size shape: 10 layers, width 1024, 8 heads.
    pub fn full_scale() -> Self {
        Self {
            n_layers: 10,
            d_model: 1024,
            n_heads: 8,
            d_ff: 4096,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("layer, width, head and feed-forward sizes must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.vocab_size < 2 || self.max_seq == 0 {
            return bad("vocab_size must be at least 2 and max_seq positive");
        }
        if self.bos as usize >= self.vocab_size || self.eos as usize >= self.vocab_size {
            return bad("bos and eos must be vocabulary ids");
        }
        if self.pad.is_some_and(|p| p as usize >= self.vocab_size) {
            return bad("pad must be a vocabulary id");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if let Some(c) = self.cluster_front {
            if c.k == 0 || c.hidden == 0 {
                return bad("cluster front-end needs k and hidden > 0");
            }
        }
        if let Some(a) = self.adapter_front {
            if a.in_dim == 0 || a.hidden == 0 {
                return bad("adapter front-end needs in_dim and hidden > 0");
            }
        }
        Ok(())
    }
}

/// What precedes `<bos>` in a sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Prefix {
    None,
    Text(Vec<u32>),
    Clusters(Vec<u32>),
    Features(FeatureMatrix),
}

impl Prefix {
    pub fn len(&self) -> usize {
        match self {
            Prefix::None => 0,
            Prefix::Text(t) | Prefix::Clusters(t) => t.len(),
            Prefix::Features(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Right-pads to `len` positions: text with `<pad>`, clusters with
    /// `cluster_pad`, features with zero frames. Longer prefixes are returned
    /// unchanged.
    pub fn padded(&self, len: usize, cluster_pad: u32) -> Prefix {
        if self.len() >= len {
            return self.clone();
        }
        match self {
            Prefix::None => Prefix::None,
            Prefix::Text(t) => {
                let mut t = t.clone();
                t.resize(len, TextVocab::PAD);
                Prefix::Text(t)
            }
            Prefix::Clusters(c) => {
                let mut c = c.clone();
                c.resize(len, cluster_pad);
                Prefix::Clusters(c)
            }
            Prefix::Features(m) => {
                let mut data = m.as_slice().to_vec();
                data.resize(len * m.dim(), 0.0);
                Prefix::Features(
                    FeatureMatrix::new(len, m.dim(), data, m.layer_tag).expect("finite padding"),
                )
            }
        }
    }
}

/// One training pair: prefix and the target text tokens (without bos/eos).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub prefix: Prefix,
    pub target: Vec<u32>,
}

/// Model parameters, Adam moments and step counter.
#[derive(Debug, Clone)]
pub struct ToyLm<T: Real> {
    config: LmConfig,
    index: params::ParamIndex,
    params: Vec<T>,
    adam_m: Vec<T>,
    adam_v: Vec<T>,
    step: u64,
    pub adam: AdamConfig,
}

/// Alias used where the model's role rather than its precision matters.
pub type ToyLmState<T> = ToyLm<T>;

impl<T: Real> ToyLm<T> {
    pub fn new(config: LmConfig) -> Result<Self> {
        config.validate()?;
        let index = params::ParamIndex::new(&config);
        let params = index.init::<T>(&config);
        let n = params.len();
        Ok(Self {
            config,
            index,
            params,
            adam_m: vec![T::zero(); n],
            adam_v: vec![T::zero(); n],
            step: 0,
            adam: AdamConfig::default(),
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.index.tensors
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.index
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.index.tensors.iter().find(|t| t.name == name)?.range();
        Some(&mut self.params[range])
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

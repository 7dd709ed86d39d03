//! Feature matrices, CTC lattices, manifests and their on-disk formats.
//!
//! Two bespoke little-endian binary formats are used:
//!
//! ```text
//! SFM1: "SFM1" | u32 T | u32 D | u32 layer_tag | f32[T*D] row-major
//! CLG1: "CLG1" | u32 T | u32 V | u32 blank | u32 space (u32::MAX = none)
//!       | V x (u32 byte_len | UTF-8 bytes) | f32[T*V] log-posteriors row-major
//! ```
//!
//! Manifests are JSON lines with keys `id`, `path` and `ref`.

mod formats;
mod manifest;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use formats::{
    decode_feature_matrix, decode_lattice, encode_feature_matrix, encode_lattice,
    read_feature_matrix, read_lattice, write_feature_matrix, write_lattice,
};
pub use manifest::{Manifest, ManifestEntry};
pub use synth::{layer_noise_scale, EncodeMode, SynthConfig, SynthEncoder, SynthOutput};

/// Layer indices exposed by the HuBERT-style synthetic encoder.
pub const HUBERT_LAYERS: [u32; 4] = [0, 8, 16, 24];

/// Tolerance on `|sum(exp(row)) - 1|` for every lattice frame.
pub const LATTICE_NORM_TOL: f64 = 1e-5;

const DEFAULT_FRAME_RATE_HZ: f32 = 50.0;

#[derive(Debug, Error)]
pub enum FeatIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at byte offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: usize,
        expected: &'static str,
        found: String,
    },
    #[error("truncated file at byte offset {offset}: needed {wanted} more bytes")]
    TruncatedFile { offset: usize, wanted: usize },
    #[error("non-finite value at byte offset {offset}")]
    NonFiniteValue { offset: usize },
    #[error("trailing {extra} bytes after byte offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("invalid UTF-8 symbol at byte offset {offset}")]
    BadUtf8 { offset: usize },
    #[error("invalid shape {rows}x{dim}: {reason}")]
    InvalidShape {
        rows: usize,
        dim: usize,
        reason: &'static str,
    },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("lattice frame {frame} is not normalized: sum of probabilities {sum}")]
    NotNormalized { frame: usize, sum: f64 },
    #[error("character {ch:?} at position {position} is not in the encoder character set")]
    UnknownCharacter { ch: char, position: usize },
    #[error("empty text")]
    EmptyText,
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),
}

pub type Result<T> = std::result::Result<T, FeatIoError>;

/// A `T x D` matrix of encoder activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    pub layer_tag: u32,
    pub frame_rate_hz: f32,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, layer_tag: u32) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(FeatIoError::InvalidShape {
                rows,
                dim,
                reason: "both dimensions must be at least 1",
            });
        }
        if data.len() != rows * dim {
            return Err(FeatIoError::InvalidShape {
                rows,
                dim,
                reason: "data length does not match shape",
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatIoError::NonFiniteValue {
                offset: formats::SFM_HEADER_LEN + 4 * i,
            });
        }
        Ok(Self {
            rows,
            dim,
            data,
            layer_tag,
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], layer_tag: u32) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(FeatIoError::InvalidShape {
                rows: rows.len(),
                dim,
                reason: "ragged rows",
            });
        }
        Self::new(rows.len(), dim, rows.concat(), layer_tag)
    }

    pub fn with_frame_rate(mut self, hz: f32) -> Self {
        self.frame_rate_hz = hz;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Concatenates every `factor` consecutive frames into one wider frame.
    /// A ragged tail is zero-padded.
    pub fn stack_frames(&self, factor: usize) -> FeatureMatrix {
        let factor = factor.max(1);
        let rows = self.rows.div_ceil(factor);
        let dim = self.dim * factor;
        let mut data = vec![0.0f32; rows * dim];
        for t in 0..self.rows {
            let (r, slot) = (t / factor, t % factor);
            data[r * dim + slot * self.dim..r * dim + (slot + 1) * self.dim]
                .copy_from_slice(self.row(t));
        }
        FeatureMatrix {
            rows,
            dim,
            data,
            layer_tag: self.layer_tag,
            frame_rate_hz: self.frame_rate_hz / factor as f32,
        }
    }
}

/// Ordered, distinct output symbols with optional blank and space markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    blank: Option<usize>,
    space: Option<usize>,
}

impl Vocabulary {
    pub fn new(symbols: Vec<String>, blank: Option<usize>, space: Option<usize>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &symbols {
            if !seen.insert(s.as_str()) {
                return Err(FeatIoError::InvalidVocabulary(format!(
                    "duplicate symbol {s:?}"
                )));
            }
        }
        for (name, idx) in [("blank", blank), ("space", space)] {
            if let Some(i) = idx {
                if i >= symbols.len() {
                    return Err(FeatIoError::InvalidVocabulary(format!(
                        "{name} index {i} out of range for {} symbols",
                        symbols.len()
                    )));
                }
            }
        }
        if blank.is_some() && blank == space {
            return Err(FeatIoError::InvalidVocabulary(
                "blank and space share an index".into(),
            ));
        }
        Ok(Self {
            symbols,
            blank,
            space,
        })
    }

    /// CTC vocabulary: blank `"-"` at index 0, then one symbol per character.
    pub fn ctc_from_chars(chars: &[char]) -> Result<Self> {
        let mut symbols = vec!["-".to_string()];
        symbols.extend(chars.iter().map(|c| c.to_string()));
        let space = chars.iter().position(|&c| c == ' ').map(|i| i + 1);
        Self::new(symbols, Some(0), space)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn blank(&self) -> Option<usize> {
        self.blank
    }

    pub fn space(&self) -> Option<usize> {
        self.space
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

/// Per-frame log-posteriors over a character vocabulary that contains a blank.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcLattice {
    frames: usize,
    log_posteriors: Vec<f32>,
    vocab: Vocabulary,
}

impl CtcLattice {
    pub fn new(frames: usize, log_posteriors: Vec<f32>, vocab: Vocabulary) -> Result<Self> {
        let v = vocab.len();
        if frames == 0 || v == 0 || log_posteriors.len() != frames * v {
            return Err(FeatIoError::InvalidShape {
                rows: frames,
                dim: v,
                reason: "lattice needs T >= 1, V >= 1 and T*V values",
            });
        }
        if vocab.blank().is_none() {
            return Err(FeatIoError::InvalidVocabulary(
                "lattice vocabulary needs a blank".into(),
            ));
        }
        if let Some(i) = log_posteriors.iter().position(|x| x.is_nan() || *x == f32::INFINITY) {
            return Err(FeatIoError::NonFiniteValue {
                offset: 4 * i,
            });
        }
        for (t, row) in log_posteriors.chunks_exact(v).enumerate() {
            let sum: f64 = row.iter().map(|&x| (x as f64).exp()).sum();
            if (sum - 1.0).abs() >= LATTICE_NORM_TOL {
                return Err(FeatIoError::NotNormalized { frame: t, sum });
            }
        }
        Ok(Self {
            frames,
            log_posteriors,
            vocab,
        })
    }

    /// Builds a lattice by log-softmax over unnormalized scores.
    pub fn from_logits(frames: usize, logits: &[f64], vocab: Vocabulary) -> Result<Self> {
        let v = vocab.len();
        if v == 0 || logits.len() != frames * v {
            return Err(FeatIoError::InvalidShape {
                rows: frames,
                dim: v,
                reason: "logits length does not match shape",
            });
        }
        let mut out = Vec::with_capacity(logits.len());
        for row in logits.chunks_exact(v) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| (x - lse) as f32));
        }
        Self::new(frames, out, vocab)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn blank(&self) -> usize {
        self.vocab.blank().expect("validated at construction")
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let v = self.vocab.len();
        &self.log_posteriors[t * v..(t + 1) * v]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.log_posteriors
    }

    /// Posterior probabilities as a feature matrix (one row per frame).
    pub fn to_posterior_features(&self, layer_tag: u32) -> FeatureMatrix {
        let data = self.log_posteriors.iter().map(|x| x.exp()).collect();
        FeatureMatrix::new(self.frames, self.vocab.len(), data, layer_tag)
            .expect("posteriors are finite")
    }
}

//! Deterministic stand-in for a pretrained speech encoder.
//!
//! Every character owns a fixed template vector derived from its codepoint and
//! the template seed. Continuous mode emits `frames_per_char` noisy copies of
//! the template per character; lattice mode emits peaked CTC posteriors
//! (`frames_per_char - 1` character frames followed by one blank frame).

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CtcLattice, FeatIoError, FeatureMatrix, Result, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodeMode {
    Continuous,
    CtcLattice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub charset: Vec<char>,
    pub dim: usize,
    pub frames_per_char: usize,
    pub template_seed: u64,
    /// Logit margin of the target symbol in lattice mode.
    pub lattice_peak: f64,
    pub frame_rate_hz: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            charset: " ABCDEFGHIJKLMNOPQRSTUVWXYZ".chars().collect(),
            dim: 16,
            frames_per_char: 2,
            template_seed: 0x5eed,
            lattice_peak: 5.0,
            frame_rate_hz: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthOutput {
    Features(FeatureMatrix),
    Lattice(CtcLattice),
}

impl SynthOutput {
    pub fn into_features(self) -> Option<FeatureMatrix> {
        match self {
            SynthOutput::Features(m) => Some(m),
            SynthOutput::Lattice(_) => None,
        }
    }

    pub fn into_lattice(self) -> Option<CtcLattice> {
        match self {
            SynthOutput::Lattice(l) => Some(l),
            SynthOutput::Features(_) => None,
        }
    }
}

/// Noise multiplier for a layer tag: deeper layers are smoother.
pub fn layer_noise_scale(layer_tag: u32) -> f64 {
    8.0 / (8.0 + layer_tag as f64)
}

#[derive(Debug, Clone)]
pub struct SynthEncoder {
    config: SynthConfig,
    templates: HashMap<char, Vec<f32>>,
    vocab: Vocabulary,
}

fn template_for(ch: char, seed: u64, dim: usize) -> Vec<f32> {
    let mixed = seed ^ (ch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let scale = (dim as f64).sqrt() / norm;
    raw.iter().map(|x| (x * scale) as f32).collect()
}

impl SynthEncoder {
    pub fn new(config: SynthConfig) -> Result<Self> {
        if config.charset.is_empty() || config.dim == 0 {
            return Err(FeatIoError::InvalidShape {
                rows: config.charset.len(),
                dim: config.dim,
                reason: "encoder needs a character set and a positive dimension",
            });
        }
        if config.frames_per_char < 2 {
            return Err(FeatIoError::InvalidShape {
                rows: config.frames_per_char,
                dim: config.dim,
                reason: "at least two frames per character are required",
            });
        }
        let vocab = Vocabulary::ctc_from_chars(&config.charset)?;
        let templates = config
            .charset
            .iter()
            .map(|&c| (c, template_for(c, config.template_seed, config.dim)))
            .collect();
        Ok(Self {
            config,
            templates,
            vocab,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn template(&self, ch: char) -> Option<&[f32]> {
        self.templates.get(&ch).map(Vec::as_slice)
    }

    /// CTC vocabulary of lattice mode: blank first, then the character set.
    pub fn lattice_vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn check_text(&self, text: &str) -> Result<Vec<char>> {
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return Err(FeatIoError::EmptyText);
        }
        for (position, &ch) in chars.iter().enumerate() {
            if !self.templates.contains_key(&ch) {
                return Err(FeatIoError::UnknownCharacter { ch, position });
            }
        }
        Ok(chars)
    }

    /// Encodes `text`; `seed` drives the noise draw, `noise_sigma` is scaled
    /// down for deeper `layer_tag`s.
    pub fn encode(
        &self,
        text: &str,
        mode: EncodeMode,
        seed: u64,
        noise_sigma: f64,
        layer_tag: u32,
    ) -> Result<SynthOutput> {
        let chars = self.check_text(text)?;
        let sigma = noise_sigma * layer_noise_scale(layer_tag);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = move || -> f64 {
            if sigma == 0.0 {
                0.0
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            }
        };
        let fpc = self.config.frames_per_char;
        match mode {
            EncodeMode::Continuous => {
                let dim = self.config.dim;
                let mut data = Vec::with_capacity(chars.len() * fpc * dim);
                for ch in &chars {
                    let tpl = &self.templates[ch];
                    for _ in 0..fpc {
                        data.extend(tpl.iter().map(|&x| (x as f64 + noise()) as f32));
                    }
                }
                let m = FeatureMatrix::new(chars.len() * fpc, dim, data, layer_tag)?
                    .with_frame_rate(self.config.frame_rate_hz);
                Ok(SynthOutput::Features(m))
            }
            EncodeMode::CtcLattice => {
                let v = self.vocab.len();
                let blank = self.vocab.blank().expect("ctc vocab has a blank");
                let frames = chars.len() * fpc;
                let mut logits = Vec::with_capacity(frames * v);
                for ch in &chars {
                    let target = 1 + self
                        .config
                        .charset
                        .iter()
                        .position(|c| c == ch)
                        .expect("checked above");
                    for f in 0..fpc {
                        let peak = if f + 1 == fpc { blank } else { target };
                        for s in 0..v {
                            let base = if s == peak { self.config.lattice_peak } else { 0.0 };
                            logits.push(base + noise());
                        }
                    }
                }
                Ok(SynthOutput::Lattice(CtcLattice::from_logits(
                    frames,
                    &logits,
                    self.vocab.clone(),
                )?))
            }
        }
    }
}

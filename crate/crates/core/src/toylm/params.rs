//! Flat parameter layout.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LmConfig, Real};

/// Name, shape and location of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MlpIdx {
    pub in_dim: usize,
    pub hidden: usize,
    pub fc1_w: Range<usize>,
    pub fc1_b: Range<usize>,
    pub fc2_w: Range<usize>,
    pub fc2_b: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockIdx {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
    pub fcp_w: Range<usize>,
    pub fcp_b: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
    /// Sine/cosine table of shape `[positions, d]`.
    Sinusoid,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamIndex {
    pub tensors: Vec<TensorInfo>,
    inits: Vec<Init>,
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub clu_emb: Option<Range<usize>>,
    pub cluster: Option<MlpIdx>,
    pub adapter: Option<MlpIdx>,
    pub blocks: Vec<BlockIdx>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    inits: Vec<Init>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Range<usize> {
        let info = TensorInfo {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
        };
        let r = info.range();
        self.total = r.end;
        self.tensors.push(info);
        self.inits.push(init);
        r
    }

    fn mlp(&mut self, prefix: &str, in_dim: usize, hidden: usize, out: usize) -> MlpIdx {
        let s1 = 1.0 / (in_dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        MlpIdx {
            in_dim,
            hidden,
            fc1_w: self.add(format!("{prefix}.fc1.w"), &[in_dim, hidden], Init::Normal(s1)),
            fc1_b: self.add(format!("{prefix}.fc1.b"), &[hidden], Init::Zeros),
            fc2_w: self.add(format!("{prefix}.fc2.w"), &[hidden, out], Init::Normal(s2)),
            fc2_b: self.add(format!("{prefix}.fc2.b"), &[out], Init::Zeros),
        }
    }
}

const STD: f64 = 0.02;

impl ParamIndex {
    pub fn new(cfg: &LmConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder {
            tensors: Vec::new(),
            inits: Vec::new(),
            total: 0,
        };
        let tok_emb = b.add("tok_emb", &[cfg.vocab_size, d], Init::Normal(STD));
        let pos_emb = b.add("pos_emb", &[cfg.max_seq, d], Init::Sinusoid);
        let (clu_emb, cluster) = match cfg.cluster_front {
            Some(c) => {
                let e = b.add("clu_emb", &[c.k + 1, d], Init::Normal(1.0));
                (Some(e), Some(b.mlp("clu", d, c.hidden, d)))
            }
            None => (None, None),
        };
        let adapter = cfg
            .adapter_front
            .map(|a| b.mlp("adapter", a.in_dim, a.hidden, d));
        let proj_std = STD / (2.0 * cfg.n_layers as f64).sqrt();
        let blocks = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("blocks.{l}");
                BlockIdx {
                    ln1_g: b.add(format!("{p}.ln1.g"), &[d], Init::Ones),
                    ln1_b: b.add(format!("{p}.ln1.b"), &[d], Init::Zeros),
                    qkv_w: b.add(format!("{p}.attn.qkv.w"), &[d, 3 * d], Init::Normal(STD)),
                    qkv_b: b.add(format!("{p}.attn.qkv.b"), &[3 * d], Init::Zeros),
                    proj_w: b.add(format!("{p}.attn.proj.w"), &[d, d], Init::Normal(proj_std)),
                    proj_b: b.add(format!("{p}.attn.proj.b"), &[d], Init::Zeros),
                    ln2_g: b.add(format!("{p}.ln2.g"), &[d], Init::Ones),
                    ln2_b: b.add(format!("{p}.ln2.b"), &[d], Init::Zeros),
                    fc_w: b.add(format!("{p}.mlp.fc.w"), &[d, cfg.d_ff], Init::Normal(STD)),
                    fc_b: b.add(format!("{p}.mlp.fc.b"), &[cfg.d_ff], Init::Zeros),
                    fcp_w: b.add(format!("{p}.mlp.proj.w"), &[cfg.d_ff, d], Init::Normal(proj_std)),
                    fcp_b: b.add(format!("{p}.mlp.proj.b"), &[d], Init::Zeros),
                }
            })
            .collect();
        let lnf_g = b.add("ln_f.g", &[d], Init::Ones);
        let lnf_b = b.add("ln_f.b", &[d], Init::Zeros);
        let head_w = b.add("head.w", &[d, cfg.vocab_size], Init::Normal(STD));
        let head_b = b.add("head.b", &[cfg.vocab_size], Init::Zeros);
        Self {
            tensors: b.tensors,
            inits: b.inits,
            tok_emb,
            pos_emb,
            clu_emb,
            cluster,
            adapter,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
        }
    }

    pub fn total(&self) -> usize {
        self.tensors.last().map_or(0, |t| t.range().end)
    }

    /// Deterministic initialization from `cfg.seed`, drawn in f64 then cast.
    pub fn init<T: Real>(&self, cfg: &LmConfig) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out = vec![T::zero(); self.total()];
        for (t, init) in self.tensors.iter().zip(&self.inits) {
            let dst = &mut out[t.range()];
            match *init {
                Init::Zeros => {}
                Init::Ones => dst.fill(T::one()),
                Init::Sinusoid => {
                    let d = t.shape[1];
                    for (i, v) in dst.iter_mut().enumerate() {
                        let (pos, k) = ((i / d) as f64, i % d);
                        let freq = 10_000f64.powf(-((k / 2 * 2) as f64) / d as f64);
                        let x = if k % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() };
                        *v = T::from_f64(x).unwrap();
                    }
                }
                Init::Normal(std) => {
                    let n = Normal::new(0.0, std).expect("positive std");
                    for v in dst {
                        let x: f64 = n.sample(&mut rng);
                        *v = T::from_f64(x).unwrap();
                    }
                }
            }
        }
        out
    }
}

/// Two disjoint mutable views into one buffer.
pub(crate) fn split2<T>(buf: &mut [T], a: Range<usize>, b: Range<usize>) -> (&mut [T], &mut [T]) {
    debug_assert!(a.end <= b.start || b.end <= a.start);
    if a.start < b.start {
        let (x, y) = buf.split_at_mut(b.start);
        (&mut x[a], &mut y[..b.end - b.start])
    } else {
        let (x, y) = buf.split_at_mut(a.start);
        (&mut y[..a.end - a.start], &mut x[b])
    }
}

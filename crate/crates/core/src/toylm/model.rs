//! Forward pass with activation cache and the matching backward pass.

use super::kernels::{
    attention_backward, attention_forward, gelu_backward, gelu_forward, layernorm_backward,
    layernorm_forward, matmul_backward, matmul_forward,
};
use super::params::{split2, MlpIdx};
use super::{FrontEndKind, LmError, Prefix, Real, Result, ToyLm};

/// One input position before the transformer.
#[derive(Debug, Clone)]
pub(crate) enum Slot<T> {
    Text(u32),
    Cluster(u32),
    Feature(Vec<T>),
    /// An embedding inserted as-is (continuous feedback).
    Raw(Vec<T>),
}

#[derive(Debug, Clone)]
pub(crate) struct MlpCache<T> {
    input: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    inp: Vec<T>,
    ln1: Vec<T>,
    ln1_mean: Vec<T>,
    ln1_rstd: Vec<T>,
    qkv: Vec<T>,
    att: Vec<T>,
    atty: Vec<T>,
    res1: Vec<T>,
    ln2: Vec<T>,
    ln2_mean: Vec<T>,
    ln2_rstd: Vec<T>,
    fc_pre: Vec<T>,
    fc_act: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct Cache<T> {
    pub s: usize,
    causal: bool,
    fronts: Vec<Option<MlpCache<T>>>,
    pub emb_in: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    resid: Vec<T>,
    lnf_mean: Vec<T>,
    lnf_rstd: Vec<T>,
    pub emb_out: Vec<T>,
    pub logits: Vec<T>,
}

/// Logits `[S, V]` and final hidden states `[S, d]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub seq_len: usize,
    pub vocab_size: usize,
    pub d_model: usize,
    pub logits: Vec<T>,
    pub emb_out: Vec<T>,
}

impl<T: Real> ForwardOutput<T> {
    pub fn logits_row(&self, t: usize) -> &[T] {
        &self.logits[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    pub fn emb_out_row(&self, t: usize) -> &[T] {
        &self.emb_out[t * self.d_model..(t + 1) * self.d_model]
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax<T: Real>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

impl<T: Real> ToyLm<T> {
    pub(crate) fn prefix_slots(&self, prefix: &Prefix) -> Result<Vec<Slot<T>>> {
        Ok(match prefix {
            Prefix::None => Vec::new(),
            Prefix::Text(t) => t.iter().map(|&x| Slot::Text(x)).collect(),
            Prefix::Clusters(c) => c.iter().map(|&x| Slot::Cluster(x)).collect(),
            Prefix::Features(m) => {
                let a = self
                    .config
                    .adapter_front
                    .ok_or(LmError::MissingFrontEnd(FrontEndKind::ContinuousAdapter))?;
                if m.dim() != a.in_dim {
                    return Err(LmError::FeatureDim {
                        expected: a.in_dim,
                        found: m.dim(),
                    });
                }
                m.iter_rows()
                    .map(|r| Slot::Feature(r.iter().map(|&v| T::from_f32(v).unwrap()).collect()))
                    .collect()
            }
        })
    }

    fn mlp_forward(&self, idx: &MlpIdx, input: Vec<T>, out: &mut [T]) -> MlpCache<T> {
        let p = &self.params;
        let mut pre = vec![T::zero(); idx.hidden];
        matmul_forward(&mut pre, &input, &p[idx.fc1_w.clone()], Some(&p[idx.fc1_b.clone()]), idx.in_dim, idx.hidden);
        let mut act = vec![T::zero(); idx.hidden];
        gelu_forward(&mut act, &pre);
        matmul_forward(out, &act, &p[idx.fc2_w.clone()], Some(&p[idx.fc2_b.clone()]), idx.hidden, self.config.d_model);
        MlpCache { input, pre, act }
    }

    /// Front-end outputs (`emb_in`) for each slot.
    pub(crate) fn embed_slots(&self, slots: &[Slot<T>]) -> Result<(Vec<T>, Vec<Option<MlpCache<T>>>)> {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let mut emb = vec![T::zero(); slots.len() * d];
        let mut fronts = Vec::with_capacity(slots.len());
        for (t, slot) in slots.iter().enumerate() {
            let out = &mut emb[t * d..(t + 1) * d];
            let cache = match slot {
                Slot::Text(tok) => {
                    let tok = *tok as usize;
                    if tok >= v {
                        return Err(LmError::TokenOutOfRange { token: tok as u32, size: v });
                    }
                    let start = self.index.tok_emb.start + tok * d;
                    out.copy_from_slice(&self.params[start..start + d]);
                    None
                }
                Slot::Cluster(c) => {
                    let (Some(table), Some(idx)) = (&self.index.clu_emb, &self.index.cluster) else {
                        return Err(LmError::MissingFrontEnd(FrontEndKind::ClusterEmbedMlp));
                    };
                    let rows = table.len() / d;
                    if *c as usize >= rows {
                        return Err(LmError::TokenOutOfRange { token: *c, size: rows });
                    }
                    let start = table.start + *c as usize * d;
                    let input = self.params[start..start + d].to_vec();
                    Some(self.mlp_forward(idx, input, out))
                }
                Slot::Feature(f) => {
                    let idx = self
                        .index
                        .adapter
                        .as_ref()
                        .ok_or(LmError::MissingFrontEnd(FrontEndKind::ContinuousAdapter))?;
                    if f.len() != idx.in_dim {
                        return Err(LmError::FeatureDim { expected: idx.in_dim, found: f.len() });
                    }
                    Some(self.mlp_forward(idx, f.clone(), out))
                }
                Slot::Raw(e) => {
                    out.copy_from_slice(e);
                    None
                }
            };
            fronts.push(cache);
        }
        Ok((emb, fronts))
    }

    pub(crate) fn run(&self, emb_in: Vec<T>, fronts: Vec<Option<MlpCache<T>>>, causal: bool) -> Result<Cache<T>> {
        let c = &self.config;
        let (d, ff, h, v) = (c.d_model, c.d_ff, c.n_heads, c.vocab_size);
        let s = emb_in.len() / d;
        if s > c.max_seq {
            return Err(LmError::SequenceTooLong { len: s, max: c.max_seq });
        }
        let p = &self.params;
        let ix = &self.index;
        let mut x = emb_in.clone();
        let pos = &p[ix.pos_emb.start..ix.pos_emb.start + s * d];
        for (xi, &pi) in x.iter_mut().zip(pos) {
            *xi = *xi + pi;
        }
        let mut blocks = Vec::with_capacity(ix.blocks.len());
        for b in &ix.blocks {
            let z = |n: usize| vec![T::zero(); n];
            let mut bc = BlockCache {
                inp: x,
                ln1: z(s * d),
                ln1_mean: z(s),
                ln1_rstd: z(s),
                qkv: z(s * 3 * d),
                att: z(h * s * s),
                atty: z(s * d),
                res1: z(s * d),
                ln2: z(s * d),
                ln2_mean: z(s),
                ln2_rstd: z(s),
                fc_pre: z(s * ff),
                fc_act: z(s * ff),
            };
            layernorm_forward(&mut bc.ln1, &mut bc.ln1_mean, &mut bc.ln1_rstd, &bc.inp, &p[b.ln1_g.clone()], &p[b.ln1_b.clone()]);
            matmul_forward(&mut bc.qkv, &bc.ln1, &p[b.qkv_w.clone()], Some(&p[b.qkv_b.clone()]), d, 3 * d);
            attention_forward(&mut bc.atty, &mut bc.att, &bc.qkv, s, d, h, causal);
            matmul_forward(&mut bc.res1, &bc.atty, &p[b.proj_w.clone()], Some(&p[b.proj_b.clone()]), d, d);
            for (r, &i) in bc.res1.iter_mut().zip(&bc.inp) {
                *r = *r + i;
            }
            layernorm_forward(&mut bc.ln2, &mut bc.ln2_mean, &mut bc.ln2_rstd, &bc.res1, &p[b.ln2_g.clone()], &p[b.ln2_b.clone()]);
            matmul_forward(&mut bc.fc_pre, &bc.ln2, &p[b.fc_w.clone()], Some(&p[b.fc_b.clone()]), d, ff);
            gelu_forward(&mut bc.fc_act, &bc.fc_pre);
            let mut out = z(s * d);
            matmul_forward(&mut out, &bc.fc_act, &p[b.fcp_w.clone()], Some(&p[b.fcp_b.clone()]), ff, d);
            for (o, &r) in out.iter_mut().zip(&bc.res1) {
                *o = *o + r;
            }
            x = out;
            blocks.push(bc);
        }
        let mut emb_out = vec![T::zero(); s * d];
        let mut lnf_mean = vec![T::zero(); s];
        let mut lnf_rstd = vec![T::zero(); s];
        layernorm_forward(&mut emb_out, &mut lnf_mean, &mut lnf_rstd, &x, &p[ix.lnf_g.clone()], &p[ix.lnf_b.clone()]);
        let mut logits = vec![T::zero(); s * v];
        matmul_forward(&mut logits, &emb_out, &p[ix.head_w.clone()], Some(&p[ix.head_b.clone()]), d, v);
        Ok(Cache {
            s,
            causal,
            fronts,
            emb_in,
            blocks,
            resid: x,
            lnf_mean,
            lnf_rstd,
            emb_out,
            logits,
        })
    }

    /// Runs the transformer over already-embedded inputs (`S x d_model`).
    pub fn forward(&self, prefix_embeddings: &[T], causal: bool) -> Result<ForwardOutput<T>> {
        let d = self.config.d_model;
        if prefix_embeddings.len() % d != 0 {
            return Err(LmError::FeatureDim {
                expected: d,
                found: prefix_embeddings.len() % d,
            });
        }
        let n = prefix_embeddings.len() / d;
        let cache = self.run(prefix_embeddings.to_vec(), vec![None; n], causal)?;
        Ok(self.output(cache))
    }

    pub(crate) fn output(&self, cache: Cache<T>) -> ForwardOutput<T> {
        ForwardOutput {
            seq_len: cache.s,
            vocab_size: self.config.vocab_size,
            d_model: self.config.d_model,
            logits: cache.logits,
            emb_out: cache.emb_out,
        }
    }

    /// Front-end output for a prefix, `len x d_model`.
    pub fn embed(&self, prefix: &Prefix) -> Result<Vec<T>> {
        let slots = self.prefix_slots(prefix)?;
        Ok(self.embed_slots(&slots)?.0)
    }

    /// Embeds text tokens through the text table.
    pub fn embed_tokens(&self, tokens: &[u32]) -> Result<Vec<T>> {
        self.embed(&Prefix::Text(tokens.to_vec()))
    }

    /// Accumulates parameter gradients given upstream gradients on logits,
    /// `emb_out` and `emb_in`.
    pub(crate) fn backward(
        &self,
        cache: &Cache<T>,
        slots: &[Slot<T>],
        d_logits: &[T],
        mut d_emb_out: Vec<T>,
        mut d_emb_in: Vec<T>,
        grads: &mut [T],
    ) {
        let c = &self.config;
        let (d, ff, h, v) = (c.d_model, c.d_ff, c.n_heads, c.vocab_size);
        let s = cache.s;
        let p = &self.params;
        let ix = &self.index;
        let z = |n: usize| vec![T::zero(); n];

        {
            let (dw, db) = split2(grads, ix.head_w.clone(), ix.head_b.clone());
            matmul_backward(Some(&mut d_emb_out), dw, Some(db), d_logits, &cache.emb_out, &p[ix.head_w.clone()], d, v);
        }
        let mut dx = z(s * d);
        {
            let (dg, db) = split2(grads, ix.lnf_g.clone(), ix.lnf_b.clone());
            layernorm_backward(&mut dx, dg, db, &d_emb_out, &cache.resid, &p[ix.lnf_g.clone()], &cache.lnf_mean, &cache.lnf_rstd);
        }
        for (b, bc) in ix.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch: out = res1 + proj(gelu(fc(ln2(res1))))
            let mut d_act = z(s * ff);
            {
                let (dw, db) = split2(grads, b.fcp_w.clone(), b.fcp_b.clone());
                matmul_backward(Some(&mut d_act), dw, Some(db), &dx, &bc.fc_act, &p[b.fcp_w.clone()], ff, d);
            }
            let mut d_pre = z(s * ff);
            gelu_backward(&mut d_pre, &bc.fc_pre, &d_act);
            let mut d_ln2 = z(s * d);
            {
                let (dw, db) = split2(grads, b.fc_w.clone(), b.fc_b.clone());
                matmul_backward(Some(&mut d_ln2), dw, Some(db), &d_pre, &bc.ln2, &p[b.fc_w.clone()], d, ff);
            }
            let mut d_res1 = dx;
            {
                let (dg, db) = split2(grads, b.ln2_g.clone(), b.ln2_b.clone());
                layernorm_backward(&mut d_res1, dg, db, &d_ln2, &bc.res1, &p[b.ln2_g.clone()], &bc.ln2_mean, &bc.ln2_rstd);
            }
            // attention branch: res1 = inp + proj(attn(qkv(ln1(inp))))
            let mut d_atty = z(s * d);
            {
                let (dw, db) = split2(grads, b.proj_w.clone(), b.proj_b.clone());
                matmul_backward(Some(&mut d_atty), dw, Some(db), &d_res1, &bc.atty, &p[b.proj_w.clone()], d, d);
            }
            let mut d_qkv = z(s * 3 * d);
            attention_backward(&mut d_qkv, &d_atty, &bc.qkv, &bc.att, s, d, h, cache.causal);
            let mut d_ln1 = z(s * d);
            {
                let (dw, db) = split2(grads, b.qkv_w.clone(), b.qkv_b.clone());
                matmul_backward(Some(&mut d_ln1), dw, Some(db), &d_qkv, &bc.ln1, &p[b.qkv_w.clone()], d, 3 * d);
            }
            let mut d_inp = d_res1;
            {
                let (dg, db) = split2(grads, b.ln1_g.clone(), b.ln1_b.clone());
                layernorm_backward(&mut d_inp, dg, db, &d_ln1, &bc.inp, &p[b.ln1_g.clone()], &bc.ln1_mean, &bc.ln1_rstd);
            }
            dx = d_inp;
        }
        let dpos = &mut grads[ix.pos_emb.start..ix.pos_emb.start + s * d];
        for (g, &x) in dpos.iter_mut().zip(&dx) {
            *g = *g + x;
        }
        for (e, &x) in d_emb_in.iter_mut().zip(&dx) {
            *e = *e + x;
        }
        for (t, slot) in slots.iter().enumerate() {
            let de = &d_emb_in[t * d..(t + 1) * d];
            match slot {
                Slot::Text(tok) => {
                    let start = ix.tok_emb.start + *tok as usize * d;
                    for (g, &x) in grads[start..start + d].iter_mut().zip(de) {
                        *g = *g + x;
                    }
                }
                Slot::Cluster(cid) => {
                    let idx = ix.cluster.as_ref().expect("cluster front-end");
                    let mc = cache.fronts[t].as_ref().expect("cluster cache");
                    let d_input = self.mlp_backward(idx, mc, de, grads);
                    let start = ix.clu_emb.as_ref().expect("cluster table").start + *cid as usize * d;
                    for (g, &x) in grads[start..start + d].iter_mut().zip(&d_input) {
                        *g = *g + x;
                    }
                }
                Slot::Feature(_) => {
                    let idx = ix.adapter.as_ref().expect("adapter front-end");
                    let mc = cache.fronts[t].as_ref().expect("adapter cache");
                    self.mlp_backward(idx, mc, de, grads);
                }
                Slot::Raw(_) => {}
            }
        }
    }

    fn mlp_backward(&self, idx: &MlpIdx, mc: &MlpCache<T>, dout: &[T], grads: &mut [T]) -> Vec<T> {
        let p = &self.params;
        let d = self.config.d_model;
        let mut d_act = vec![T::zero(); idx.hidden];
        {
            let (dw, db) = split2(grads, idx.fc2_w.clone(), idx.fc2_b.clone());
            matmul_backward(Some(&mut d_act), dw, Some(db), dout, &mc.act, &p[idx.fc2_w.clone()], idx.hidden, d);
        }
        let mut d_pre = vec![T::zero(); idx.hidden];
        gelu_backward(&mut d_pre, &mc.pre, &d_act);
        let mut d_input = vec![T::zero(); idx.in_dim];
        let (dw, db) = split2(grads, idx.fc1_w.clone(), idx.fc1_b.clone());
        matmul_backward(Some(&mut d_input), dw, Some(db), &d_pre, &mc.input, &p[idx.fc1_w.clone()], idx.in_dim, idx.hidden);
        d_input
    }
}

//! Losses, gradients and the Adam update.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels::softmax_row;
use super::model::{Cache, ForwardOutput, Slot};
use super::{Example, FeedbackMode, LmError, Real, Result, ToyLm};

/// Loss components of one sequence or a batch mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub ce: f64,
    pub mse: f64,
    pub alpha: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: LossParts,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip, if any.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(1.0),
        }
    }
}

/// A fully specified training sequence.
pub(crate) struct SeqSpec<T> {
    pub slots: Vec<Slot<T>>,
    pub targets: Vec<Option<u32>>,
    /// `(t, t + 1)` pairs for the embedding regression term.
    pub pairs: Vec<(usize, usize)>,
}

/// CE over targeted positions and per-element MSE over `pairs`, from
/// a forward output and the matching front-end embeddings.
pub fn loss_from_outputs<T: Real>(
    out: &ForwardOutput<T>,
    emb_in: &[T],
    targets: &[Option<u32>],
    pairs: &[(usize, usize)],
    alpha: f64,
) -> LossParts {
    let mut ce = 0.0;
    let mut n = 0usize;
    for (t, tgt) in targets.iter().enumerate() {
        if let Some(y) = tgt {
            let p = softmax_row(out.logits_row(t));
            ce -= p[*y as usize].ln();
            n += 1;
        }
    }
    if n > 0 {
        ce /= n as f64;
    }
    let d = out.d_model;
    let mut mse = 0.0;
    for &(a, b) in pairs {
        for k in 0..d {
            let diff = out.emb_out[a * d + k].to_f64().unwrap() - emb_in[b * d + k].to_f64().unwrap();
            mse += diff * diff;
        }
    }
    if !pairs.is_empty() {
        mse /= (pairs.len() * d) as f64;
    }
    LossParts {
        ce,
        mse,
        alpha,
        total: ce + alpha * mse,
    }
}

impl<T: Real> ToyLm<T> {
    /// Layout: prefix, `<bos>`, target tokens; targets are the text shifted by
    /// one and closed with `<eos>`.
    pub(crate) fn example_spec(&self, ex: &Example) -> Result<SeqSpec<T>> {
        let mut slots = self.prefix_slots(&ex.prefix)?;
        let p = slots.len();
        slots.push(Slot::Text(self.config.bos));
        slots.extend(ex.target.iter().map(|&t| Slot::Text(t)));
        let mut targets = vec![None; p];
        targets.extend(ex.target.iter().map(|&t| Some(t)));
        targets.push(Some(self.config.eos));
        let pairs = (0..ex.target.len()).map(|i| (p + i, p + i + 1)).collect();
        Ok(SeqSpec { slots, targets, pairs })
    }

    fn forward_spec(&self, spec: &SeqSpec<T>) -> Result<Cache<T>> {
        if spec.slots.len() > self.config.max_seq {
            return Err(LmError::SequenceTooLong {
                len: spec.slots.len(),
                max: self.config.max_seq,
            });
        }
        let (emb_in, fronts) = self.embed_slots(&spec.slots)?;
        self.run(emb_in, fronts, true)
    }

    fn spec_loss(&self, spec: &SeqSpec<T>, alpha: f64) -> Result<(Cache<T>, LossParts)> {
        let cache = self.forward_spec(spec)?;
        let out = ForwardOutput {
            seq_len: cache.s,
            vocab_size: self.config.vocab_size,
            d_model: self.config.d_model,
            logits: cache.logits.clone(),
            emb_out: cache.emb_out.clone(),
        };
        let parts = loss_from_outputs(&out, &cache.emb_in, &spec.targets, &spec.pairs, alpha);
        Ok((cache, parts))
    }

    /// Loss of one sequence; gradients (scaled by `scale`) are added to `grads`.
    fn spec_loss_grad(&self, spec: &SeqSpec<T>, alpha: f64, scale: f64, grads: &mut [T]) -> Result<LossParts> {
        let (cache, parts) = self.spec_loss(spec, alpha)?;
        let (s, v, d) = (cache.s, self.config.vocab_size, self.config.d_model);
        let n_tgt = spec.targets.iter().filter(|t| t.is_some()).count();
        let mut d_logits = vec![T::zero(); s * v];
        for (t, tgt) in spec.targets.iter().enumerate() {
            if let Some(y) = tgt {
                let p = softmax_row(&cache.logits[t * v..(t + 1) * v]);
                let row = &mut d_logits[t * v..(t + 1) * v];
                for (k, pk) in p.iter().enumerate() {
                    let g = pk - if k == *y as usize { 1.0 } else { 0.0 };
                    row[k] = T::from_f64(g * scale / n_tgt as f64).unwrap();
                }
            }
        }
        let mut d_out = vec![T::zero(); s * d];
        let mut d_in = vec![T::zero(); s * d];
        if alpha != 0.0 && !spec.pairs.is_empty() {
            let c = 2.0 * alpha * scale / (spec.pairs.len() * d) as f64;
            for &(a, b) in &spec.pairs {
                for k in 0..d {
                    let diff = cache.emb_out[a * d + k].to_f64().unwrap() - cache.emb_in[b * d + k].to_f64().unwrap();
                    let g = T::from_f64(c * diff).unwrap();
                    d_out[a * d + k] = d_out[a * d + k] + g;
                    d_in[b * d + k] = d_in[b * d + k] - g;
                }
            }
        }
        self.backward(&cache, &spec.slots, &d_logits, d_out, d_in, grads);
        Ok(parts)
    }

    fn mode_alpha(&self) -> f64 {
        match self.config.feedback_mode {
            FeedbackMode::Discrete => 0.0,
            FeedbackMode::Continuous => self.config.alpha,
        }
    }

    /// Mean cross-entropy of `targets` given `inputs`, position by position.
    /// Positions whose target is the pad id are skipped.
    pub fn loss_discrete(&self, inputs: &[u32], targets: &[u32]) -> Result<f64> {
        if inputs.len() != targets.len() {
            return Err(LmError::LengthMismatch {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        let spec = SeqSpec {
            slots: inputs.iter().map(|&t| Slot::Text(t)).collect(),
            targets: targets
                .iter()
                .map(|&t| (Some(t) != self.config.pad).then_some(t))
                .collect(),
            pairs: Vec::new(),
        };
        Ok(self.spec_loss(&spec, 0.0)?.1.ce)
    }

    /// CE over the target text plus `alpha` times the embedding regression term.
    pub fn loss_continuous(&self, ex: &Example, alpha: f64) -> Result<LossParts> {
        if self.config.feedback_mode != FeedbackMode::Continuous {
            return Err(LmError::ModeMismatch {
                needed: FeedbackMode::Continuous,
            });
        }
        let spec = self.example_spec(ex)?;
        Ok(self.spec_loss(&spec, alpha)?.1)
    }

    /// Training objective of one example under the configured feedback mode.
    pub fn loss_example(&self, ex: &Example) -> Result<LossParts> {
        let spec = self.example_spec(ex)?;
        Ok(self.spec_loss(&spec, self.mode_alpha())?.1)
    }

    /// Batch-mean objective and its gradient with respect to every parameter.
    pub fn gradients(&self, batch: &[Example]) -> Result<(LossParts, Vec<T>)> {
        let mut grads = vec![T::zero(); self.params.len()];
        let alpha = self.mode_alpha();
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut acc = LossParts {
            alpha,
            ..LossParts::default()
        };
        for ex in batch {
            let spec = self.example_spec(ex)?;
            let parts = self.spec_loss_grad(&spec, alpha, scale, &mut grads)?;
            acc.ce += parts.ce * scale;
            acc.mse += parts.mse * scale;
            acc.total += parts.total * scale;
        }
        Ok((acc, grads))
    }

    /// Batch-mean objective without gradients.
    pub fn batch_loss(&self, batch: &[Example]) -> Result<LossParts> {
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut acc = LossParts {
            alpha: self.mode_alpha(),
            ..LossParts::default()
        };
        for ex in batch {
            let p = self.loss_example(ex)?;
            acc.ce += p.ce * scale;
            acc.mse += p.mse * scale;
            acc.total += p.total * scale;
        }
        Ok(acc)
    }

    /// One Adam update on the batch-mean objective.
    pub fn train_step(&mut self, batch: &[Example], lr: f64) -> Result<StepMetrics> {
        let (loss, mut grads) = self.gradients(batch)?;
        for t in &self.index.tensors {
            if grads[t.range()].iter().any(|g| !g.is_finite()) {
                return Err(LmError::NonFiniteGradient {
                    tensor: t.name.clone(),
                });
            }
        }
        let norm = grads
            .iter()
            .map(|g| {
                let g = g.to_f64().unwrap();
                g * g
            })
            .sum::<f64>()
            .sqrt();
        if let Some(clip) = self.adam.clip {
            if norm > clip {
                let f = T::from_f64(clip / norm).unwrap();
                grads.iter_mut().for_each(|g| *g = *g * f);
            }
        }
        self.step += 1;
        let a = self.adam;
        let b1 = T::from_f64(a.beta1).unwrap();
        let b2 = T::from_f64(a.beta2).unwrap();
        let c1 = 1.0 - a.beta1.powi(self.step as i32);
        let c2 = 1.0 - a.beta2.powi(self.step as i32);
        for (((p, m), v), &g) in self
            .params
            .iter_mut()
            .zip(self.adam_m.iter_mut())
            .zip(self.adam_v.iter_mut())
            .zip(&grads)
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mhat = m.to_f64().unwrap() / c1;
            let vhat = v.to_f64().unwrap() / c2;
            let upd = lr * mhat / (vhat.sqrt() + a.eps);
            *p = *p - T::from_f64(upd).unwrap();
        }
        Ok(StepMetrics {
            step: self.step,
            loss,
            grad_norm: norm,
        })
    }

    /// Runs `steps` updates over `examples` in reshuffled epochs and returns
    /// the metrics of the last step.
    pub fn fit(
        &mut self,
        examples: &[Example],
        steps: usize,
        batch_size: usize,
        lr: f64,
        shuffle_seed: u64,
    ) -> Result<Option<StepMetrics>> {
        if examples.is_empty() || batch_size == 0 {
            return Ok(None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut cursor = order.len();
        let mut batch = Vec::with_capacity(batch_size);
        let mut last = None;
        for _ in 0..steps {
            batch.clear();
            while batch.len() < batch_size.min(examples.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(examples[order[cursor]].clone());
                cursor += 1;
            }
            last = Some(self.train_step(&batch, lr)?);
        }
        Ok(last)
    }
}

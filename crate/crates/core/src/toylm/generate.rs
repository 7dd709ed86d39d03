//! Greedy autoregressive decoding.

use super::model::{argmax, Slot};
use super::{FeedbackMode, LmError, Prefix, Real, Result, ToyLm};

/// One continuous-feedback step: the emitted token and the `emb_out` row that
/// was fed back as the next input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackStep<T> {
    pub token: u32,
    pub emb_out: Vec<T>,
}

impl<T: Real> ToyLm<T> {
    /// Argmax decoding; every emitted token is re-embedded through the text table.
    pub fn generate_discrete(&self, prefix: &Prefix, max_new: usize, eos: u32) -> Result<Vec<u32>> {
        let mut slots = self.prefix_slots(prefix)?;
        slots.push(Slot::Text(self.config.bos));
        let mut out = Vec::new();
        while out.len() < max_new && slots.len() <= self.config.max_seq {
            let (emb, fronts) = self.embed_slots(&slots)?;
            let cache = self.run(emb, fronts, true)?;
            let v = self.config.vocab_size;
            let last = cache.s - 1;
            let tok = argmax(&cache.logits[last * v..(last + 1) * v]);
            if tok == eos {
                break;
            }
            out.push(tok);
            slots.push(Slot::Text(tok));
        }
        Ok(out)
    }

    /// Decoding with `emb_out` appended unmodified as the next input.
    pub fn generate_continuous(&self, prefix: &Prefix, max_new: usize, eos: u32) -> Result<Vec<u32>> {
        Ok(self
            .generate_continuous_traced(prefix, max_new, eos)?
            .into_iter()
            .map(|s| s.token)
            .collect())
    }

    /// [`Self::generate_continuous`] with the fed-back embeddings. The final
    /// step that produced `eos` is not included.
    pub fn generate_continuous_traced(
        &self,
        prefix: &Prefix,
        max_new: usize,
        eos: u32,
    ) -> Result<Vec<FeedbackStep<T>>> {
        if self.config.feedback_mode != FeedbackMode::Continuous {
            return Err(LmError::ModeMismatch {
                needed: FeedbackMode::Continuous,
            });
        }
        let mut slots = self.prefix_slots(prefix)?;
        slots.push(Slot::Text(self.config.bos));
        let (d, v) = (self.config.d_model, self.config.vocab_size);
        let mut out = Vec::new();
        while out.len() < max_new && slots.len() <= self.config.max_seq {
            let (emb, fronts) = self.embed_slots(&slots)?;
            let cache = self.run(emb, fronts, true)?;
            let last = cache.s - 1;
            let tok = argmax(&cache.logits[last * v..(last + 1) * v]);
            if tok == eos {
                break;
            }
            let e = cache.emb_out[last * d..(last + 1) * d].to_vec();
            out.push(FeedbackStep {
                token: tok,
                emb_out: e.clone(),
            });
            slots.push(Slot::Raw(e));
        }
        Ok(out)
    }
}

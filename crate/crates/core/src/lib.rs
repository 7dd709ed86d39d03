//! Desk-scale toolkit for comparing discrete and continuous speech
//! representations as inputs to language-model based speech recognition.
//!
//! The crate is split along the pipeline:
//!
//! * [`featio`] - feature matrices, CTC lattices, manifests, binary formats and a
//!   deterministic synthetic encoder that stands in for pretrained speech encoders.
//! * [`quantizer`] - k-means codebooks, nearest-centroid quantization and
//!   run-length deduplication (discrete unsupervised units).
//! * [`ctcfront`] - greedy and prefix beam CTC decoding with n-gram shallow fusion,
//!   plus the six textual prompt builders (discrete supervised units).
//! * [`ngram`] - count-based backoff n-gram models with ARPA import/export.
//! * [`toylm`] - a small decoder-only transformer with hand-written backprop,
//!   three input front-ends and discrete or continuous autoregressive feedback.
//! * [`evalharness`] - WER scoring and the experiment matrix runner.

pub mod ctcfront;
pub mod evalharness;
pub mod featio;
pub mod ngram;
pub mod quantizer;
pub mod toylm;

pub(crate) mod binio;

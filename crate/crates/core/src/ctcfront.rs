//! CTC lattice decoding and the textual prompt builders.
//!
//! Prefix beam search tracks, per label prefix, the log mass of paths ending in
//! blank and in a non-blank label. An optional word-level n-gram model is fused
//! into the ranking score (shallow fusion):
//!
//! ```text
//! score = ln P_ctc(prefix) + lm_weight * ln P_lm(words) + word_bonus * |words|
//! ```
//!
//! During the search only completed words (those followed by a space) are
//! scored; final hypotheses also score the trailing word and `</s>`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featio::CtcLattice;
use crate::ngram::NGramModel;

const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error("lattice has no frames")]
    EmptyLattice,
    #[error("invalid beam settings: beam {beam}, nbest {nbest}")]
    InvalidBeam { beam: usize, nbest: usize },
    #[error("prompt method {0} needs an n-best list")]
    MissingNBest(PromptMethod),
    #[error("prompt method {method} needs {needed} hypotheses, got {available}")]
    TooFewHypotheses {
        method: PromptMethod,
        needed: usize,
        available: usize,
    },
    #[error("unknown prompt method {0:?}")]
    UnknownMethod(String),
}

pub type Result<T> = std::result::Result<T, CtcError>;

/// A decoded string with per-character confidences. Spaces carry no entry in
/// `per_char_prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedHyp {
    pub text: String,
    pub per_char_prob: Vec<f64>,
    pub total_log_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    /// Descending by `total_log_score`, ties broken by text.
    pub hyps: Vec<DecodedHyp>,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    pub lm_weight: f64,
    pub word_bonus: f64,
    pub nbest: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 16,
            lm_weight: 0.0,
            word_bonus: 0.0,
            nbest: 3,
        }
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn is_space(lat: &CtcLattice, label: usize) -> bool {
    lat.vocab().space() == Some(label)
}

/// Text and per-character probabilities from labels and the frames that
/// emitted each label.
fn hyp_from_runs(lat: &CtcLattice, runs: &[(usize, Vec<usize>)], score: f64) -> DecodedHyp {
    let mut text = String::new();
    let mut per_char_prob = Vec::new();
    for (label, frames) in runs {
        text.push_str(lat.vocab().symbol(*label));
        if is_space(lat, *label) {
            continue;
        }
        let mean = frames
            .iter()
            .map(|&t| (lat.row(t)[*label] as f64).exp())
            .sum::<f64>()
            / frames.len() as f64;
        per_char_prob.push(mean);
    }
    DecodedHyp {
        text,
        per_char_prob,
        total_log_score: score,
    }
}

/// Best-path decoding: per-frame argmax, merge repeats, drop blanks.
pub fn ctc_greedy(lat: &CtcLattice) -> DecodedHyp {
    let blank = lat.blank();
    let mut runs: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut prev = None;
    let mut score = 0.0;
    for t in 0..lat.frames() {
        let row = lat.row(t);
        let best = argmax(row);
        score += row[best] as f64;
        if best != blank {
            if prev == Some(best) {
                runs.last_mut().expect("run open").1.push(t);
            } else {
                runs.push((best, vec![t]));
            }
        }
        prev = Some(best);
    }
    hyp_from_runs(lat, &runs, score)
}

/// Viterbi alignment of `labels` to the lattice, returning the frames assigned
/// to each label, or `None` when the lattice is too short.
pub fn forced_align(lat: &CtcLattice, labels: &[usize]) -> Option<Vec<Vec<usize>>> {
    let blank = lat.blank();
    let n_states = 2 * labels.len() + 1;
    let state_label = |s: usize| if s % 2 == 0 { blank } else { labels[s / 2] };
    let t_max = lat.frames();
    let mut score = vec![f64::NEG_INFINITY; n_states];
    let mut back = vec![vec![0usize; n_states]; t_max];
    score[0] = lat.row(0)[blank] as f64;
    if n_states > 1 {
        score[1] = lat.row(0)[state_label(1)] as f64;
    }
    for t in 1..t_max {
        let row = lat.row(t);
        let mut next = vec![f64::NEG_INFINITY; n_states];
        for s in 0..n_states {
            let mut best = (score[s], s);
            if s >= 1 && score[s - 1] > best.0 {
                best = (score[s - 1], s - 1);
            }
            if s >= 2 && s % 2 == 1 && state_label(s) != state_label(s - 2) && score[s - 2] > best.0 {
                best = (score[s - 2], s - 2);
            }
            next[s] = best.0 + row[state_label(s)] as f64;
            back[t][s] = best.1;
        }
        score = next;
    }
    let mut s = if n_states > 1 && score[n_states - 2] > score[n_states - 1] {
        n_states - 2
    } else {
        n_states - 1
    };
    if score[s] == f64::NEG_INFINITY {
        return None;
    }
    let mut frames = vec![Vec::new(); labels.len()];
    for t in (0..t_max).rev() {
        if s % 2 == 1 {
            frames[s / 2].push(t);
        }
        if t > 0 {
            s = back[t][s];
        }
    }
    frames.iter_mut().for_each(|f| f.reverse());
    Some(frames)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Debug, Clone, Copy)]
struct Mass {
    blank: f64,
    non_blank: f64,
}

impl Mass {
    const ZERO: Mass = Mass {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

/// Word-level fusion helper: splits label prefixes into words and caches
/// natural-log LM scores.
struct Fusion<'a> {
    lat: &'a CtcLattice,
    lm: Option<&'a NGramModel>,
    cfg: BeamConfig,
    cache: HashMap<Vec<usize>, (f64, usize)>,
}

impl<'a> Fusion<'a> {
    fn words(&self, prefix: &[usize], include_partial: bool) -> Vec<String> {
        let mut words = Vec::new();
        let mut cur = String::new();
        for &l in prefix {
            if is_space(self.lat, l) {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            } else {
                cur.push_str(self.lat.vocab().symbol(l));
            }
        }
        if include_partial && !cur.is_empty() {
            words.push(cur);
        }
        words
    }

    fn lm_log10(&self, words: &[String], close: bool) -> f64 {
        let Some(lm) = self.lm else { return 0.0 };
        let mut ids: Vec<u32> = Vec::with_capacity(words.len() + 2);
        let mut start = 0;
        if lm.has_token(crate::ngram::BOS) {
            ids.push(lm.token_id(crate::ngram::BOS).unwrap());
            start = 1;
        }
        ids.extend(words.iter().map(|w| lm.token_id(w).unwrap_or(u32::MAX)));
        if close && lm.has_token(crate::ngram::EOS) {
            ids.push(lm.token_id(crate::ngram::EOS).unwrap());
        }
        (start..ids.len()).map(|i| lm.log10_prob(&ids[..i], ids[i])).sum()
    }

    /// (LM + bonus) contribution of the completed words of `prefix`.
    fn search_bonus(&mut self, prefix: &[usize]) -> f64 {
        let split = prefix
            .iter()
            .rposition(|&l| is_space(self.lat, l))
            .map_or(0, |i| i + 1);
        let done = &prefix[..split];
        let (lm, n) = match self.cache.get(done) {
            Some(&v) => v,
            None => {
                let words = self.words(done, false);
                let v = (self.lm_log10(&words, false), words.len());
                self.cache.insert(done.to_vec(), v);
                v
            }
        };
        self.cfg.lm_weight * LN_10 * lm + self.cfg.word_bonus * n as f64
    }

    fn final_bonus(&self, prefix: &[usize]) -> f64 {
        let words = self.words(prefix, true);
        let lm = if self.lm.is_some() {
            self.lm_log10(&words, true)
        } else {
            0.0
        };
        self.cfg.lm_weight * LN_10 * lm + self.cfg.word_bonus * words.len() as f64
    }
}

fn rank(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// CTC prefix beam search with optional word-level n-gram shallow fusion.
pub fn prefix_beam_decode(
    lat: &CtcLattice,
    lm: Option<&NGramModel>,
    cfg: &BeamConfig,
) -> Result<NBestList> {
    if lat.frames() == 0 {
        return Err(CtcError::EmptyLattice);
    }
    if cfg.beam == 0 || cfg.nbest == 0 || cfg.nbest > cfg.beam {
        return Err(CtcError::InvalidBeam {
            beam: cfg.beam,
            nbest: cfg.nbest,
        });
    }
    let blank = lat.blank();
    let v = lat.vocab().len();
    let mut fusion = Fusion {
        lat,
        lm,
        cfg: *cfg,
        cache: HashMap::new(),
    };

    let mut beams: Vec<(Vec<usize>, Mass)> = vec![(
        Vec::new(),
        Mass {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];
    for t in 0..lat.frames() {
        let row = lat.row(t);
        let mut next: HashMap<Vec<usize>, Mass> = HashMap::with_capacity(beams.len() * v);
        for (prefix, mass) in &beams {
            let total = mass.total();
            for (c, &lp) in row.iter().enumerate() {
                let lp = lp as f64;
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                if c == blank {
                    let e = next.entry(prefix.clone()).or_insert(Mass::ZERO);
                    e.blank = log_add(e.blank, total + lp);
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(c);
                if prefix.last() == Some(&c) {
                    // Repeat without a blank in between stays on the same prefix.
                    let e = next.entry(prefix.clone()).or_insert(Mass::ZERO);
                    e.non_blank = log_add(e.non_blank, mass.non_blank + lp);
                    let e = next.entry(extended).or_insert(Mass::ZERO);
                    e.non_blank = log_add(e.non_blank, mass.blank + lp);
                } else {
                    let e = next.entry(extended).or_insert(Mass::ZERO);
                    e.non_blank = log_add(e.non_blank, total + lp);
                }
            }
        }
        let mut scored: Vec<(Vec<usize>, f64)> = next
            .iter()
            .filter(|(_, m)| m.total() > f64::NEG_INFINITY)
            .map(|(p, m)| (p.clone(), m.total() + fusion.search_bonus(p)))
            .collect();
        scored.sort_by(rank);
        scored.truncate(cfg.beam);
        beams = scored
            .into_iter()
            .map(|(p, _)| {
                let m = next[&p];
                (p, m)
            })
            .collect();
    }

    let mut finals: Vec<(Vec<usize>, f64)> = beams
        .iter()
        .map(|(p, m)| (p.clone(), m.total() + fusion.final_bonus(p)))
        .collect();
    finals.sort_by(|a, b| {
        b.1.total_cmp(&a.1).then_with(|| {
            let ta: String = a.0.iter().map(|&l| lat.vocab().symbol(l)).collect();
            let tb: String = b.0.iter().map(|&l| lat.vocab().symbol(l)).collect();
            ta.cmp(&tb)
        })
    });
    finals.truncate(cfg.nbest);

    let hyps = finals
        .into_iter()
        .map(|(labels, score)| {
            let frames = forced_align(lat, &labels).unwrap_or_else(|| vec![Vec::new(); labels.len()]);
            let runs: Vec<(usize, Vec<usize>)> = labels.into_iter().zip(frames).collect();
            hyp_from_runs(lat, &runs, score)
        })
        .collect();
    Ok(NBestList {
        hyps,
        n: cfg.nbest,
    })
}

/// The six ways of turning CTC output into a text prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptMethod {
    /// Greedy characters separated by commas.
    #[serde(rename = "@1")]
    CommaChars,
    /// Greedy characters with their probabilities.
    #[serde(rename = "@2")]
    CharProbs,
    /// Greedy text as a sentence.
    #[serde(rename = "@3")]
    Sentence,
    /// Greedy words with mean character probability.
    #[serde(rename = "@4")]
    WordProbs,
    /// Best hypothesis after LM rescoring.
    #[serde(rename = "@5")]
    Rescored,
    /// Top three rescored hypotheses with normalized scores.
    #[serde(rename = "@6")]
    TopThree,
}

impl PromptMethod {
    pub const ALL: [PromptMethod; 6] = [
        PromptMethod::CommaChars,
        PromptMethod::CharProbs,
        PromptMethod::Sentence,
        PromptMethod::WordProbs,
        PromptMethod::Rescored,
        PromptMethod::TopThree,
    ];

    pub fn number(self) -> usize {
        PromptMethod::ALL.iter().position(|&m| m == self).unwrap() + 1
    }

    pub fn needs_nbest(self) -> bool {
        matches!(self, PromptMethod::Rescored | PromptMethod::TopThree)
    }
}

impl fmt::Display for PromptMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.number())
    }
}

impl FromStr for PromptMethod {
    type Err = CtcError;

    fn from_str(s: &str) -> Result<Self> {
        let n: usize = s
            .trim_start_matches('@')
            .parse()
            .map_err(|_| CtcError::UnknownMethod(s.to_string()))?;
        PromptMethod::ALL
            .get(n.wrapping_sub(1))
            .copied()
            .ok_or_else(|| CtcError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptText(pub String);

impl PromptText {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PromptText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const SPACE_TOKEN: &str = "<sp>";

pub fn build_prompt(
    method: PromptMethod,
    greedy: &DecodedHyp,
    nbest: Option<&NBestList>,
) -> Result<PromptText> {
    let text = match method {
        PromptMethod::CommaChars => greedy
            .text
            .chars()
            .map(|c| if c == ' ' { SPACE_TOKEN.to_string() } else { c.to_string() })
            .collect::<Vec<_>>()
            .join(", "),
        PromptMethod::CharProbs => {
            let mut probs = greedy.per_char_prob.iter();
            greedy
                .text
                .chars()
                .map(|c| {
                    if c == ' ' {
                        SPACE_TOKEN.to_string()
                    } else {
                        format!("{c}({:.2})", probs.next().copied().unwrap_or(0.0))
                    }
                })
                .collect::<Vec<_>>()
                .join(", ")
        }
        PromptMethod::Sentence => greedy.text.clone(),
        PromptMethod::WordProbs => {
            let mut probs = greedy.per_char_prob.iter();
            greedy
                .text
                .split(' ')
                .filter(|w| !w.is_empty())
                .map(|w| {
                    let ps: Vec<f64> = w.chars().filter_map(|_| probs.next().copied()).collect();
                    let mean = ps.iter().sum::<f64>() / ps.len().max(1) as f64;
                    format!("{w}({mean:.2})")
                })
                .collect::<Vec<_>>()
                .join(" ")
        }
        PromptMethod::Rescored => {
            let nb = nbest.ok_or(CtcError::MissingNBest(method))?;
            nb.hyps
                .first()
                .ok_or(CtcError::TooFewHypotheses {
                    method,
                    needed: 1,
                    available: 0,
                })?
                .text
                .clone()
        }
        PromptMethod::TopThree => {
            let nb = nbest.ok_or(CtcError::MissingNBest(method))?;
            if nb.hyps.len() < 3 {
                return Err(CtcError::TooFewHypotheses {
                    method,
                    needed: 3,
                    available: nb.hyps.len(),
                });
            }
            let top = &nb.hyps[..3];
            let max = top
                .iter()
                .map(|h| h.total_log_score)
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = top.iter().map(|h| (h.total_log_score - max).exp()).sum();
            top.iter()
                .enumerate()
                .map(|(i, h)| {
                    let s = (h.total_log_score - max).exp() / z;
                    format!("{}. {} ({s:.3})", i + 1, h.text)
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
    };
    Ok(PromptText(text))
}

//! Experiment specs and the matrix runner.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use super::wer::{wer, WerReport};
use super::{EvalError, Result};
use crate::ctcfront::{build_prompt, ctc_greedy, prefix_beam_decode, BeamConfig, PromptMethod};
use crate::featio::FeatureMatrix;
use crate::ngram::{read_arpa, train_ngram, NGramConfig, NGramModel, Smoothing};
use crate::quantizer::{dedup, quantize, train_kmeans, Codebook, KMeansParams};
use crate::toylm::{
    AdapterFrontConfig, ClusterFrontConfig, Example, FeedbackMode, LmConfig, Prefix, TextVocab,
    ToyLm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepType {
    DiscUnsup,
    DiscSup,
    ContUnsup,
    ContSup,
}

impl fmt::Display for RepType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepType::DiscUnsup => "disc-unsup",
            RepType::DiscSup => "disc-sup",
            RepType::ContUnsup => "cont-unsup",
            RepType::ContSup => "cont-sup",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Frames concatenated per LM position for continuous inputs.
    pub stack: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 800,
            batch_size: 8,
            lr: 1e-2,
            stack: 2,
        }
    }
}

/// CTC decoding used to build supervised discrete prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingConfig {
    pub beam: BeamConfig,
    pub ngram: NGramConfig,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            beam: BeamConfig {
                beam: 8,
                lm_weight: 0.5,
                word_bonus: 4.0,
                nbest: 3,
            },
            ngram: NGramConfig::new(3, Smoothing::WittenBell),
        }
    }
}

/// Pre-built artifacts; anything absent is trained from the dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Artifacts {
    pub codebook: Option<PathBuf>,
    pub ngram: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Small enough for a spec to train in seconds on one core.
fn default_lm_config() -> LmConfig {
    LmConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        ..LmConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub rep_type: RepType,
    pub layer_tag: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_clusters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_method: Option<PromptMethod>,
    #[serde(default = "default_lm_config")]
    pub lm_config: LmConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub artifacts: Artifacts,
}

impl ExperimentSpec {
    pub fn new(id: impl Into<String>, rep_type: RepType, layer_tag: u32) -> Self {
        Self {
            id: id.into(),
            rep_type,
            layer_tag,
            k_clusters: None,
            prompt_method: None,
            lm_config: default_lm_config(),
            seeds: default_seeds(),
            training: TrainingConfig::default(),
            decoding: DecodingConfig::default(),
            artifacts: Artifacts::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EvalError::InvalidSpec(format!("{}: {m}", self.id)));
        let disc_unsup = self.rep_type == RepType::DiscUnsup;
        if disc_unsup != self.k_clusters.is_some() {
            return bad("k_clusters is required for disc-unsup and only there".into());
        }
        if (self.rep_type == RepType::DiscSup) != self.prompt_method.is_some() {
            return bad("prompt_method is required for disc-sup and only there".into());
        }
        if self.k_clusters == Some(0) {
            return bad("k_clusters must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.training.batch_size == 0 || self.training.stack == 0 {
            return bad("batch_size and stack must be positive".into());
        }
        Ok(())
    }

    /// Short parameter summary used in the report.
    pub fn params(&self) -> String {
        let mut p = format!("L{}", self.layer_tag);
        if let Some(k) = self.k_clusters {
            p.push_str(&format!(" K={k}"));
        }
        if let Some(m) = self.prompt_method {
            p.push_str(&format!(" {m}"));
        }
        if self.lm_config.feedback_mode == FeedbackMode::Continuous {
            p.push_str(&format!(" cont-fb a={}", self.lm_config.alpha));
        }
        p.push_str(&format!(" seeds={}", self.seeds.len()));
        p
    }
}

/// Reads a JSON array of specs.
pub fn load_specs(path: impl AsRef<Path>) -> Result<Vec<ExperimentSpec>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecResult {
    pub id: String,
    pub rep_type: RepType,
    pub params: String,
    /// Pooled WER per seed on test-clean and test-other.
    pub per_seed: Vec<[WerReport; 2]>,
    /// Seed-averaged WER on test-clean and test-other.
    pub wer: [f64; 2],
}

pub const REPORT_HEADER: &str = "id\trep_type\tparams\twer_test_clean\twer_test_other\tstatus";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub id: String,
    pub rep_type: RepType,
    pub params: String,
    pub outcome: std::result::Result<[f64; 2], String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixReport {
    pub rows: Vec<ReportRow>,
}

impl MatrixReport {
    pub fn push(&mut self, spec: &ExperimentSpec, result: &Result<SpecResult>) {
        self.rows.push(ReportRow {
            id: spec.id.clone(),
            rep_type: spec.rep_type,
            params: spec.params(),
            outcome: match result {
                Ok(r) => Ok(r.wer),
                Err(e) => Err(e.to_string()),
            },
        });
    }

    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.outcome.is_ok())
    }

    pub fn to_tsv(&self) -> String {
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let (a, b, status) = match &r.outcome {
                Ok([a, b]) => (format!("{a:.4}"), format!("{b:.4}"), "ok".to_string()),
                Err(e) => ("NA".into(), "NA".into(), format!("error: {}", clean(e))),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{a}\t{b}\t{status}\n",
                clean(&r.id),
                r.rep_type,
                clean(&r.params)
            ));
        }
        out
    }
}

/// Runs every spec; a failing spec is reported and the rest continue.
pub fn run_matrix(specs: &[ExperimentSpec], data: &Dataset, out: Option<&Path>) -> Result<MatrixReport> {
    let mut report = MatrixReport::default();
    for spec in specs {
        report.push(spec, &run_spec(spec, data));
    }
    if let Some(path) = out {
        fs::write(path, report.to_tsv()).map_err(|e| EvalError::io(path, e))?;
    }
    Ok(report)
}

fn missing(spec: &ExperimentSpec, what: String) -> EvalError {
    EvalError::MissingArtifact(format!("{}: {what}", spec.id))
}

fn artifact<'a>(spec: &ExperimentSpec, path: &'a Option<PathBuf>) -> Result<Option<&'a Path>> {
    match path {
        Some(p) if !p.exists() => Err(missing(spec, format!("{} does not exist", p.display()))),
        Some(p) => Ok(Some(p)),
        None => Ok(None),
    }
}

fn layer_features<'a>(spec: &ExperimentSpec, split: &'a Split) -> Result<Vec<&'a FeatureMatrix>> {
    split
        .utterances
        .iter()
        .map(|u| {
            u.features
                .get(&spec.layer_tag)
                .ok_or_else(|| missing(spec, format!("layer {} features for {}", spec.layer_tag, u.id)))
        })
        .collect()
}

/// Per-split prefixes and the front-end they need.
struct Inputs {
    splits: [Vec<Prefix>; 3],
    cluster_k: Option<usize>,
    adapter_dim: Option<usize>,
}

fn build_ngram(spec: &ExperimentSpec, data: &Dataset) -> Result<NGramModel> {
    if let Some(p) = artifact(spec, &spec.artifacts.ngram)? {
        return Ok(read_arpa(p)?);
    }
    let corpus: Vec<Vec<&str>> = data.train.texts().map(|t| t.split_whitespace().collect()).collect();
    Ok(train_ngram(&corpus, &spec.decoding.ngram)?)
}

fn build_inputs(spec: &ExperimentSpec, data: &Dataset, seed: u64) -> Result<Inputs> {
    let splits = data.splits();
    let stack = spec.training.stack;
    let mut out: [Vec<Prefix>; 3] = Default::default();
    let mut cluster_k = None;
    let mut adapter_dim = None;
    match spec.rep_type {
        RepType::ContUnsup => {
            for (dst, split) in out.iter_mut().zip(splits) {
                for m in layer_features(spec, split)? {
                    let s = m.stack_frames(stack);
                    adapter_dim = Some(s.dim());
                    dst.push(Prefix::Features(s));
                }
            }
        }
        RepType::ContSup => {
            for (dst, split) in out.iter_mut().zip(splits) {
                for u in &split.utterances {
                    let lat = u.lattice.as_ref().ok_or_else(|| missing(spec, format!("lattice for {}", u.id)))?;
                    let s = lat.to_posterior_features(spec.layer_tag).stack_frames(stack);
                    adapter_dim = Some(s.dim());
                    dst.push(Prefix::Features(s));
                }
            }
        }
        RepType::DiscUnsup => {
            let codebook = match artifact(spec, &spec.artifacts.codebook)? {
                Some(p) => Codebook::load(p)?,
                None => {
                    let train: Vec<FeatureMatrix> =
                        layer_features(spec, &data.train)?.into_iter().cloned().collect();
                    let k = spec.k_clusters.expect("validated");
                    train_kmeans(&train, &KMeansParams::new(k, seed))?
                }
            };
            cluster_k = Some(codebook.k());
            for (dst, split) in out.iter_mut().zip(splits) {
                for m in layer_features(spec, split)? {
                    let units = dedup(&quantize(&codebook, m)?);
                    dst.push(Prefix::Clusters(units.tokens));
                }
            }
        }
        RepType::DiscSup => {
            let method = spec.prompt_method.expect("validated");
            let lm = if method.needs_nbest() { Some(build_ngram(spec, data)?) } else { None };
            let vocab = TextVocab::default();
            for (dst, split) in out.iter_mut().zip(splits) {
                for u in &split.utterances {
                    let lat = u.lattice.as_ref().ok_or_else(|| missing(spec, format!("lattice for {}", u.id)))?;
                    let greedy = ctc_greedy(lat);
                    let nbest = match &lm {
                        Some(lm) => Some(prefix_beam_decode(lat, Some(lm), &spec.decoding.beam)?),
                        None => None,
                    };
                    let prompt = build_prompt(method, &greedy, nbest.as_ref())?;
                    dst.push(Prefix::Text(vocab.encode(prompt.as_str())));
                }
            }
        }
    }
    Ok(Inputs {
        splits: out,
        cluster_k,
        adapter_dim,
    })
}

fn train_and_eval(spec: &ExperimentSpec, data: &Dataset, seed: u64) -> Result<[WerReport; 2]> {
    let inputs = build_inputs(spec, data, seed)?;
    let vocab = TextVocab::default();
    let splits = data.splits();
    let prefix_len = inputs.splits.iter().flatten().map(Prefix::len).max().unwrap_or(0);
    let targets: Vec<Vec<Vec<u32>>> = splits
        .iter()
        .map(|s| s.utterances.iter().map(|u| vocab.encode(&u.text)).collect())
        .collect();
    let target_len = targets.iter().flatten().map(Vec::len).max().unwrap_or(0);
    let cluster_pad = inputs.cluster_k.unwrap_or(0) as u32;

    let mut cfg = spec.lm_config.clone();
    cfg.vocab_size = vocab.len();
    cfg.bos = TextVocab::BOS;
    cfg.eos = TextVocab::EOS;
    cfg.pad = Some(TextVocab::PAD);
    cfg.seed = seed;
    cfg.max_seq = prefix_len + target_len + 2;
    cfg.cluster_front = inputs.cluster_k.map(|k| ClusterFrontConfig {
        k,
        hidden: cfg.cluster_front.map_or(cfg.d_model, |c| c.hidden),
    });
    cfg.adapter_front = inputs.adapter_dim.map(|in_dim| AdapterFrontConfig {
        in_dim,
        hidden: cfg.adapter_front.map_or(cfg.d_model, |a| a.hidden),
    });

    let mut model = match artifact(spec, &spec.artifacts.checkpoint)? {
        Some(p) => {
            let m = ToyLm::<f32>::load(p)?;
            if m.config() != &cfg {
                return Err(EvalError::InvalidSpec(format!(
                    "{}: checkpoint config does not match the spec's data",
                    spec.id
                )));
            }
            m
        }
        None => ToyLm::<f32>::new(cfg.clone())?,
    };

    let train: Vec<Example> = inputs.splits[0]
        .iter()
        .zip(&targets[0])
        .map(|(p, t)| Example {
            prefix: p.padded(prefix_len, cluster_pad),
            target: t.clone(),
        })
        .collect();
    model.fit(&train, spec.training.steps, spec.training.batch_size, spec.training.lr, seed ^ 0x7261_6e6b)?;

    let max_new = target_len + 1;
    let mut reports = [WerReport::default(); 2];
    for (i, split) in [1usize, 2].into_iter().enumerate() {
        let mut per_utt = Vec::with_capacity(splits[split].utterances.len());
        for (p, u) in inputs.splits[split].iter().zip(&splits[split].utterances) {
            let prefix = p.padded(prefix_len, cluster_pad);
            let tokens = match cfg.feedback_mode {
                FeedbackMode::Discrete => model.generate_discrete(&prefix, max_new, TextVocab::EOS)?,
                FeedbackMode::Continuous => model.generate_continuous(&prefix, max_new, TextVocab::EOS)?,
            };
            per_utt.push(wer(&u.text, &vocab.decode(&tokens))?);
        }
        reports[i] = WerReport::pooled(&per_utt);
    }
    Ok(reports)
}

/// Builds the representation, trains one toy LM per seed and scores both
/// test splits.
pub fn run_spec(spec: &ExperimentSpec, data: &Dataset) -> Result<SpecResult> {
    spec.validate()?;
    let mut per_seed = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        per_seed.push(train_and_eval(spec, data, seed)?);
    }
    let n = per_seed.len() as f64;
    let wer = [0, 1].map(|i| per_seed.iter().map(|r| r[i].wer).sum::<f64>() / n);
    Ok(SpecResult {
        id: spec.id.clone(),
        rep_type: spec.rep_type,
        params: spec.params(),
        per_seed,
        wer,
    })
}

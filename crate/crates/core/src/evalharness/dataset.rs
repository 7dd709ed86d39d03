//! The synthetic transcription task and its on-disk form.
//!
//! A dataset directory holds one manifest per split and source, named
//! `{split}.{source}.jsonl`, where split is `train`, `test-clean` or
//! `test-other` and source is `L<layer>` (SFM1 feature files) or `ctc`
//! (CLG1 lattice files). The manifest `ref` field is the transcript.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::featio::{
    read_feature_matrix, read_lattice, write_feature_matrix, write_lattice, CtcLattice,
    EncodeMode, FeatureMatrix, Manifest, ManifestEntry, SynthConfig, SynthEncoder, HUBERT_LAYERS,
};

pub const SPLITS: [&str; 3] = ["train", "test-clean", "test-other"];
pub const CTC_SOURCE: &str = "ctc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub task_seed: u64,
    pub n_words: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub min_sentence_words: usize,
    pub max_sentence_words: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Noise levels cycled over training utterances.
    pub sigma_train: Vec<f64>,
    pub sigma_clean: f64,
    pub sigma_other: f64,
    pub layers: Vec<u32>,
    /// Layer tag whose noise scale the CTC lattices get.
    pub lattice_layer: u32,
    pub synth: SynthConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            task_seed: 2024,
            n_words: 50,
            min_word_len: 2,
            max_word_len: 4,
            min_sentence_words: 3,
            max_sentence_words: 8,
            n_train: 400,
            n_test: 40,
            sigma_train: vec![1.0, 2.5],
            sigma_clean: 1.0,
            sigma_other: 2.5,
            layers: HUBERT_LAYERS.to_vec(),
            lattice_layer: 8,
            synth: SynthConfig::default(),
        }
    }
}

impl TaskConfig {
    /// Every split noiseless.
    pub fn noiseless() -> Self {
        Self {
            sigma_train: vec![0.0],
            sigma_clean: 0.0,
            sigma_other: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    /// Continuous features keyed by layer tag.
    pub features: BTreeMap<u32, FeatureMatrix>,
    pub lattice: Option<CtcLattice>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub name: String,
    pub utterances: Vec<Utterance>,
}

impl Split {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.utterances.iter().map(|u| u.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test_clean: Split,
    pub test_other: Split,
}

/// Distinct random uppercase words.
pub fn word_list(cfg: &TaskConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
    let letters: Vec<char> = cfg.synth.charset.iter().copied().filter(|c| *c != ' ').collect();
    let mut words: Vec<String> = Vec::with_capacity(cfg.n_words);
    while words.len() < cfg.n_words {
        let len = rng.random_range(cfg.min_word_len..=cfg.max_word_len);
        let w: String = (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

fn source_seed(base: u64, source: u64) -> u64 {
    base ^ source.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl Dataset {
    pub fn synthetic(cfg: &TaskConfig) -> Result<Self> {
        let enc = SynthEncoder::new(cfg.synth.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.task_seed);
        let words = word_list(cfg, &mut rng);
        let sizes = [cfg.n_train, cfg.n_test, cfg.n_test];
        if cfg.sigma_train.is_empty() {
            return Err(EvalError::InvalidSpec("sigma_train needs at least one level".into()));
        }
        let train_sigmas = cfg.sigma_train.clone();
        let sigmas = [train_sigmas, vec![cfg.sigma_clean], vec![cfg.sigma_other]];
        let mut splits = Vec::with_capacity(3);
        for ((name, n), sigma) in SPLITS.iter().zip(sizes).zip(sigmas) {
            let mut utterances = Vec::with_capacity(n);
            for i in 0..n {
                let sigma = sigma[i % sigma.len()];
                let len = rng.random_range(cfg.min_sentence_words..=cfg.max_sentence_words);
                let text = (0..len)
                    .map(|_| words[rng.random_range(0..words.len())].as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                let base: u64 = rng.random();
                let mut features = BTreeMap::new();
                for &layer in &cfg.layers {
                    let m = enc
                        .encode(&text, EncodeMode::Continuous, source_seed(base, layer as u64), sigma, layer)?
                        .into_features()
                        .expect("continuous mode");
                    features.insert(layer, m);
                }
                let lattice = enc
                    .encode(&text, EncodeMode::CtcLattice, source_seed(base, u64::MAX), sigma, cfg.lattice_layer)?
                    .into_lattice();
                utterances.push(Utterance {
                    id: format!("{name}-{i:05}"),
                    text,
                    features,
                    lattice,
                });
            }
            splits.push(Split {
                name: name.to_string(),
                utterances,
            });
        }
        let test_other = splits.pop().unwrap();
        let test_clean = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Ok(Self {
            train,
            test_clean,
            test_other,
        })
    }

    pub fn splits(&self) -> [&Split; 3] {
        [&self.train, &self.test_clean, &self.test_other]
    }

    pub fn test_splits(&self) -> [&Split; 2] {
        [&self.test_clean, &self.test_other]
    }

    /// Writes features, lattices and manifests under `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for split in self.splits() {
            let sub = dir.join(&split.name);
            fs::create_dir_all(&sub).map_err(|e| EvalError::io(&sub, e))?;
            let mut by_source: BTreeMap<String, Vec<ManifestEntry>> = BTreeMap::new();
            for u in &split.utterances {
                for (layer, m) in &u.features {
                    let source = format!("L{layer}");
                    let file = format!("{}/{}.{}.sfm", split.name, u.id, source);
                    write_feature_matrix(m, dir.join(&file))?;
                    by_source.entry(source).or_default().push(ManifestEntry {
                        id: u.id.clone(),
                        path: file.into(),
                        reference: u.text.clone(),
                    });
                }
                if let Some(lat) = &u.lattice {
                    let file = format!("{}/{}.ctc.clg", split.name, u.id);
                    write_lattice(lat, dir.join(&file))?;
                    by_source.entry(CTC_SOURCE.into()).or_default().push(ManifestEntry {
                        id: u.id.clone(),
                        path: file.into(),
                        reference: u.text.clone(),
                    });
                }
            }
            for (source, entries) in by_source {
                let path = dir.join(format!("{}.{}.jsonl", split.name, source));
                Manifest::new(entries)?.save(&path)?;
            }
        }
        Ok(())
    }

    /// Loads every `{split}.{source}.jsonl` manifest found in `dir`. Each
    /// split needs at least one manifest.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut splits = Vec::with_capacity(3);
        for name in SPLITS {
            let mut utts: Vec<Utterance> = Vec::new();
            let mut index: BTreeMap<String, usize> = BTreeMap::new();
            let mut manifests: Vec<(String, std::path::PathBuf)> = fs::read_dir(dir)
                .map_err(|e| EvalError::io(dir, e))?
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let file = e.file_name().to_string_lossy().into_owned();
                    let source = file.strip_prefix(name)?.strip_prefix('.')?.strip_suffix(".jsonl")?.to_string();
                    (!source.contains('.')).then(|| (source, e.path()))
                })
                .collect();
            manifests.sort();
            if manifests.is_empty() {
                return Err(EvalError::MissingArtifact(format!(
                    "no manifest for split {name} in {}",
                    dir.display()
                )));
            }
            for (source, path) in manifests {
                let manifest = Manifest::load(&path)?;
                for entry in &manifest.entries {
                    let slot = *index.entry(entry.id.clone()).or_insert_with(|| {
                        utts.push(Utterance {
                            id: entry.id.clone(),
                            text: entry.reference.clone(),
                            features: BTreeMap::new(),
                            lattice: None,
                        });
                        utts.len() - 1
                    });
                    let u = &mut utts[slot];
                    if u.text != entry.reference {
                        return Err(EvalError::InvalidSpec(format!(
                            "utterance {} has different references across manifests",
                            entry.id
                        )));
                    }
                    if source == CTC_SOURCE {
                        u.lattice = Some(read_lattice(&entry.path)?);
                    } else if let Some(layer) = source.strip_prefix('L').and_then(|l| l.parse::<u32>().ok()) {
                        u.features.insert(layer, read_feature_matrix(&entry.path)?);
                    }
                }
            }
            splits.push(Split {
                name: name.to_string(),
                utterances: utts,
            });
        }
        let test_other = splits.pop().unwrap();
        let test_clean = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Ok(Self {
            train,
            test_clean,
            test_other,
        })
    }
}

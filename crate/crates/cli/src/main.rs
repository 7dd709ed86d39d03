use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use speechrep::ctcfront::{build_prompt, ctc_greedy, prefix_beam_decode, BeamConfig, PromptMethod};
use speechrep::evalharness::{load_specs, run_spec, wer, Dataset, MatrixReport, TaskConfig, WerReport};
use speechrep::featio::{
    read_feature_matrix, read_lattice, write_feature_matrix, write_lattice, EncodeMode, Manifest,
    SynthConfig, SynthEncoder, SynthOutput,
};
use speechrep::ngram::{read_arpa, train_ngram, write_arpa, NGramConfig, Smoothing};
use speechrep::quantizer::{dedup, quantize, train_kmeans, Codebook, KMeansParams};
use speechrep::toylm::{AdapterFrontConfig, Example, FeedbackMode, LmConfig, Prefix, TextVocab, ToyLm};

#[derive(Parser)]
#[command(name = "speechrep", version, about = "Discrete vs continuous speech representations for LM-based ASR")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Discrete,
    Continuous,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthMode {
    Continuous,
    CtcLattice,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode one sentence with the synthetic encoder.
    Synth {
        #[arg(long)]
        text: String,
        #[arg(long, value_enum, default_value = "continuous")]
        mode: SynthMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        layer: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a full synthetic dataset directory (features, lattices, manifests).
    SynthDataset {
        #[arg(long)]
        out: PathBuf,
        /// Task configuration (JSON); defaults otherwise.
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long)]
        noiseless: bool,
    },
    /// Fit a k-means codebook on the features listed in a manifest.
    TrainKmeans {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map a feature file to cluster ids.
    Quantize {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        dedup: bool,
    },
    /// Decode a lattice; prints the hypothesis or the requested prompt.
    CtcDecode {
        #[arg(long)]
        lattice: PathBuf,
        /// Beam width; greedy decoding when absent.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        lm_weight: f64,
        #[arg(long, default_value_t = 0.0)]
        word_bonus: f64,
        #[arg(long, default_value_t = 3)]
        nbest: usize,
        /// Prompt method @1..@6.
        #[arg(long)]
        method: Option<PromptMethod>,
    },
    /// Train a word n-gram model on a text file (one sentence per line).
    TrainNgram {
        #[arg(long)]
        text: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        /// wittenbell, addk or addk:<k>
        #[arg(long, default_value = "wittenbell")]
        smoothing: Smoothing,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy LM on feature files listed in a manifest.
    TrainLm {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "discrete")]
        mode: Mode,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 800)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 2)]
        stack: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transcribe the utterances of a manifest with a trained toy LM.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Word error rate of line-aligned reference and hypothesis files.
    Wer {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Run an experiment matrix and write the TSV report.
    RunMatrix {
        #[arg(long)]
        specs: PathBuf,
        /// Dataset directory; a synthetic dataset is generated when absent.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Sidecar written next to a checkpoint with the input layout used in training.
#[derive(serde::Serialize, serde::Deserialize)]
struct InputLayout {
    stack: usize,
    prefix_len: usize,
}

fn layout_path(ckpt: &Path) -> PathBuf {
    let mut p = ckpt.as_os_str().to_owned();
    p.push(".layout.json");
    PathBuf::from(p)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn task_config(path: Option<&Path>) -> Result<TaskConfig> {
    Ok(match path {
        Some(p) => read_json(p)?,
        None => TaskConfig::default(),
    })
}

fn load_prefixes(manifest: &Manifest, stack: usize) -> Result<Vec<(String, String, Prefix)>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let m = read_feature_matrix(&e.path)?.stack_frames(stack);
            Ok((e.id.clone(), e.reference.clone(), Prefix::Features(m)))
        })
        .collect()
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Synth { text, mode, seed, sigma, layer, out } => {
            let enc = SynthEncoder::new(SynthConfig::default())?;
            let mode = match mode {
                SynthMode::Continuous => EncodeMode::Continuous,
                SynthMode::CtcLattice => EncodeMode::CtcLattice,
            };
            match enc.encode(&text, mode, seed, sigma, layer)? {
                SynthOutput::Features(m) => write_feature_matrix(&m, &out)?,
                SynthOutput::Lattice(l) => write_lattice(&l, &out)?,
            }
        }
        Cmd::SynthDataset { out, task, noiseless } => {
            let cfg = if noiseless { TaskConfig::noiseless() } else { task_config(task.as_deref())? };
            Dataset::synthetic(&cfg)?.write_dir(&out)?;
            eprintln!("wrote dataset to {}", out.display());
        }
        Cmd::TrainKmeans { manifest, k, seed, max_iters, out } => {
            let manifest = Manifest::load(&manifest)?;
            let data = manifest
                .entries
                .iter()
                .map(|e| read_feature_matrix(&e.path))
                .collect::<Result<Vec<_>, _>>()?;
            let params = KMeansParams { max_iters, ..KMeansParams::new(k, seed) };
            let cb = train_kmeans(&data, &params)?;
            cb.save(&out)?;
            let meta = &cb.train_meta;
            eprintln!("k={} iterations={} inertia={:.6}", k, meta.iterations_run, meta.final_inertia);
        }
        Cmd::Quantize { codebook, features, dedup: dd } => {
            let cb = Codebook::load(&codebook)?;
            let mut seq = quantize(&cb, &read_feature_matrix(&features)?)?;
            if dd {
                seq = dedup(&seq);
            }
            let ids: Vec<String> = seq.tokens.iter().map(u32::to_string).collect();
            println!("{}", ids.join(" "));
        }
        Cmd::CtcDecode { lattice, beam, lm, lm_weight, word_bonus, nbest, method } => {
            let lat = read_lattice(&lattice)?;
            let greedy = ctc_greedy(&lat);
            let lm = lm.map(|p| read_arpa(&p)).transpose()?;
            let list = match beam {
                Some(beam) => {
                    let cfg = BeamConfig { beam, lm_weight, word_bonus, nbest };
                    Some(prefix_beam_decode(&lat, lm.as_ref(), &cfg)?)
                }
                None => None,
            };
            match method {
                Some(m) => println!("{}", build_prompt(m, &greedy, list.as_ref())?),
                None => match &list {
                    Some(l) => {
                        for h in &l.hyps {
                            println!("{}\t{:.4}", h.text, h.total_log_score);
                        }
                    }
                    None => println!("{}", greedy.text),
                },
            }
        }
        Cmd::TrainNgram { text, order, smoothing, out } => {
            let body = fs::read_to_string(&text).with_context(|| format!("reading {}", text.display()))?;
            let corpus: Vec<Vec<&str>> = body
                .lines()
                .map(|l| l.split_whitespace().collect::<Vec<_>>())
                .filter(|l| !l.is_empty())
                .collect();
            let lm = train_ngram(&corpus, &NGramConfig::new(order, smoothing))?;
            write_arpa(&lm, &out)?;
        }
        Cmd::TrainLm { config, manifest, mode, alpha, lr, seed, steps, batch_size, stack, out } => {
            let mut cfg: LmConfig = match &config {
                Some(p) => read_json(p)?,
                None => LmConfig::default(),
            };
            let data = load_prefixes(&Manifest::load(&manifest)?, stack)?;
            let Some((_, _, Prefix::Features(first))) = data.first() else {
                bail!("manifest {} is empty", manifest.display());
            };
            let vocab = TextVocab::default();
            let prefix_len = data.iter().map(|d| d.2.len()).max().unwrap_or(0);
            let target_len = data.iter().map(|d| d.1.chars().count()).max().unwrap_or(0);
            cfg.feedback_mode = match mode {
                Mode::Discrete => FeedbackMode::Discrete,
                Mode::Continuous => FeedbackMode::Continuous,
            };
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            cfg.seed = seed;
            cfg.vocab_size = vocab.len();
            cfg.max_seq = cfg.max_seq.max(prefix_len + target_len + 2);
            cfg.adapter_front = Some(AdapterFrontConfig {
                in_dim: first.dim(),
                hidden: cfg.adapter_front.map_or(cfg.d_model, |a| a.hidden),
            });
            let examples: Vec<Example> = data
                .iter()
                .map(|(_, text, p)| Example { prefix: p.padded(prefix_len, 0), target: vocab.encode(text) })
                .collect();
            let mut model = ToyLm::<f32>::new(cfg)?;
            if let Some(m) = model.fit(&examples, steps, batch_size, lr, seed)? {
                eprintln!("step {} loss {:.5} (ce {:.5}, mse {:.5})", m.step, m.loss.total, m.loss.ce, m.loss.mse);
            }
            model.save(&out)?;
            fs::write(layout_path(&out), serde_json::to_string(&InputLayout { stack, prefix_len })?)?;
        }
        Cmd::Decode { checkpoint, manifest, mode } => {
            let model = ToyLm::<f32>::load(&checkpoint)?;
            let layout: InputLayout = read_json(&layout_path(&checkpoint))?;
            let data = load_prefixes(&Manifest::load(&manifest)?, layout.stack)?;
            let vocab = TextVocab::default();
            let continuous = match mode {
                Some(Mode::Continuous) => true,
                Some(Mode::Discrete) => false,
                None => model.config().feedback_mode == FeedbackMode::Continuous,
            };
            let mut reports = Vec::new();
            for (id, reference, prefix) in &data {
                let prefix = prefix.padded(layout.prefix_len, 0);
                let max_new = model.config().max_seq.saturating_sub(prefix.len() + 1);
                let tokens = if continuous {
                    model.generate_continuous(&prefix, max_new, TextVocab::EOS)?
                } else {
                    model.generate_discrete(&prefix, max_new, TextVocab::EOS)?
                };
                let hyp = vocab.decode(&tokens);
                println!("{id}\t{hyp}");
                reports.push(wer(reference, &hyp)?);
            }
            let total = WerReport::pooled(&reports);
            eprintln!("WER {:.4} ({} errors / {} words)", total.wer, total.errors(), total.ref_words);
        }
        Cmd::Wer { reference, hyp } => {
            let r = fs::read_to_string(&reference)?;
            let h = fs::read_to_string(&hyp)?;
            let (r, h): (Vec<&str>, Vec<&str>) = (r.lines().collect(), h.lines().collect());
            if r.len() != h.len() {
                bail!("{} reference lines but {} hypothesis lines", r.len(), h.len());
            }
            let reports = r.iter().zip(&h).map(|(a, b)| wer(a, b)).collect::<Result<Vec<_>, _>>()?;
            let t = WerReport::pooled(&reports);
            println!(
                "WER {:.4}  S={} D={} I={} N={}",
                t.wer, t.substitutions, t.deletions, t.insertions, t.ref_words
            );
        }
        Cmd::RunMatrix { specs, manifest, task, out } => {
            let specs = load_specs(&specs)?;
            let data = match &manifest {
                Some(dir) => Dataset::load_dir(dir)?,
                None => Dataset::synthetic(&task_config(task.as_deref())?)?,
            };
            let mut report = MatrixReport::default();
            for spec in &specs {
                let result = run_spec(spec, &data);
                match &result {
                    Ok(r) => eprintln!("{}\t{:.4}\t{:.4}", spec.id, r.wer[0], r.wer[1]),
                    Err(e) => eprintln!("{}\tfailed: {e}", spec.id),
                }
                report.push(spec, &result);
            }
            fs::write(&out, report.to_tsv()).with_context(|| format!("writing {}", out.display()))?;
            return Ok(report.all_ok());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.
//!
//! Run alone with `cargo test -p speechrep --test acceptance`. Criterion 8
//! trains 30 models and takes several minutes on one core.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use speechrep::ctcfront::{prefix_beam_decode, BeamConfig, PromptMethod};
use speechrep::evalharness::{run_spec, wer, Dataset, ExperimentSpec, RepType, TaskConfig};
use speechrep::featio::{decode_feature_matrix, decode_lattice, encode_feature_matrix, encode_lattice};
use speechrep::ngram::{train_ngram, NGramConfig, NGramModel, Smoothing};
use speechrep::quantizer::Codebook;
use speechrep::toylm::{Example, FeedbackMode, Prefix, ToyLm};

// Tolerances and budgets.
const KMEANS_INSTANCES: u64 = 50;
const KMEANS_REL_TOL: f64 = 1e-4;
const KMEANS_BUDGET: Duration = Duration::from_secs(5);
const CTC_INSTANCES: u64 = 100;
const CTC_BUDGET: Duration = Duration::from_secs(10);
const GRAD_ALPHA: f64 = 100.0;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const LOSS_TOL: f64 = 1e-9;
const LOSS_BATCHES: u64 = 20;
const WER_PAIRS: u32 = 500;
const NOISELESS_STEPS: usize = 1000;
const NOISELESS_BUDGET: Duration = Duration::from_secs(120);
const TREND_SEEDS: u64 = 5;
const TREND_MARGIN: f64 = 0.02;
const TREND_LAYER: u32 = 16;
const TREND_BUDGET: Duration = Duration::from_secs(15 * 60);
const ROUNDTRIP_CASES: u32 = 128;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let el = t.elapsed();
    o.detail = format!("{}; {:.1}s (limit {}s)", o.detail, el.as_secs_f64(), budget.as_secs());
    o.pass &= el < budget;
    o
}

fn kmeans_oracle() -> Outcome {
    timed(KMEANS_BUDGET, || {
        let worst = (0..KMEANS_INSTANCES).map(kmeans_gap).fold(0.0, f64::max);
        outcome(
            worst < KMEANS_REL_TOL,
            format!("{KMEANS_INSTANCES} instances, worst relative inertia gap {worst:.2e}"),
        )
    })
}

fn ctc_oracle() -> Outcome {
    timed(CTC_BUDGET, || {
        let mut mismatches = 0;
        for seed in 0..CTC_INSTANCES {
            let lat = ctc_case(seed);
            let beam = lat.vocab().len().pow(lat.frames() as u32);
            let cfg = BeamConfig { beam, lm_weight: 0.0, word_bonus: 0.0, nbest: 1 };
            let got = prefix_beam_decode(&lat, None, &cfg).unwrap();
            if got.hyps[0].text != ctc_brute_force_best(&lat).0 {
                mismatches += 1;
            }
        }
        outcome(mismatches == 0, format!("{CTC_INSTANCES} lattices, {mismatches} mismatches"))
    })
}

fn gradient_check() -> Outcome {
    timed(GRAD_BUDGET, || {
        let mut worst = (String::new(), 0.0f64);
        for (mode, alpha) in [(FeedbackMode::Discrete, 0.0), (FeedbackMode::Continuous, GRAD_ALPHA)] {
            for (name, e) in gradient_errors(tiny_config(mode, alpha)) {
                if e > worst.1 {
                    worst = (format!("{name} ({mode:?})"), e);
                }
            }
        }
        outcome(
            worst.1 < GRAD_MAX_REL,
            format!("max relative error {:.2e} at {}", worst.1, worst.0),
        )
    })
}

fn random_batch(rng: &mut ChaCha8Rng) -> Vec<Example> {
    (0..rng.random_range(1..=4))
        .map(|_| {
            let p = rng.random_range(0..4);
            let n = rng.random_range(1..=4);
            Example {
                prefix: Prefix::Text((0..p).map(|_| rng.random_range(3..7)).collect()),
                target: (0..n).map(|_| rng.random_range(3..7)).collect(),
            }
        })
        .collect()
}

fn loss_identities() -> Outcome {
    let mut cfg = tiny_config(FeedbackMode::Continuous, GRAD_ALPHA);
    cfg.cluster_front = None;
    cfg.adapter_front = None;
    let (mut zero_gap, mut lin_gap) = (0.0f64, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for b in 0..LOSS_BATCHES {
        cfg.seed = b;
        let model = ToyLm::<f64>::new(cfg.clone()).unwrap();
        let batch = random_batch(&mut rng);
        let mean = |alpha: f64| {
            batch.iter().map(|ex| model.loss_continuous(ex, alpha).unwrap().total).sum::<f64>() / batch.len() as f64
        };
        let discrete = batch
            .iter()
            .map(|ex| {
                let Prefix::Text(p) = &ex.prefix else { unreachable!() };
                let mut inputs = p.clone();
                inputs.push(cfg.bos);
                inputs.extend(&ex.target);
                let mut targets = vec![cfg.pad.unwrap(); p.len()];
                targets.extend(&ex.target);
                targets.push(cfg.eos);
                model.loss_discrete(&inputs, &targets).unwrap()
            })
            .sum::<f64>()
            / batch.len() as f64;
        let l0 = mean(0.0);
        zero_gap = zero_gap.max((l0 - discrete).abs());
        let slope = mean(1.0) - l0;
        for alpha in [0.5, GRAD_ALPHA, rng.random_range(0.0..500.0)] {
            lin_gap = lin_gap.max((mean(alpha) - (l0 + alpha * slope)).abs());
        }
    }
    outcome(
        zero_gap < LOSS_TOL && lin_gap < LOSS_TOL,
        format!("{LOSS_BATCHES} batches, |L(a=0) - L_disc| <= {zero_gap:.1e}, linearity gap {lin_gap:.1e}"),
    )
}

fn wer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words = ["a", "b", "c", "d"];
    let mut disagreements = 0;
    for _ in 0..WER_PAIRS {
        let mut draw = |min_len| {
            let n = rng.random_range(min_len..=6);
            (0..n).map(|_| words[rng.random_range(0..4)]).collect::<Vec<_>>().join(" ")
        };
        let (r, h) = (draw(1), draw(0));
        let rep = wer(&r, &h).unwrap();
        if (rep.errors(), rep.substitutions, rep.deletions, rep.insertions) != wer_counts(&r, &h) {
            disagreements += 1;
        }
    }
    outcome(disagreements == 0, format!("{WER_PAIRS} random pairs, {disagreements} disagreements"))
}

fn noiseless_run() -> Outcome {
    timed(NOISELESS_BUDGET, || {
        let data = Dataset::synthetic(&TaskConfig::noiseless()).unwrap();
        let mut spec = ExperimentSpec::new("noiseless", RepType::ContUnsup, TREND_LAYER);
        spec.training.steps = NOISELESS_STEPS;
        match run_spec(&spec, &data) {
            Ok(r) => outcome(
                r.wer == [0.0, 0.0],
                format!("{NOISELESS_STEPS} steps, WER {:.4}/{:.4}", r.wer[0], r.wer[1]),
            ),
            Err(e) => outcome(false, format!("error: {e}")),
        }
    })
}

fn trend_suite() -> Outcome {
    timed(TREND_BUDGET, || {
        let data = Dataset::synthetic(&TaskConfig::default()).unwrap();
        let seeds: Vec<u64> = (0..TREND_SEEDS).collect();
        let spec = |id: &str, rep, k: Option<usize>, m: Option<PromptMethod>| {
            let mut s = ExperimentSpec::new(id, rep, TREND_LAYER);
            s.k_clusters = k;
            s.prompt_method = m;
            s.seeds = seeds.clone();
            s
        };
        let specs = [
            spec("cont-unsup", RepType::ContUnsup, None, None),
            spec("disc-unsup K=8", RepType::DiscUnsup, Some(8), None),
            spec("disc-unsup K=16", RepType::DiscUnsup, Some(16), None),
            spec("disc-unsup K=32", RepType::DiscUnsup, Some(32), None),
            spec("disc-sup @3", RepType::DiscSup, None, Some(PromptMethod::Sentence)),
            spec("disc-sup @5", RepType::DiscSup, None, Some(PromptMethod::Rescored)),
        ];
        let mut w = Vec::new();
        for s in &specs {
            match run_spec(s, &data) {
                Ok(r) => {
                    println!("    {:<16} test-clean {:.4}  test-other {:.4}", s.id, r.wer[0], r.wer[1]);
                    w.push(r.wer);
                }
                Err(e) => return outcome(false, format!("{}: {e}", s.id)),
            }
        }
        let le = |a: [f64; 2], b: [f64; 2]| (0..2).all(|i| a[i] <= b[i] + TREND_MARGIN);
        let a = (1..4).all(|k| le(w[0], w[k]));
        let b = le(w[2], w[1]) && le(w[3], w[2]);
        let c = le(w[5], w[4]);
        outcome(
            a && b && c,
            format!(
                "{TREND_SEEDS} seeds, margin {TREND_MARGIN}: continuous<=discrete {}, non-increasing in K {}, @5<=@3 {}",
                ok(a), ok(b), ok(c)
            ),
        )
    })
}

fn ok(b: bool) -> &'static str {
    if b { "yes" } else { "no" }
}

fn err<T: std::fmt::Debug>(e: proptest::test_runner::TestError<T>) -> String {
    e.to_string()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn round_trips() -> Outcome {
    let cfg = Config { cases: ROUNDTRIP_CASES, failure_persistence: None, ..Config::default() };
    let mut failures = Vec::new();
    let mut check = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    check(
        "SFM1",
        TestRunner::new(cfg.clone())
            .run(&feature_matrix(), |m| {
                let back = decode_feature_matrix(&encode_feature_matrix(&m).unwrap()).unwrap();
                proptest::prop_assert_eq!(bits(back.as_slice()), bits(m.as_slice()));
                proptest::prop_assert_eq!((back.rows(), back.dim(), back.layer_tag), (m.rows(), m.dim(), m.layer_tag));
                Ok(())
            })
            .map_err(err),
    );
    check(
        "CLG1",
        TestRunner::new(cfg.clone())
            .run(&lattice(), |lat| {
                proptest::prop_assert_eq!(decode_lattice(&encode_lattice(&lat)).unwrap(), lat);
                Ok(())
            })
            .map_err(err),
    );
    check(
        "KMB1",
        TestRunner::new(cfg.clone())
            .run(&codebook(), |cb| {
                let back = Codebook::from_bytes(&cb.to_bytes()).unwrap();
                proptest::prop_assert_eq!(bits(back.centroids()), bits(cb.centroids()));
                proptest::prop_assert_eq!((back.k(), back.dim()), (cb.k(), cb.dim()));
                Ok(())
            })
            .map_err(err),
    );
    check(
        "TLM1",
        TestRunner::new(cfg.clone())
            .run(&small_model(), |m| {
                let bytes = m.to_bytes();
                let back = ToyLm::<f32>::from_bytes(&bytes).unwrap();
                proptest::prop_assert_eq!(back.config(), m.config());
                proptest::prop_assert_eq!(bits(back.params()), bits(m.params()));
                proptest::prop_assert_eq!(back.to_bytes(), bytes);
                Ok(())
            })
            .map_err(err),
    );
    check(
        "ARPA",
        TestRunner::new(cfg)
            .run(&(corpus(), 1usize..4), |(c, order)| {
                let lm = train_ngram(&c, &NGramConfig::new(order, Smoothing::WittenBell)).unwrap();
                let text = lm.to_arpa();
                let back = NGramModel::parse_arpa(&text).unwrap();
                proptest::prop_assert_eq!(back.to_arpa(), text);
                Ok(())
            })
            .map_err(err),
    );
    let pass = failures.is_empty();
    outcome(
        pass,
        if pass {
            format!("SFM1, CLG1, KMB1, TLM1, ARPA: {ROUNDTRIP_CASES} random instances each")
        } else {
            failures.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (2, "k-means oracle", kmeans_oracle),
        (3, "CTC oracle", ctc_oracle),
        (4, "gradient check", gradient_check),
        (5, "loss identities", loss_identities),
        (6, "WER oracle", wer_oracle),
        (7, "noiseless end-to-end", noiseless_run),
        (8, "directional trends", trend_suite),
        (9, "format round-trips", round_trips),
    ];
    let mut results = Vec::new();
    for (n, name, f) in criteria {
        let o = f();
        println!("criterion {n} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push(o.pass);
    }
    // Full-scale WER needs a pretrained encoder, a 7B LM and 960 h of audio;
    // the property suite above stands in for it.
    let substitute = results.iter().all(|&p| p);
    println!(
        "criterion 1 {}: full-scale WER not reproducible here; substitute suite (criteria 2-9) {}",
        if substitute { "PASS" } else { "FAIL" },
        if substitute { "passes" } else { "fails" }
    );
    if substitute { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}

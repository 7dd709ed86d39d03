//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speechrep::featio::{CtcLattice, FeatureMatrix, Vocabulary};
use speechrep::quantizer::{kmeans_points, Codebook, KMeansParams};
use speechrep::toylm::{
    AdapterFrontConfig, ClusterFrontConfig, Example, FeedbackMode, LmConfig, Precision, Prefix,
    ToyLm,
};

// ---------------------------------------------------------------- k-means

/// Sum of squared distances to cluster means, or `None` if a cluster is empty.
fn partition_inertia(points: &[f64], dim: usize, labels: &[usize], k: usize) -> Option<f64> {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..dim {
            sums[l * dim + j] += points[i * dim + j];
        }
    }
    if counts.contains(&0) {
        return None;
    }
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..dim {
            let d = points[i * dim + j] - sums[l * dim + j] / counts[l] as f64;
            total += d * d;
        }
    }
    Some(total)
}

/// Minimum inertia over every assignment of the points to `k` non-empty clusters.
pub fn brute_force_inertia(points: &[f64], dim: usize, k: usize) -> f64 {
    let n = points.len() / dim;
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        if let Some(v) = partition_inertia(points, dim, &labels, k) {
            best = best.min(v);
        }
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

/// Random instance with 3 to 8 distinct points in 1 to 3 dimensions and k in {2, 3}.
pub fn kmeans_case(seed: u64) -> (Vec<f64>, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=3);
    let n = rng.random_range(3..=8);
    let k = rng.random_range(2..=3usize.min(n));
    let points = (0..n * dim).map(|_| rng.random_range(-5.0..5.0)).collect();
    (points, dim, k)
}

/// Lowest final inertia over k-means runs seeded `0..seeds`.
pub fn kmeans_best_of(points: &[f64], dim: usize, k: usize, seeds: u64) -> f64 {
    (0..seeds)
        .map(|s| kmeans_points(points, dim, &KMeansParams::new(k, s)).unwrap().meta.final_inertia)
        .fold(f64::INFINITY, f64::min)
}

/// Relative gap between the best-of-20 k-means inertia and the optimum.
pub fn kmeans_gap(seed: u64) -> f64 {
    let (points, dim, k) = kmeans_case(seed);
    let opt = brute_force_inertia(&points, dim, k);
    let got = kmeans_best_of(&points, dim, k, 20);
    (got - opt).abs() / opt.max(1e-12)
}

// ---------------------------------------------------------------- CTC

pub fn ctc_vocab(v: usize) -> Vocabulary {
    let mut symbols = vec!["_".to_string()];
    symbols.extend((0..v - 1).map(|i| ((b'A' + i as u8) as char).to_string()));
    Vocabulary::new(symbols, Some(0), None).unwrap()
}

/// Probability of every output string, summed over all `V^T` frame paths.
pub fn ctc_string_masses(lat: &CtcLattice) -> HashMap<String, f64> {
    let (t_max, v) = (lat.frames(), lat.vocab().len());
    let blank = lat.blank();
    let mut out = HashMap::new();
    let mut path = vec![0usize; t_max];
    loop {
        let mut text = String::new();
        let mut prev = None;
        let mut logp = 0.0;
        for (t, &c) in path.iter().enumerate() {
            logp += lat.row(t)[c] as f64;
            if c != blank && prev != Some(c) {
                text.push_str(lat.vocab().symbol(c));
            }
            prev = Some(c);
        }
        *out.entry(text).or_insert(0.0) += logp.exp();
        let mut t = 0;
        while t < t_max {
            path[t] += 1;
            if path[t] < v {
                break;
            }
            path[t] = 0;
            t += 1;
        }
        if t == t_max {
            return out;
        }
    }
}

/// Random lattice with 1 to 4 frames and 2 to 4 symbols including blank.
pub fn ctc_case(seed: u64) -> CtcLattice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(1..=4);
    let v = rng.random_range(2..=4);
    let logits: Vec<f64> = (0..t * v).map(|_| rng.random_range(-3.0..3.0)).collect();
    CtcLattice::from_logits(t, &logits, ctc_vocab(v)).unwrap()
}

/// The most probable string; ties go to the lexicographically smaller one.
pub fn ctc_brute_force_best(lat: &CtcLattice) -> (String, f64) {
    ctc_string_masses(lat)
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .unwrap()
}

// ---------------------------------------------------------------- WER

/// (errors, S, D, I) by memoized recursion over prefix lengths. At equal cost
/// the last edit is a substitution or match, then a deletion, then an insertion.
pub fn wer_counts(reference: &str, hyp: &str) -> (usize, usize, usize, usize) {
    fn go(
        r: &[&str],
        h: &[&str],
        i: usize,
        j: usize,
        memo: &mut HashMap<(usize, usize), (usize, usize, usize, usize)>,
    ) -> (usize, usize, usize, usize) {
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if i == 0 {
            (j, 0, 0, j)
        } else if j == 0 {
            (i, 0, i, 0)
        } else {
            let sub = usize::from(r[i - 1] != h[j - 1]);
            let a = go(r, h, i - 1, j - 1, memo);
            let b = go(r, h, i - 1, j, memo);
            let c = go(r, h, i, j - 1, memo);
            let cands = [
                (a.0 + sub, a.1 + sub, a.2, a.3),
                (b.0 + 1, b.1, b.2 + 1, b.3),
                (c.0 + 1, c.1, c.2, c.3 + 1),
            ];
            *cands.iter().min_by_key(|x| x.0).unwrap()
        };
        memo.insert((i, j), v);
        v
    }
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hyp.split_whitespace().collect();
    go(&r, &h, r.len(), h.len(), &mut HashMap::new())
}

pub fn word_seq(max_words: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..=max_words)
        .prop_map(|w| w.join(" "))
}

// ---------------------------------------------------------------- gradients

/// Central-difference step. With |loss| ~ 1, f64 round-off at 1e-5 is ~1e-11
/// absolute, which swamps gradients of order 1e-8.
pub const GRAD_H: f64 = 1e-4;
pub const GRAD_MAX_REL: f64 = 1e-4;
/// Denominator floor so that gradients at round-off level do not dominate.
pub const GRAD_FLOOR: f64 = 1e-8;

/// One layer, d_model 8, every front-end enabled, f64.
pub fn tiny_config(mode: FeedbackMode, alpha: f64) -> LmConfig {
    LmConfig {
        n_layers: 1,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 7,
        max_seq: 12,
        feedback_mode: mode,
        alpha,
        cluster_front: Some(ClusterFrontConfig { k: 4, hidden: 6 }),
        adapter_front: Some(AdapterFrontConfig { in_dim: 3, hidden: 5 }),
        precision: Precision::F64,
        seed: 11,
        bos: 1,
        eos: 2,
        pad: Some(0),
    }
}

/// One example per front-end.
pub fn mixed_batch() -> Vec<Example> {
    let feats = FeatureMatrix::from_rows(
        &[vec![0.3, -1.2, 0.5], vec![1.1, 0.4, -0.7], vec![-0.2, 0.9, 0.8]],
        0,
    )
    .unwrap();
    vec![
        Example { prefix: Prefix::Text(vec![3, 4]), target: vec![5, 6, 3] },
        Example { prefix: Prefix::Clusters(vec![0, 3, 4, 1]), target: vec![4, 4] },
        Example { prefix: Prefix::Features(feats), target: vec![6, 5, 3] },
        Example { prefix: Prefix::None, target: vec![3] },
    ]
}

/// Largest relative error per tensor between analytic and central-difference
/// gradients of the batch objective.
pub fn gradient_errors(cfg: LmConfig) -> Vec<(String, f64)> {
    let mut model = ToyLm::<f64>::new(cfg).unwrap();
    // move off the symmetric initialization so every tensor carries signal
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        *p += 0.05 * ((i as f64) * 0.7).sin();
    }
    let b = mixed_batch();
    let (_, analytic) = model.gradients(&b).unwrap();
    let tensors = model.tensors().to_vec();
    tensors
        .iter()
        .map(|t| {
            let mut worst = 0.0f64;
            for i in t.range() {
                let orig = model.params()[i];
                model.params_mut()[i] = orig + GRAD_H;
                let up = model.batch_loss(&b).unwrap().total;
                model.params_mut()[i] = orig - GRAD_H;
                let down = model.batch_loss(&b).unwrap().total;
                model.params_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * GRAD_H);
                let a = analytic[i];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR));
            }
            (t.name.clone(), worst)
        })
        .collect()
}

// ---------------------------------------------------------------- formats

pub fn any_f32_bits() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |v| v.is_finite())
}

pub fn feature_matrix() -> impl Strategy<Value = FeatureMatrix> {
    (1usize..12, 1usize..10, any::<u32>()).prop_flat_map(|(rows, dim, tag)| {
        prop::collection::vec(any_f32_bits(), rows * dim)
            .prop_map(move |data| FeatureMatrix::new(rows, dim, data, tag).unwrap())
    })
}

pub fn lattice() -> impl Strategy<Value = CtcLattice> {
    (1usize..10, 2usize..8, any::<bool>()).prop_flat_map(|(frames, v, with_space)| {
        prop::collection::vec(-8.0f64..8.0, frames * v).prop_map(move |logits| {
            let mut symbols: Vec<String> = (0..v - 1).map(|i| format!("s{i}")).collect();
            symbols.push("<b>".into());
            let space = with_space.then(|| {
                symbols[0] = " ".into();
                0
            });
            let vocab = Vocabulary::new(symbols, Some(v - 1), space).unwrap();
            CtcLattice::from_logits(frames, &logits, vocab).unwrap()
        })
    })
}

pub fn codebook() -> impl Strategy<Value = Codebook> {
    (2usize..10, 1usize..8).prop_flat_map(|(k, dim)| {
        prop::collection::vec(any_f32_bits(), k * dim)
            .prop_map(move |c| Codebook::new(k, dim, c).unwrap())
    })
}

/// A small model with perturbed parameters and a few Adam steps of state.
pub fn small_model() -> impl Strategy<Value = ToyLm<f32>> {
    (any::<u64>(), any::<bool>(), any::<bool>(), 0usize..3).prop_map(|(seed, clu, ada, steps)| {
        let cfg = LmConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            vocab_size: 9,
            max_seq: 10,
            cluster_front: clu.then_some(ClusterFrontConfig { k: 3, hidden: 4 }),
            adapter_front: ada.then_some(AdapterFrontConfig { in_dim: 2, hidden: 3 }),
            seed,
            ..LmConfig::default()
        };
        let mut m = ToyLm::<f32>::new(cfg).unwrap();
        let ex = Example { prefix: Prefix::Text(vec![4, 5]), target: vec![6, 7] };
        for _ in 0..steps {
            m.train_step(std::slice::from_ref(&ex), 1e-2).unwrap();
        }
        m
    })
}

/// Random corpora over a small word set.
pub fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
    let word = prop::sample::select(vec!["the", "cat", "sat", "on", "a", "mat", "dog", "ran"]);
    prop::collection::vec(prop::collection::vec(word.prop_map(String::from), 1..7), 1..8)
}

mod common;

use proptest::prelude::*;

use common::corpus;
use speechrep::ngram::{train_ngram, NGramConfig, NGramModel, Smoothing, BOS, EOS};

fn total_mass(lm: &NGramModel, ctx: &[u32]) -> f64 {
    lm.predictable().map(|w| 10f64.powf(lm.log10_prob(ctx, w))).sum()
}

fn smoothing() -> impl Strategy<Value = Smoothing> {
    prop_oneof![Just(Smoothing::WittenBell), (0.1f64..2.0).prop_map(Smoothing::AddK)]
}

proptest! {
    #[test]
    fn conditionals_sum_to_one(c in corpus(), order in 1usize..4, sm in smoothing(), picks in prop::collection::vec(any::<u32>(), 0..3)) {
        let lm = train_ngram(&c, &NGramConfig::new(order, sm)).unwrap();
        let n = lm.vocab().len() as u32;
        // seen and unseen contexts alike
        let ctx: Vec<u32> = picks.iter().map(|p| p % n).collect();
        let bos = [lm.token_id(BOS).unwrap()];
        for ctx in [&ctx[..], &bos[..]] {
            let m = total_mass(&lm, ctx);
            prop_assert!((m - 1.0).abs() < 1e-6, "mass {} for context {:?}", m, ctx);
        }
    }

    #[test]
    fn sentence_score_is_the_chain_rule(c in corpus(), order in 1usize..4) {
        let lm = train_ngram(&c, &NGramConfig::new(order, Smoothing::WittenBell)).unwrap();
        for sent in &c {
            let words: Vec<&str> = sent.iter().map(String::as_str).collect();
            let mut ids = vec![lm.token_id(BOS).unwrap()];
            ids.extend(lm.ids(&words));
            ids.push(lm.token_id(EOS).unwrap());
            let chain: f64 = (1..ids.len()).map(|i| lm.log10_prob(&ids[..i], ids[i])).sum();
            prop_assert!((lm.score_sentence(&words) - chain).abs() < 1e-9);
        }
    }

    #[test]
    fn training_text_outscores_unknown_words(c in corpus()) {
        let lm = train_ngram(&c, &NGramConfig::new(3, Smoothing::WittenBell)).unwrap();
        let words: Vec<&str> = c[0].iter().map(String::as_str).collect();
        let unseen: Vec<&str> = words.iter().map(|_| "zebra").collect();
        prop_assert!(lm.score_sentence(&words) > lm.score_sentence(&unseen));
    }
}

#[test]
fn maximum_likelihood_bigram_counts() {
    let c = vec![vec!["a", "b"], vec!["a", "c"]];
    let lm = train_ngram(&c, &NGramConfig::new(2, Smoothing::AddK(0.0))).unwrap();
    let a = lm.token_id("a").unwrap();
    let b = lm.token_id("b").unwrap();
    assert!((lm.log10_prob(&[a], b) - 0.5f64.log10()).abs() < 1e-9);
    let bos = lm.token_id(BOS).unwrap();
    assert!(lm.log10_prob(&[bos], a).abs() < 1e-9);
}

mod common;

use proptest::prelude::*;

use common::{codebook, corpus, feature_matrix, lattice, small_model};
use speechrep::featio::{decode_feature_matrix, decode_lattice, encode_feature_matrix, encode_lattice};
use speechrep::ngram::{train_ngram, NGramConfig, NGramModel, Smoothing};
use speechrep::quantizer::Codebook;
use speechrep::toylm::ToyLm;

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sfm1(m in feature_matrix()) {
        let back = decode_feature_matrix(&encode_feature_matrix(&m).unwrap()).unwrap();
        prop_assert_eq!((back.rows(), back.dim(), back.layer_tag), (m.rows(), m.dim(), m.layer_tag));
        prop_assert_eq!(bits(back.as_slice()), bits(m.as_slice()));
    }

    #[test]
    fn clg1(lat in lattice()) {
        let bytes = encode_lattice(&lat);
        let back = decode_lattice(&bytes).unwrap();
        prop_assert_eq!(&back, &lat);
        prop_assert_eq!(encode_lattice(&back), bytes);
    }

    #[test]
    fn kmb1(cb in codebook()) {
        let back = Codebook::from_bytes(&cb.to_bytes()).unwrap();
        prop_assert_eq!((back.k(), back.dim()), (cb.k(), cb.dim()));
        prop_assert_eq!(bits(back.centroids()), bits(cb.centroids()));
    }

    #[test]
    fn tlm1(m in small_model()) {
        let bytes = m.to_bytes();
        let back = ToyLm::<f32>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.config(), m.config());
        prop_assert_eq!(back.step(), m.step());
        prop_assert_eq!(bits(back.params()), bits(m.params()));
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn arpa(c in corpus(), order in 1usize..4, wb in any::<bool>()) {
        let sm = if wb { Smoothing::WittenBell } else { Smoothing::AddK(0.5) };
        let lm = train_ngram(&c, &NGramConfig::new(order, sm)).unwrap();
        let text = lm.to_arpa();
        let back = NGramModel::parse_arpa(&text).unwrap();
        prop_assert_eq!(back.to_arpa(), text);
        prop_assert_eq!(back.order(), lm.order());
        for n in 1..=order {
            for (key, e) in lm.entries(n) {
                let words: Vec<&str> = key.iter().map(|&i| lm.vocab()[i as usize].as_str()).collect();
                let ids = back.ids(&words);
                let f = &back.entries(n)[&ids];
                prop_assert!((f.log10_prob - e.log10_prob).abs() < 1e-6);
                prop_assert_eq!(f.log10_backoff.is_some(), e.log10_backoff.is_some());
            }
        }
    }
}

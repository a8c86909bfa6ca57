use std::path::Path;

use guidecap::cli::formats::{captions_to_text, dataset_to_text, parse_captions, parse_dataset};
use guidecap::cli::RunConfig;
use guidecap::corpus::{preprocess_caption, RawRecord, Vocabulary};
use guidecap::guiding::{hinge_loss, violated_pairs};
use guidecap::metrics::{bleu, cider, rouge_l};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = u8> {
    0u8..6
}

fn sentence() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(word(), 1..7)
}

fn corpus() -> impl Strategy<Value = (Vec<Vec<u8>>, Vec<Vec<Vec<u8>>>)> {
    (2usize..6).prop_flat_map(|n| {
        (
            prop::collection::vec(sentence(), n),
            prop::collection::vec(prop::collection::vec(sentence(), 1..4), n),
        )
    })
}

fn record() -> impl Strategy<Value = RawRecord> {
    (1usize..4, 1usize..4).prop_flat_map(|(dim, n)| {
        let vec = prop::collection::vec(-1e3f64..1e3, dim);
        (
            "[a-z0-9_]{1,8}",
            vec.clone(),
            prop::collection::vec(vec, n),
            prop::collection::vec("[a-z]{1,5}( [a-z]{1,5}){0,4}", 0..3),
        )
            .prop_map(|(image_id, a0, items, captions)| RawRecord {
                image_id,
                a0,
                items,
                captions,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_image_order((cands, refs) in corpus(), rot in 0usize..5) {
        let k = rot % cands.len();
        let mut c2 = cands.clone();
        let mut r2 = refs.clone();
        c2.rotate_left(k);
        r2.rotate_left(k);
        for n in 1..=4 {
            prop_assert!((bleu(&cands, &refs, n).unwrap() - bleu(&c2, &r2, n).unwrap()).abs() < 1e-12);
        }
        prop_assert!((rouge_l(&cands, &refs).unwrap() - rouge_l(&c2, &r2).unwrap()).abs() < 1e-12);
        prop_assert!((cider(&cands, &refs).unwrap() - cider(&c2, &r2).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn bleu_and_rouge_are_bounded((cands, refs) in corpus()) {
        for n in 1..=4 {
            let b = bleu(&cands, &refs, n).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&b), "bleu{n} = {b}");
        }
        let r = rouge_l(&cands, &refs).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
        prop_assert!(cider(&cands, &refs).unwrap() >= 0.0);
    }

    #[test]
    fn self_reference_is_perfect(cands in prop::collection::vec(sentence(), 1..5)) {
        let refs: Vec<Vec<Vec<u8>>> = cands.iter().map(|c| vec![c.clone()]).collect();
        prop_assert!((rouge_l(&cands, &refs).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((bleu(&cands, &refs, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hinge_is_nonnegative_and_zero_when_separated(
        scores in prop::collection::vec(-5.0f64..5.0, 1..10),
        mask in prop::collection::vec(any::<bool>(), 10),
    ) {
        let pos = &mask[..scores.len()];
        let h = hinge_loss(&scores, pos);
        prop_assert!(h >= 0.0);
        let separated: Vec<f64> = pos.iter().map(|&p| if p { 10.0 } else { 0.0 }).collect();
        prop_assert_eq!(hinge_loss(&separated, pos), 0.0);
        let (bad, total) = violated_pairs(&separated, pos);
        prop_assert_eq!(bad, 0);
        prop_assert_eq!(total, pos.iter().filter(|p| **p).count() * pos.iter().filter(|p| !**p).count());
    }

    #[test]
    fn dataset_text_round_trips(records in prop::collection::vec(record(), 1..4)) {
        let mut seen = std::collections::HashSet::new();
        let records: Vec<RawRecord> = records.into_iter().filter(|r| seen.insert(r.image_id.clone())).collect();
        let text = dataset_to_text(&records);
        let back = parse_dataset(&text, Path::new("p.tsv")).unwrap();
        prop_assert_eq!(back, records);
    }

    #[test]
    fn caption_text_round_trips(rows in prop::collection::vec(("[a-z0-9]{1,6}", "[a-z]{1,5}( [a-z]{1,5}){0,4}"), 1..5)) {
        let text = captions_to_text(&rows);
        prop_assert_eq!(parse_captions(&text, Path::new("c.txt")).unwrap(), rows);
    }

    #[test]
    fn vocabulary_encode_detokenize(caps in prop::collection::vec("[a-z]{1,4}( [a-z]{1,4}){0,6}", 1..6)) {
        let corpus: Vec<Vec<String>> = caps.iter().map(|c| preprocess_caption(c)).collect();
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        for (raw, tokens) in caps.iter().zip(&corpus) {
            let ids = vocab.encode(tokens);
            prop_assert_eq!(ids.len(), tokens.len() + 2);
            prop_assert_eq!(&vocab.detokenize(&ids), raw);
        }
    }

    #[test]
    fn config_toml_round_trips(seed in any::<u32>(), hidden in 1usize..100, lambda in 0.0f64..100.0, k in 1usize..8) {
        let mut cfg = RunConfig {
            seed: seed as u64,
            ..RunConfig::default()
        };
        cfg.model.hidden = hidden;
        cfg.train.lambda1 = lambda;
        cfg.beam.k = k;
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(RunConfig::parse(&text, Path::new("r.toml")).unwrap(), cfg);
    }
}

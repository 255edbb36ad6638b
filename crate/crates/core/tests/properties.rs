use cat_core::autodiff::{Graph, Tensor};
use cat_core::stg::{default_schema_e, default_schema_h, generate, to_jsonl_string, GenOptions, Split};
use cat_core::supervision::{attn_ratio_terms, re_attention_loss, CausalMap, TokenAdjacency};
use cat_core::tokenizer::{normalize, Vocab};
use proptest::prelude::*;

const WORDS: [&str; 8] = ["Smoking", "Weight", "gene", "size", "Answer", "Risk", "the", "of"];

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(WORDS.to_vec()).prop_map(str::to_string),
        (0u32..2000).prop_map(|n| n.to_string()),
        (0u32..100, 0u32..10).prop_map(|(a, b)| format!("{a}.{b}")),
        prop::sample::select(vec![":", ",", ".", "?"]).prop_map(str::to_string),
    ]
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec((word(), prop::sample::select(vec![" ", "  ", "\n", ""])), 1..30)
        .prop_map(|ws| ws.into_iter().map(|(w, sep)| format!("{sep}{w}")).collect())
}

proptest! {
    #[test]
    fn tokenization_is_pure_and_spans_partition(t in text()) {
        let vocab = Vocab::build(&[t.as_str()], 1).unwrap();
        let a = vocab.encode(&t);
        prop_assert_eq!(&a, &vocab.encode(&t));
        let mut next = 0;
        for s in &a.spans {
            prop_assert_eq!(s.start, next);
            prop_assert!(s.end > s.start);
            next = s.end;
        }
        prop_assert_eq!(next, a.ids.len());
        prop_assert!(!a.ids.contains(&Vocab::UNK_ID));
    }

    #[test]
    fn detokenize_reproduces_normalized_text(t in text()) {
        let vocab = Vocab::build(&[t.as_str()], 1).unwrap();
        let enc = vocab.encode(&t);
        // Words glued without whitespace come back glued; only spacing is normalized.
        prop_assert_eq!(normalize(&vocab.detokenize(&enc)), normalize(&t));
    }

    #[test]
    fn located_phrases_match_their_tokens(t in text(), lo in 0usize..30, len in 1usize..5) {
        let vocab = Vocab::build(&[t.as_str()], 1).unwrap();
        let enc = vocab.encode(&t);
        let lo = lo % enc.spans.len();
        let hi = (lo + len).min(enc.spans.len());
        let phrase = vocab.detokenize(&cat_core::tokenizer::Encoding {
            ids: enc.ids[enc.spans[lo].start..enc.spans[hi - 1].end].to_vec(),
            spans: enc.spans[lo..hi].iter().cloned().map(|mut s| { s.start -= enc.spans[lo].start; s.end -= enc.spans[lo].start; s }).collect(),
        });
        let needle = vocab.encode(&phrase).ids;
        let hits = vocab.locate_phrase(&enc, &phrase);
        prop_assert!(!hits.is_empty(), "phrase {:?} taken from the text was not found", phrase);
        for h in hits {
            prop_assert_eq!(&enc.ids[h.positions()], &needle[..]);
        }
    }

    #[test]
    fn causal_map_json_round_trips(entries in prop::collection::vec((text(), prop::collection::vec(text(), 1..4)), 0..5)) {
        let mut map = CausalMap::new();
        for (e, cs) in entries {
            if e.trim().is_empty() || cs.iter().any(|c| c.trim().is_empty()) {
                continue;
            }
            let _ = map.insert(e, cs);
        }
        let back = CausalMap::from_json_str(&map.to_json_string()).unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn hinge_is_monotone_in_alpha(n in 2usize..10, seed in any::<u64>(), a1 in 0.01f64..3.0, da in 0.0f64..3.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<bool> = (0..n * n).map(|_| rng.gen_bool(0.3)).collect();
        let adj = TokenAdjacency::from_unshifted(n, &raw);
        let mut map = vec![0.0f64; n * n];
        for i in 0..n {
            let w: Vec<f64> = (0..=i).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            for j in 0..=i { map[i * n + j] = w[j] / s; }
        }
        let loss = |alpha: f64| {
            let mut g = Graph::<f64>::no_grad();
            let m = g.leaf(&Tensor::new(vec![n, n], map.clone()).unwrap());
            let terms = attn_ratio_terms(&mut g, &adj, m).unwrap();
            let l = re_attention_loss(&mut g, &terms, alpha).unwrap();
            g.scalar_value(l)
        };
        prop_assert!(loss(a1) <= loss(a1 + da));
    }

    #[test]
    fn softmax_rows_are_stochastic_and_masked(n in 1usize..9, vals in prop::collection::vec(-20.0f64..20.0, 64)) {
        let mut g = Graph::<f64>::no_grad();
        let x = g.leaf(&Tensor::new(vec![n, n], vals[..n * n].to_vec()).unwrap());
        let y = g.softmax_rows_masked(x).unwrap();
        let v = g.value(y);
        for i in 0..n {
            let row = &v[i * n..(i + 1) * n];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row[i + 1..].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>(), split_ix in 0usize..4, shuffle in any::<bool>()) {
        let split = [Split::IidTrain, Split::IidValid, Split::IidTest, Split::OodTest][split_ix];
        let opts = GenOptions { shuffle_factors: shuffle };
        for schema in [default_schema_e(), default_schema_h()] {
            let a = generate(&schema, 20, split, seed, opts).unwrap();
            let b = generate(&schema, 20, split, seed, opts).unwrap();
            prop_assert_eq!(to_jsonl_string(&a), to_jsonl_string(&b));
        }
    }

    #[test]
    fn iid_coupling_and_ood_range(seed in any::<u64>()) {
        let schema = default_schema_e();
        for ex in generate(&schema, 50, Split::IidTrain, seed, GenOptions::default()).unwrap() {
            let f = &ex.factors;
            prop_assert_eq!(f["Yellow fingers"], 3 * f["Smoking"] / 2);
            prop_assert_eq!(f["Clothing size"], f["Weight"]);
            prop_assert_eq!(f["Hormones"], f["Exercise"] / 2);
        }
        for ex in generate(&schema, 50, Split::OodTest, seed, GenOptions::default()).unwrap() {
            for name in ["Yellow fingers", "Clothing size", "Hormones"] {
                prop_assert!((1..=10).contains(&ex.factors[name]));
            }
        }
    }
}

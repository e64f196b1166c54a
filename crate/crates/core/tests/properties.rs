mod common;

use coffee_core::data::NUM_CLASSES;
use coffee_core::encoder::Vocab;
use coffee_core::extract::{Lexicons, Pipeline};
use coffee_core::fusion::{compute_qkv, fuse, infuse_kv, FusionStrategy};
use coffee_core::graph::Graph;
use coffee_core::metrics::EvalReport;
use coffee_core::params::{Checkpoint, ParamStore};
use coffee_core::tensor::{matmul, softmax_rows, Rng, Tensor};
use common::*;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-scale..scale, rows * cols)
        .prop_map(move |d| Tensor::new(&[rows, cols], d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..5, 1usize..4, 1usize..4)
}

fn strategy() -> impl Strategy<Value = FusionStrategy> {
    prop::sample::select(FusionStrategy::ALL.to_vec())
}

const WORDS: &[&str] = &[
    "khatam",
    "ho",
    "gaya",
    "sahil",
    "it's",
    "over",
    "the",
    "and",
    "kya",
    "hai",
    "mummy",
    "phone",
    "aaya",
    "tissue",
    "paper",
    "ka",
    "matlab",
    "मैं",
    "घर",
    "जा",
    "रहा",
    "हूँ",
    "!",
    "?!",
    "...",
    "Maya",
    "WALKING",
    "nahi",
    "bahut",
    "happy",
    "café",
    "123",
];

fn utterance() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..14).prop_map(|w| w.join(" "))
}

fn labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0..NUM_CLASSES, n),
            prop::collection::vec(0..NUM_CLASSES, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_are_distributions(x in (1usize..6, 1usize..9).prop_flat_map(|(r, c)| matrix(r, c, 50.0))) {
        let s = softmax_rows(&x).unwrap();
        for r in 0..s.rows() {
            let row = s.row(r);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(n, k, p, q)| (matrix(n, k, 2.0), matrix(k, p, 2.0), matrix(p, q, 2.0)))
    ) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-10);
        let eye = Tensor::eye(a.cols());
        prop_assert_eq!(matmul(&a, &eye).unwrap(), a);
    }

    #[test]
    fn lambda_in_unit_interval_and_blend_is_convex(
        ((n, m, d), seed) in (dims(), any::<u64>())
    ) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let p = coffee_core::fusion::FusionParams::init(&mut store, d, &mut rng);
        let dc = random_matrix(n, d, 2.0, &mut rng);
        let dcs = random_matrix(m, d, 2.0, &mut rng);
        let mut g = Graph::new();
        let a = g.input(&dc).unwrap();
        let b = g.input(&dcs).unwrap();
        let (_, k, v) = compute_qkv(&mut g, &store, &p, a).unwrap();
        let inf = infuse_kv(&mut g, &store, &p, k, v, b, &vec![false; m]).unwrap();
        for (x, hat, lambda, c) in [(k, inf.k_hat, inf.lambda_k, inf.c_k), (v, inf.v_hat, inf.lambda_v, inf.c_v)] {
            let (x, hat, c) = (g.value(x), g.value(hat), g.value(c));
            for (r, &l) in g.data(lambda).iter().enumerate() {
                prop_assert!(l > 0.0 && l < 1.0, "lambda {l}");
                for j in 0..d {
                    let (lo, hi) = (x.at(r, j).min(c.at(r, j)), x.at(r, j).max(c.at(r, j)));
                    let h = hat.at(r, j);
                    prop_assert!(h >= lo - 1e-12 && h <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn padding_does_not_change_real_rows(
        ((n, m, d), pad_n, pad_m, s, seed) in (dims(), 0usize..3, 0usize..3, strategy(), any::<u64>())
    ) {
        let mut rng = Rng::new(seed);
        let (store, p) = random_fusion_params(d, 1.0, &mut rng);
        let dc = random_matrix(n, d, 2.0, &mut rng);
        let dcs = random_matrix(m, d, 2.0, &mut rng);
        let junk_c = random_matrix(pad_n, d, 5.0, &mut rng);
        let junk_cs = random_matrix(pad_m, d, 5.0, &mut rng);
        let stack = |a: &Tensor, b: &Tensor| {
            let mut rows = a.to_rows();
            rows.extend(b.to_rows());
            Tensor::from_rows(&rows).unwrap()
        };
        let run = |dc: &Tensor, dcs: &Tensor, pn: usize, pm: usize| {
            let mut g = Graph::new();
            let a = g.input(dc).unwrap();
            let b = g.input(dcs).unwrap();
            let mask = |real: usize, pad: usize| (0..real + pad).map(|i| i >= real).collect::<Vec<_>>();
            let out = fuse(&mut g, &store, s, &p, a, &mask(n, pn), Some(b), &mask(m, pm)).unwrap();
            g.value(out.fused).to_rows()[..n].to_vec()
        };
        let plain = run(&dc, &dcs, 0, 0);
        let padded = run(&stack(&dc, &junk_c), &stack(&dcs, &junk_cs), pad_n, pad_m);
        prop_assert_eq!(plain, padded);
    }

    #[test]
    fn topics_are_ascii_deduplicated_and_free_of_stopwords(text in utterance()) {
        let lex = Lexicons::bundled();
        let trace = Pipeline::new(lex.clone()).run(&text);
        let topics = &trace.topics.topics;
        let mut seen = std::collections::HashSet::new();
        for t in topics {
            prop_assert!(!t.is_empty() && t.is_ascii(), "{t:?}");
            prop_assert!(!lex.stopwords_en.contains(t) && !lex.stopwords_hi.contains(t), "{t:?}");
            prop_assert!(seen.insert(t.clone()), "duplicate {t:?}");
        }
        prop_assert_eq!(&trace.query, &topics.join(" "));
    }

    #[test]
    fn metrics_match_brute_force((gold, pred) in labels()) {
        let r = EvalReport::from_predictions(&gold, &pred).unwrap();
        let b = brute_metrics(&gold, &pred);
        prop_assert_eq!(r.confusion, b.confusion);
        for c in 0..NUM_CLASSES {
            prop_assert!((r.per_class_f1[c] - b.f1[c]).abs() < 1e-12);
        }
        prop_assert!((r.weighted_f1 - b.weighted).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.weighted_f1));
        let perfect = EvalReport::from_predictions(&gold, &gold).unwrap();
        prop_assert_eq!(perfect.weighted_f1, 1.0);
    }

    #[test]
    fn vocab_text_round_trip(words in prop::collection::hash_map("[a-z']{1,8}|[\u{0900}-\u{097F}]{1,4}", 1usize..5, 0..30), min in 1usize..4) {
        let v = Vocab::from_counts(&words, min);
        let back = Vocab::from_text(&v.to_text()).unwrap();
        prop_assert_eq!(back.tokens(), v.tokens());
        for w in words.keys() {
            prop_assert_eq!(back.id(w), v.id(w));
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(shapes in prop::collection::vec((1usize..4, 1usize..4), 1..5), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        for (i, (r, c)) in shapes.iter().enumerate() {
            let data = (0..r * c).map(|_| rng.normal() * 10f64.powi(rng.below(30) as i32 - 15)).collect();
            store.add(format!("p{i}"), Tensor::new(&[*r, *c], data).unwrap().tracked());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        store.to_checkpoint(serde_json::json!({"seed": seed})).save(&path).unwrap();
        let back = ParamStore::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        prop_assert_eq!(back.len(), store.len());
        for ((_, na, a), (_, nb, b)) in store.iter().zip(back.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_logit_shift_keeps_predictions(shift in -50i32..50, s in strategy(), seed in 0u64..4) {
        let (mut model, insts, cache) = tiny_model(seed, s);
        let prepared = model.prepare_all(&insts, Some(&cache)).unwrap();
        let before: Vec<_> = prepared.iter().map(|p| model.logits(p).unwrap().0).collect();
        for b in model.store.get_mut(model.head.head_b).data_mut() {
            *b += shift as f64;
        }
        for (p, old) in prepared.iter().zip(&before) {
            let (new, _) = model.logits(p).unwrap();
            for (a, b) in old.iter().zip(&new) {
                prop_assert!((b - a - shift as f64).abs() < 1e-9);
            }
            let top = old.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let runner_up = old.iter().cloned().filter(|v| *v < top).fold(f64::NEG_INFINITY, f64::max);
            if top - runner_up > 1e-9 {
                prop_assert_eq!(model.predict(p).unwrap().index(), argmax(old));
            }
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

mod common;

use std::collections::HashMap;

use proptest::prelude::*;

use promptscope_core::embedding::EmbeddingVector;
use promptscope_core::eval::{
    classify, confusion_matrix, macro_f1, similarity_profile, ClassPromptSet, LabelMap,
};
use promptscope_core::search::SearchEngine;
use promptscope_core::store::{ImageRecord, Store, StoreSnapshot};

type Raw = Vec<(String, Vec<f32>)>;

fn ev(v: &[f32]) -> EmbeddingVector {
    EmbeddingVector::new(v.to_vec()).unwrap()
}

fn snapshot(raw: &Raw) -> StoreSnapshot {
    let mut store = Store::create(raw[0].1.len()).unwrap();
    store
        .ingest(raw.iter().map(|(id, v)| ImageRecord::new(id.clone(), "", ev(v))).collect())
        .unwrap();
    store.snapshot()
}

fn prompt_set(raw: &Raw) -> ClassPromptSet {
    ClassPromptSet::new(raw.iter().map(|(l, v)| (l.clone(), ev(v))).collect()).unwrap()
}

fn random(seed: u64, n: usize, dim: usize, prefix: &str) -> Raw {
    let mut rng = common::rng(seed);
    (0..n).map(|i| (format!("{prefix}{i}"), common::gaussian(&mut rng, dim))).collect()
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn classify_matches_exhaustive_recomputation() {
    let images = random(20, 50, 8, "img");
    let prompts = random(21, 5, 8, "class");
    let got = classify(&snapshot(&images), &prompt_set(&prompts)).unwrap();
    assert_eq!(got.len(), 50);
    for (id, v) in &images {
        assert_eq!(got[id], common::naive_classify(v, &prompts), "{id}");
    }
}

#[test]
fn confusion_matches_tally() {
    use rand::Rng;
    let names = labels(&["a", "b", "c", "d", "e"]);
    let mut rng = common::rng(22);
    let mut pred = LabelMap::new();
    let mut truth = LabelMap::new();
    let mut pairs = Vec::new();
    for i in 0..200 {
        let id = format!("id{i}");
        let p = names[rng.random_range(0..5)].clone();
        let t = names[rng.random_range(0..5)].clone();
        pred.insert(id.clone(), p.clone());
        truth.insert(id.clone(), t);
        pairs.push((id, p));
    }
    let truth_map: HashMap<String, String> = truth.clone().into_iter().collect();
    let counts = common::tally(&pairs, &truth_map);
    let cm = confusion_matrix(&pred, &truth, &names).unwrap();
    assert_eq!(cm.total(), 200);
    for (p, pl) in names.iter().enumerate() {
        for (t, tl) in names.iter().enumerate() {
            let expected = counts.get(&(pl.clone(), tl.clone())).copied().unwrap_or(0);
            assert_eq!(cm.raw[p][t], expected);
        }
    }
    for t in 0..5 {
        let col: u64 = (0..5).map(|p| cm.raw[p][t]).sum();
        let norm_sum: f64 = (0..5).map(|p| cm.column_normalized[p][t]).sum();
        if col > 0 {
            assert!((norm_sum - 1.0).abs() < 1e-12);
        }
    }
    let f1 = macro_f1(&pred, &truth, &names).unwrap();
    assert!((f1 - common::counting_macro_f1(&pairs, &truth_map, &names)).abs() <= 1e-12);
}

#[test]
fn three_class_hand_computed() {
    let pred: LabelMap = [("1", "A"), ("2", "B"), ("3", "A"), ("4", "C")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let truth: LabelMap = [("1", "A"), ("2", "B"), ("3", "C"), ("4", "B")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let f1 = macro_f1(&pred, &truth, &labels(&["A", "B", "C"])).unwrap();
    assert!((f1 - 4.0 / 9.0).abs() < 1e-15);
}

#[test]
fn profile_matches_naive_quantiles() {
    let images = random(23, 60, 6, "img");
    let prompts = random(24, 3, 6, "c");
    let truth: LabelMap = images
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 10 != 9)
        .map(|(i, (id, _))| (id.clone(), prompts[i % 3].0.clone()))
        .collect();
    let groups = similarity_profile(&snapshot(&images), &prompt_set(&prompts), &truth).unwrap();
    assert_eq!(groups.len(), 3);
    for g in &groups {
        let members: Vec<&Vec<f32>> = images
            .iter()
            .filter(|(id, _)| truth.get(id) == Some(&g.truth))
            .map(|(_, v)| v)
            .collect();
        assert_eq!(g.images, members.len());
        for (label, p) in &prompts {
            let samples: Vec<f64> = members.iter().map(|v| common::cosine(v, p)).collect();
            let d = &g.by_prompt[label];
            assert_eq!(d.count, samples.len());
            assert_eq!(d.min, common::naive_quantile(&samples, 0.0));
            assert_eq!(d.max, common::naive_quantile(&samples, 1.0));
            for (q, got) in [(0.25, d.q1), (0.5, d.median), (0.75, d.q3)] {
                assert!((got - common::naive_quantile(&samples, q)).abs() < 1e-15);
            }
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            assert!((d.mean - mean).abs() < 1e-12);
        }
    }
}

fn instance() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    // seed, dim, images, classes
    (any::<u64>(), 2usize..16, 1usize..60, 2usize..7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classify_agrees_with_score_all((seed, dim, n, c) in instance()) {
        let images = random(seed, n, dim, "i");
        let prompts = random(seed ^ 9, c, dim, "c");
        let snap = snapshot(&images);
        let got = classify(&snap, &prompt_set(&prompts)).unwrap();
        let engine = SearchEngine::sequential();
        let per_class: Vec<_> = prompts
            .iter()
            .map(|(_, p)| engine.score_all(&snap, &ev(p)).unwrap())
            .collect();
        for (id, _) in &images {
            let mut best = 0;
            for k in 1..c {
                if per_class[k].get(id).unwrap() .value() > per_class[best].get(id).unwrap().value() {
                    best = k;
                }
            }
            prop_assert_eq!(&got[id], &prompts[best].0);
        }
    }

    #[test]
    fn classify_ignores_prompt_scale((seed, dim, n, c) in instance(), exp in -6i32..6) {
        let images = random(seed, n, dim, "i");
        let prompts = random(seed ^ 5, c, dim, "c");
        let scaled: Raw = prompts
            .iter()
            .map(|(l, v)| (l.clone(), v.iter().map(|x| x * 2f32.powi(exp)).collect()))
            .collect();
        let snap = snapshot(&images);
        prop_assert_eq!(
            classify(&snap, &prompt_set(&prompts)).unwrap(),
            classify(&snap, &prompt_set(&scaled)).unwrap()
        );
    }

    #[test]
    fn classify_ignores_class_order((seed, dim, n, c) in instance()) {
        let images = random(seed, n, dim, "i");
        let prompts = random(seed ^ 6, c, dim, "c");
        let mut reversed = prompts.clone();
        reversed.reverse();
        let snap = snapshot(&images);
        // Random Gaussian scores have no ties, so the order never matters.
        prop_assert_eq!(
            classify(&snap, &prompt_set(&prompts)).unwrap(),
            classify(&snap, &prompt_set(&reversed)).unwrap()
        );
    }

    #[test]
    fn macro_f1_invariant_under_relabel(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let names = labels(&["w", "x", "y", "z"]);
        let renamed = labels(&["q1", "q2", "q3", "q4"]);
        let build = |map: &dyn Fn(usize) -> String| {
            let mut pred = LabelMap::new();
            let mut truth = LabelMap::new();
            for (i, (p, t)) in pairs.iter().enumerate() {
                pred.insert(i.to_string(), map(*p));
                truth.insert(i.to_string(), map(*t));
            }
            (pred, truth)
        };
        let (p1, t1) = build(&|i| names[i].clone());
        let (p2, t2) = build(&|i| renamed[perm[i]].clone());
        let order: Vec<String> = (0..4).map(|i| renamed[perm[i]].clone()).rev().collect();
        let a = macro_f1(&p1, &t1, &names).unwrap();
        let b = macro_f1(&p2, &t2, &order).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn removing_an_id_decrements_one_cell(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60),
        victim in any::<prop::sample::Index>(),
    ) {
        let names = labels(&["a", "b", "c"]);
        let mut pred = LabelMap::new();
        let mut truth = LabelMap::new();
        for (i, (p, t)) in pairs.iter().enumerate() {
            pred.insert(i.to_string(), names[*p].clone());
            truth.insert(i.to_string(), names[*t].clone());
        }
        let before = confusion_matrix(&pred, &truth, &names).unwrap();
        prop_assert_eq!(before.total(), pairs.len() as u64);
        let v = victim.index(pairs.len());
        pred.shift_remove(&v.to_string());
        let after = confusion_matrix(&pred, &truth, &names).unwrap();
        let (vp, vt) = pairs[v];
        for p in 0..3 {
            for t in 0..3 {
                let expected = before.raw[p][t] - u64::from((p, t) == (vp, vt));
                prop_assert_eq!(after.raw[p][t], expected);
            }
        }
    }
}

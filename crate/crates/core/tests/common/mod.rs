//! Reference implementations used as test oracles.
//!
//! Everything here is written from the definitions alone, without calling
//! into the library's scoring, ranking or counting code.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random non-zero Gaussian vector.
pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

pub fn normalized(v: &[f32]) -> Vec<f32> {
    let n = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    v.iter().map(|&x| (f64::from(x) / n) as f32).collect()
}

/// Cosine similarity from the textbook formula, accumulated in f64 in
/// index order.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        let (x, y) = (f64::from(a[i]), f64::from(b[i]));
        dot += x * y;
    }
    for &x in a {
        na += f64::from(x) * f64::from(x);
    }
    for &y in b {
        nb += f64::from(y) * f64::from(y);
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Componentwise mean of prompt vectors, rounded back to f32.
pub fn mean(vectors: &[Vec<f32>]) -> Vec<f32> {
    let dim = vectors[0].len();
    (0..dim)
        .map(|i| {
            let mut s = 0.0f64;
            for v in vectors {
                s += f64::from(v[i]);
            }
            (s / vectors.len() as f64) as f32
        })
        .collect()
}

/// Scores every record (`s_pos − s_neg`, missing side = 0), sorts the full
/// list by score descending then insertion order, and keeps `k`.
pub fn naive_top_k(
    records: &[(String, Vec<f32>)],
    positive: Option<&[f32]>,
    negative: Option<&[f32]>,
    k: usize,
) -> Vec<(usize, String, f64)> {
    let mut all: Vec<(usize, f64)> = records
        .iter()
        .enumerate()
        .map(|(i, (_, v))| {
            let p = positive.map_or(0.0, |q| cosine(v, q));
            let n = negative.map_or(0.0, |q| cosine(v, q));
            (i, p - n)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all.into_iter()
        .enumerate()
        .map(|(rank, (i, s))| (rank + 1, records[i].0.clone(), s))
        .collect()
}

/// Label of the most similar prompt; ties go to the earlier prompt.
pub fn naive_classify(image: &[f32], prompts: &[(String, Vec<f32>)]) -> String {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, (_, p)) in prompts.iter().enumerate() {
        let s = cosine(image, p);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    prompts[best].0.clone()
}

/// `counts[(pred, truth)]` by direct tallying.
pub fn tally(pred: &[(String, String)], truth: &HashMap<String, String>) -> HashMap<(String, String), u64> {
    let mut counts = HashMap::new();
    for (id, p) in pred {
        *counts.entry((p.clone(), truth[id].clone())).or_insert(0) += 1;
    }
    counts
}

/// Macro F1 recomputed by counting TP, FP and FN per class.
pub fn counting_macro_f1(pred: &[(String, String)], truth: &HashMap<String, String>, labels: &[String]) -> f64 {
    let mut total = 0.0;
    for c in labels {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (id, p) in pred {
            let t = &truth[id];
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        total += if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    total / labels.len() as f64
}

/// Linear-interpolation quantile by sorting a copy.
pub fn naive_quantile(samples: &[f64], q: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Double-double arithmetic for an extended-precision cosine reference.
#[derive(Clone, Copy, Debug)]
pub struct Dd(pub f64, pub f64);

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.0, o.0);
        let e = e + self.1 + o.1;
        let (hi, lo) = two_sum(s, e);
        Dd(hi, lo)
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.0, o.0);
        let e = e + self.0 * o.1 + self.1 * o.0;
        let (hi, lo) = two_sum(p, e);
        Dd(hi, lo)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.add(o.mul(Dd(-q1, 0.0)));
        let q2 = r.0 / o.0;
        let r = r.add(o.mul(Dd(-q2, 0.0)));
        let q3 = r.0 / o.0;
        let (hi, lo) = two_sum(q1, q2);
        Dd(hi, lo).add(Dd(q3, 0.0))
    }

    /// One Newton step on the f64 square root.
    pub fn sqrt(self) -> Dd {
        let x = self.0.sqrt();
        let xx = Dd(x, 0.0).mul(Dd(x, 0.0));
        let corr = self.add(Dd(-xx.0, -xx.1)).0 / (2.0 * x);
        let (hi, lo) = two_sum(x, corr);
        Dd(hi, lo)
    }

    pub fn to_f64(self) -> f64 {
        self.0 + self.1
    }
}

/// Cosine evaluated in double-double arithmetic. f32 products are exact
/// in f64, so every rounding happens at roughly 2^-104 relative.
pub fn cosine_dd(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = Dd(0.0, 0.0);
    let mut na = Dd(0.0, 0.0);
    let mut nb = Dd(0.0, 0.0);
    for i in 0..a.len() {
        let (x, y) = (f64::from(a[i]), f64::from(b[i]));
        dot = dot.add(Dd(x * y, 0.0));
        na = na.add(Dd(x * x, 0.0));
        nb = nb.add(Dd(y * y, 0.0));
    }
    dot.div(na.sqrt().mul(nb.sqrt())).to_f64()
}

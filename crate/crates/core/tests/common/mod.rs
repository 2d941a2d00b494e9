#![allow(dead_code)]

use pflat_core::model::logistic::SparseFeatures;
use pflat_core::model::{LogisticBag, ScoringModel};
use pflat_core::prompt::{Demo, InputSet, LabeledSet, PromptCandidate, Verbalizer};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const WORDS: [&str; 16] = [
    "good", "bad", "film", "plot", "great", "awful", "slow", "fun", "the", "a", "story", "cast",
    "dull", "bright", "long", "short",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn verb(labels: usize) -> Verbalizer {
    let all = [
        ("a", "alpha"),
        ("b", "bravo"),
        ("c", "charlie"),
        ("d", "delta"),
        ("e", "echo"),
    ];
    Verbalizer::from_pairs(all[..labels].iter().copied()).unwrap()
}

pub fn sentence(r: &mut impl Rng, len: usize) -> String {
    (0..len)
        .map(|_| *WORDS.choose(r).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn texts(n: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let len = r.random_range(3..8);
            sentence(&mut r, len)
        })
        .collect()
}

pub fn inputs(n: usize, seed: u64) -> InputSet {
    InputSet::new(texts(n, seed))
}

pub fn labeled(n: usize, labels: usize, seed: u64) -> LabeledSet {
    let v = verb(labels);
    let mut r = rng(seed ^ 0x5eed);
    LabeledSet::from_pairs(
        texts(n, seed)
            .into_iter()
            .map(|t| (t, v.labels()[r.random_range(0..labels)].clone())),
    )
}

/// Logistic bag with N(0, scale²) weights and biases.
pub fn random_logistic(labels: usize, vocab: usize, scale: f64, seed: u64) -> LogisticBag {
    let mut r = rng(seed);
    let mut draw = |n: usize| {
        (0..n)
            .map(|_| scale * r.sample::<f64, _>(StandardNormal))
            .collect::<Vec<f64>>()
    };
    let w = draw(labels * vocab);
    let b = draw(labels);
    LogisticBag::from_weights(verb(labels), vocab, &w, &b).unwrap()
}

pub fn prompt(id: &str, demos: usize, labels: usize, seed: u64) -> PromptCandidate {
    let v = verb(labels);
    let mut r = rng(seed);
    let demos = (0..demos)
        .map(|i| Demo {
            text: sentence(&mut r, 4),
            label: v.labels()[i % labels].clone(),
        })
        .collect();
    PromptCandidate::new(id, "Label the sentiment of each short review", demos)
}

/// Softmax probabilities recomputed from the raw weight layout.
pub fn direct_probs(m: &LogisticBag, x: &SparseFeatures) -> Vec<f64> {
    let v = m.vocab_size();
    let (w, b) = (m.weights(), m.bias());
    let z: Vec<f64> = (0..m.labels())
        .map(|k| {
            b[k] + x
                .idx
                .iter()
                .zip(&x.val)
                .map(|(&j, &c)| w[k * v + j as usize] * c)
                .sum::<f64>()
        })
        .collect();
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|a| (a - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|a| a / s).collect()
}

/// `(1/|X|) Σ ½σ² tr(F_x)` with the softmax-regression Fisher trace
/// `tr F_x = (1 - Σ p²)(|φ|² + 1)`.
pub fn second_order_pflat(m: &LogisticBag, p: &PromptCandidate, xs: &InputSet, sigma2: f64) -> f64 {
    let mut acc = 0.0;
    for t in &xs.texts {
        let x = m.features(&p.render(m.verbalizer(), t).unwrap());
        let probs = direct_probs(m, &x);
        let tr = (1.0 - probs.iter().map(|q| q * q).sum::<f64>()) * (x.sq_norm() + 1.0);
        acc += 0.5 * sigma2 * tr;
    }
    acc / xs.len() as f64
}

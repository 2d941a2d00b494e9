//! Planted binary sentiment task with a controlled prompt pool.
//!
//! Sentences mix positive, negative and neutral words; a logistic bag model is
//! fit on raw training sentences. Every prompt carries five demonstrations
//! drawn like data sentences, and prompt `i` has `i mod 6` positive ones.
//! Because the logistic model simply adds the demonstrations' evidence to
//! every input, the positive-demo count sets a per-prompt label bias and
//! with it the prompt's test accuracy.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evaluation::rate;
use crate::metrics::{loss_from_probs, pflat, prompt_probs, Direction, DivergenceKind, LossKind};
use crate::model::{fit_logistic, LogisticBag, LogisticBagConfig, ScoringModel};
use crate::perturb::PerturbationConfig;
use crate::prompt::{Demo, LabeledSet, PromptCandidate, PromptPool, Verbalizer};
use crate::seed::{derive_seed, rng_for};
use crate::selection::{
    accuracy_from_probs, rank_prompts, tune_alpha_from_table, AlphaGrid, PromptTable, TuneResult,
};

pub const POSITIVE: [&str; 12] = [
    "wonderful",
    "superb",
    "delightful",
    "brilliant",
    "charming",
    "moving",
    "gripping",
    "heartfelt",
    "stunning",
    "clever",
    "joyful",
    "masterful",
];

pub const NEGATIVE: [&str; 12] = [
    "dull",
    "awful",
    "tedious",
    "bland",
    "clumsy",
    "boring",
    "messy",
    "lifeless",
    "shallow",
    "forgettable",
    "annoying",
    "weak",
];

pub const NEUTRAL: [&str; 40] = [
    "the",
    "movie",
    "film",
    "plot",
    "actor",
    "scene",
    "story",
    "director",
    "a",
    "was",
    "and",
    "with",
    "of",
    "it",
    "cast",
    "script",
    "ending",
    "music",
    "camera",
    "character",
    "this",
    "that",
    "there",
    "screen",
    "hour",
    "minutes",
    "role",
    "dialogue",
    "sequel",
    "studio",
    "drama",
    "comedy",
    "audience",
    "night",
    "time",
    "set",
    "pace",
    "tone",
    "style",
    "score",
];

pub const INSTRUCTIONS: [&str; 20] = [
    "Classify the sentiment of the following review.",
    "Decide whether the review below is positive or negative.",
    "Read the review and label its overall opinion.",
    "Tell me if this critic liked or disliked it.",
    "Is the attitude of this review good or bad?",
    "Label each review as favorable or unfavorable.",
    "Judge the tone of the review that follows.",
    "Does the writer recommend it or not?",
    "Determine the polarity of the text below.",
    "Say whether the opinion expressed is upbeat or harsh.",
    "Categorize the feeling conveyed by this review.",
    "Rate the sentiment: pleased or displeased?",
    "What is the emotional verdict of this review?",
    "Identify whether the reviewer enjoyed the work.",
    "Mark the review according to its stance.",
    "Was the reviewer happy or unhappy with it?",
    "Assign a sentiment label to the passage.",
    "Predict how the reviewer felt about it.",
    "Answer with the sentiment of each review.",
    "Given a short review, output its sentiment.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub seed: u64,
    pub train_size: usize,
    pub dev_per_class: usize,
    pub test_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance that a word position carries a sentiment word.
    pub signal_prob: f64,
    /// Chance that a sentiment word belongs to the opposite class.
    pub cross_prob: f64,
    pub label_noise: f64,
    pub n_prompts: usize,
    pub demos_per_prompt: usize,
    pub fit: LogisticBagConfig,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_size: 400,
            dev_per_class: 8,
            test_size: 200,
            min_len: 6,
            max_len: 10,
            signal_prob: 0.3,
            cross_prob: 0.2,
            label_noise: 0.1,
            n_prompts: 20,
            demos_per_prompt: 5,
            fit: LogisticBagConfig {
                vocab_size: 512,
                l2: 1e-3,
                train_epochs: 300,
                ..LogisticBagConfig::default()
            },
        }
    }
}

pub struct PlantedTask {
    pub verbalizer: Verbalizer,
    pub model: LogisticBag,
    pub train: LabeledSet,
    pub dev: LabeledSet,
    pub test: LabeledSet,
    pub pool: PromptPool,
}

pub fn verbalizer() -> Verbalizer {
    Verbalizer::from_pairs([("negative", "terrible"), ("positive", "great")])
        .expect("static verbalizer")
}

fn sentence<R: Rng>(rng: &mut R, positive: bool, cfg: &PlantedConfig) -> String {
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        let w = if rng.random_bool(cfg.signal_prob) {
            let same = !rng.random_bool(cfg.cross_prob);
            let list: &[&str] = if same == positive {
                &POSITIVE
            } else {
                &NEGATIVE
            };
            *list.choose(rng).expect("non-empty")
        } else {
            *NEUTRAL.choose(rng).expect("non-empty")
        };
        words.push(w);
    }
    words.join(" ")
}

fn label(positive: bool) -> &'static str {
    if positive {
        "positive"
    } else {
        "negative"
    }
}

fn noisy_set(purpose: &str, n: usize, cfg: &PlantedConfig) -> LabeledSet {
    let mut rng = rng_for(cfg.seed, purpose, 0);
    let mut out = LabeledSet::new();
    for i in 0..n {
        let pos = i % 2 == 0;
        let text = sentence(&mut rng, pos, cfg);
        let flip = rng.random_bool(cfg.label_noise);
        out.push(text, label(pos != flip));
    }
    out
}

pub fn build(cfg: &PlantedConfig) -> Result<PlantedTask> {
    let verbalizer = verbalizer();
    let train = noisy_set("planted-train", cfg.train_size, cfg);
    let dev = noisy_set("planted-dev", 2 * cfg.dev_per_class, cfg);
    let test = noisy_set("planted-test", cfg.test_size, cfg);
    let fit_cfg = LogisticBagConfig {
        seed: derive_seed(cfg.seed, "planted-fit", 0),
        ..cfg.fit.clone()
    };
    let model = fit_logistic(&train, &verbalizer, &fit_cfg)?;

    let mut prompts = Vec::with_capacity(cfg.n_prompts);
    for i in 0..cfg.n_prompts {
        let mut rng = rng_for(cfg.seed, "planted-demos", i as u64);
        let k = i % (cfg.demos_per_prompt + 1);
        let mut flags: Vec<bool> = (0..cfg.demos_per_prompt).map(|j| j < k).collect();
        flags.shuffle(&mut rng);
        let demos = flags
            .iter()
            .map(|&pos| Demo {
                text: sentence(&mut rng, pos, cfg),
                label: label(pos).to_string(),
            })
            .collect();
        prompts.push(PromptCandidate::new(
            format!("p{i:02}"),
            INSTRUCTIONS[i % INSTRUCTIONS.len()],
            demos,
        ));
    }
    Ok(PlantedTask {
        verbalizer,
        model,
        train,
        dev,
        test,
        pool: PromptPool::new(prompts)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub perturbation: PerturbationConfig,
    pub grid: AlphaGrid,
    pub divergence: DivergenceKind,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            perturbation: PerturbationConfig::default(),
            grid: AlphaGrid::default(),
            divergence: DivergenceKind::Kl,
        }
    }
}

/// Per-prompt values of the selection study, in pool order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub ids: Vec<String>,
    pub test_accuracy: Vec<f64>,
    pub dev_accuracy: Vec<f64>,
    /// Cross-entropy on the labeled dev set.
    pub dev_loss: Vec<f64>,
    /// pFlat on dev inputs, used to tune α.
    pub dev_pflat: Vec<f64>,
    /// pFlat on test inputs, used for the final selection.
    pub test_pflat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub table: StudyTable,
    pub tuning: TuneResult,
    pub selected_loss: String,
    pub selected_pflat: String,
    pub selected_combined: String,
    pub rate_loss: f64,
    pub rate_pflat: f64,
    pub rate_combined: f64,
}

/// Compare selection by dev loss, by pFlat alone and by dev loss plus α·pFlat
/// with α tuned on the dev set.
pub fn selection_study(task: &PlantedTask, s: &StudySettings) -> Result<SelectionOutcome> {
    let model: &dyn ScoringModel = &task.model;
    let verb = model.verbalizer();
    let dev_gold = task.dev.label_indices(verb)?;
    let test_gold = task.test.label_indices(verb)?;
    let dev_in = task.dev.inputs();
    let test_in = task.test.inputs();
    let rows: Vec<[f64; 5]> = task
        .pool
        .prompts
        .par_iter()
        .map(|p| {
            let dev_probs = prompt_probs(model, p, &task.dev.texts)?;
            let test_probs = prompt_probs(model, p, &task.test.texts)?;
            Ok([
                accuracy_from_probs(&test_probs, &test_gold)?,
                accuracy_from_probs(&dev_probs, &dev_gold)?,
                loss_from_probs(&dev_probs, &dev_gold, LossKind::CrossEntropy)?,
                pflat(model, p, &dev_in, &s.perturbation, s.divergence)?,
                pflat(model, p, &test_in, &s.perturbation, s.divergence)?,
            ])
        })
        .collect::<Result<_>>()?;
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let table = StudyTable {
        ids: task.pool.iter().map(|p| p.id.clone()).collect(),
        test_accuracy: col(0),
        dev_accuracy: col(1),
        dev_loss: col(2),
        dev_pflat: col(3),
        test_pflat: col(4),
    };
    let tuning = tune_alpha_from_table(
        &PromptTable {
            ids: table.ids.clone(),
            base: table.dev_loss.clone(),
            pflat: table.dev_pflat.clone(),
            accuracy: table.dev_accuracy.clone(),
        },
        Direction::LowerBetter,
        &s.grid,
    )?;
    let pick = |scores: Vec<f64>| -> Result<String> {
        let pairs: Vec<(String, f64)> = table.ids.iter().cloned().zip(scores).collect();
        Ok(rank_prompts(&pairs, Direction::LowerBetter)?.swap_remove(0))
    };
    let selected_loss = pick(table.dev_loss.clone())?;
    let selected_pflat = pick(table.test_pflat.clone())?;
    let selected_combined = pick(
        table
            .dev_loss
            .iter()
            .zip(&table.test_pflat)
            .map(|(l, f)| l + tuning.alpha * f)
            .collect(),
    )?;
    let best = table
        .test_accuracy
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let acc_of = |id: &str| {
        table.test_accuracy[table
            .ids
            .iter()
            .position(|i| i == id)
            .expect("id from table")]
    };
    Ok(SelectionOutcome {
        rate_loss: rate(acc_of(&selected_loss), best)?,
        rate_pflat: rate(acc_of(&selected_pflat), best)?,
        rate_combined: rate(acc_of(&selected_combined), best)?,
        table,
        tuning,
        selected_loss,
        selected_pflat,
        selected_combined,
    })
}

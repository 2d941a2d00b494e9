mod common;

use common::*;
use pflat_core::metrics::{pflat, prompt_probs, Direction, DivergenceKind};
use pflat_core::model::ScoringModel;
use pflat_core::planted::{build, selection_study, PlantedConfig, StudySettings};
use pflat_core::prompt::{LabeledSet, PromptPool};
use pflat_core::selection::*;
use pflat_core::Error;

fn pool(n: usize) -> PromptPool {
    PromptPool::new(
        (0..n)
            .map(|i| prompt(&format!("s{i}"), 4, 2, 70 + i as u64))
            .collect(),
    )
    .unwrap()
}

#[test]
fn select_best_requires_every_prompt_scored() {
    let p = pool(3);
    let scores = vec![("s0".to_string(), 0.4), ("s1".to_string(), 0.2)];
    assert!(matches!(
        select_best(&p, &scores, Direction::LowerBetter),
        Err(Error::InvalidConfig(_))
    ));
    let scores = vec![
        ("s0".to_string(), 0.4),
        ("s1".to_string(), 0.2),
        ("s2".to_string(), 0.3),
    ];
    assert_eq!(
        select_best(&p, &scores, Direction::LowerBetter).unwrap(),
        "s1"
    );
    assert_eq!(
        select_best(&p, &scores, Direction::HigherBetter).unwrap(),
        "s0"
    );
}

#[test]
fn tune_alpha_needs_every_label_on_dev() {
    let m = random_logistic(2, 32, 0.4, 1);
    let dev = LabeledSet::from_pairs([("good film", "a"), ("bad plot", "a")]);
    let r = tune_alpha(
        &m,
        &pool(3),
        &dev,
        BaseMetric::Loss,
        &AlphaGrid::default(),
        &TuneConfig::default(),
    );
    assert!(matches!(r, Err(Error::MissingLabel(l)) if l == "b"));
}

#[test]
fn tune_alpha_agrees_with_a_hand_built_table() {
    let m = random_logistic(2, 32, 0.6, 2);
    let p = pool(5);
    let dev = labeled(16, 2, 3);
    let grid = AlphaGrid::new(vec![0.0, 1.0, 100.0]).unwrap();
    let cfg = TuneConfig::default();
    let got = tune_alpha(&m, &p, &dev, BaseMetric::Loss, &grid, &cfg).unwrap();

    let gold = dev.label_indices(m.verbalizer()).unwrap();
    let mut table = PromptTable {
        ids: vec![],
        base: vec![],
        pflat: vec![],
        accuracy: vec![],
    };
    for q in p.iter() {
        let probs = prompt_probs(&m, q, &dev.texts).unwrap();
        let n = probs.len() as f64;
        table.ids.push(q.id.clone());
        table.base.push(
            -probs
                .iter()
                .zip(&gold)
                .map(|(r, &y)| r[y].ln())
                .sum::<f64>()
                / n,
        );
        table
            .pflat
            .push(pflat(&m, q, &dev.inputs(), &cfg.perturbation, DivergenceKind::Kl).unwrap());
        let correct = probs
            .iter()
            .zip(&gold)
            .filter(|(r, &y)| r[y] >= r[1 - y])
            .count();
        table.accuracy.push(correct as f64 / n);
    }
    let want = tune_alpha_from_table(&table, Direction::LowerBetter, &grid).unwrap();
    assert_eq!(got.alpha, want.alpha);
    assert_eq!(got.dev_accuracy, want.dev_accuracy);
    for (a, b) in got.per_alpha.iter().zip(&want.per_alpha) {
        assert_eq!(a.selected, b.selected);
    }
}

#[test]
fn tuned_alpha_is_never_worse_on_dev_than_alpha_zero() {
    let m = random_logistic(2, 32, 0.6, 4);
    let dev = labeled(16, 2, 5);
    for base in [BaseMetric::Loss, BaseMetric::Mi, BaseMetric::Sen] {
        let r = tune_alpha(
            &m,
            &pool(5),
            &dev,
            base,
            &AlphaGrid::default(),
            &TuneConfig::default(),
        )
        .unwrap();
        let zero = r.per_alpha.iter().find(|o| o.alpha == 0.0).unwrap();
        assert!(r.dev_accuracy >= zero.dev_accuracy);
    }
}

#[test]
fn planted_selection_study_runs_end_to_end() {
    let task = build(&PlantedConfig {
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let out = selection_study(&task, &StudySettings::default()).unwrap();
    assert_eq!(out.table.ids.len(), 20);
    for r in [out.rate_loss, out.rate_pflat, out.rate_combined] {
        assert!(r > 0.0 && r <= 1.0);
    }
    let again = selection_study(&task, &StudySettings::default()).unwrap();
    assert_eq!(out, again);
}

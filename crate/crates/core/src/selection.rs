//! Ranking prompts, picking the best one, and tuning the flatness weight α.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    combined_score, mutual_information, pflat, prompt_probs, sensitivity, Direction,
    DivergenceKind, LossKind,
};
use crate::model::{argmax, ScoringModel};
use crate::perturb::{build_sensitivity_set, PerturbationConfig, SensitivitySetConfig};
use crate::prompt::{LabeledSet, PromptPool};

/// Order ids best first; ties go to the smaller id.
pub fn rank_prompts(scores: &[(String, f64)], direction: Direction) -> Result<Vec<String>> {
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some((id, _)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::NonFiniteScore(id.clone()));
    }
    let mut v: Vec<&(String, f64)> = scores.iter().collect();
    v.sort_by(|(ia, a), (ib, b)| {
        let o = match direction {
            Direction::LowerBetter => a.partial_cmp(b),
            Direction::HigherBetter => b.partial_cmp(a),
        };
        o.unwrap_or(Ordering::Equal).then_with(|| ia.cmp(ib))
    });
    Ok(v.into_iter().map(|(id, _)| id.clone()).collect())
}

/// Best-ranked prompt id. Every pool member must have a score.
pub fn select_best(
    pool: &PromptPool,
    scores: &[(String, f64)],
    direction: Direction,
) -> Result<String> {
    for p in pool.iter() {
        if !scores.iter().any(|(id, _)| *id == p.id) {
            return Err(Error::InvalidConfig(format!(
                "no score for prompt {:?}",
                p.id
            )));
        }
    }
    Ok(rank_prompts(scores, direction)?.swap_remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AlphaGrid {
    values: Vec<f64>,
}

impl AlphaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidGrid(
                "alphas must be finite and non-negative".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid(
                "alphas must be strictly ascending".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for AlphaGrid {
    fn default() -> Self {
        Self {
            values: vec![0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
        }
    }
}

impl TryFrom<Vec<f64>> for AlphaGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AlphaGrid> for Vec<f64> {
    fn from(g: AlphaGrid) -> Self {
        g.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    Loss,
    Mi,
    Sen,
}

impl BaseMetric {
    pub fn direction(self) -> Direction {
        match self {
            BaseMetric::Mi => Direction::HigherBetter,
            BaseMetric::Loss | BaseMetric::Sen => Direction::LowerBetter,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseMetric::Loss => "loss",
            BaseMetric::Mi => "mi",
            BaseMetric::Sen => "sen",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaOutcome {
    pub alpha: f64,
    pub selected: String,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub alpha: f64,
    pub dev_accuracy: f64,
    pub per_alpha: Vec<AlphaOutcome>,
}

/// Per-prompt quantities α tuning needs, in pool order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTable {
    pub ids: Vec<String>,
    pub base: Vec<f64>,
    pub pflat: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Choose α from precomputed scores: for each α, select by combined score and
/// read off the selected prompt's accuracy. Highest accuracy wins; ties go to
/// the smallest α.
pub fn tune_alpha_from_table(
    table: &PromptTable,
    direction: Direction,
    grid: &AlphaGrid,
) -> Result<TuneResult> {
    let mut per_alpha = Vec::with_capacity(grid.values().len());
    for &alpha in grid.values() {
        let scores: Vec<(String, f64)> = table
            .ids
            .iter()
            .zip(table.base.iter().zip(&table.pflat))
            .map(|(id, (&b, &f))| (id.clone(), combined_score(b, direction, f, alpha)))
            .collect();
        let selected = rank_prompts(&scores, Direction::LowerBetter)?.swap_remove(0);
        let idx = table
            .ids
            .iter()
            .position(|i| *i == selected)
            .expect("selected id comes from table");
        per_alpha.push(AlphaOutcome {
            alpha,
            selected,
            dev_accuracy: table.accuracy[idx],
        });
    }
    let mut best = 0;
    for (i, o) in per_alpha.iter().enumerate() {
        if o.dev_accuracy > per_alpha[best].dev_accuracy {
            best = i;
        }
    }
    Ok(TuneResult {
        alpha: per_alpha[best].alpha,
        dev_accuracy: per_alpha[best].dev_accuracy,
        per_alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub perturbation: PerturbationConfig,
    pub sensitivity: SensitivitySetConfig,
    pub divergence: DivergenceKind,
    pub loss_kind: LossKind,
}

/// Accuracy of the argmax prediction against gold labels.
pub fn accuracy_from_probs(rows: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(rows
        .iter()
        .zip(gold)
        .filter(|(r, &y)| argmax(r) == y)
        .count() as f64
        / rows.len() as f64)
}

/// Tune α on a small labeled dev set. Every metric, pFlat included, is
/// computed on dev inputs; the tuning objective is dev accuracy of the
/// selected prompt.
pub fn tune_alpha(
    model: &dyn ScoringModel,
    pool: &PromptPool,
    dev: &LabeledSet,
    base_metric: BaseMetric,
    grid: &AlphaGrid,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    let verb = model.verbalizer();
    for label in verb.labels() {
        if dev.count_label(label) == 0 {
            return Err(Error::MissingLabel(label.clone()));
        }
    }
    let gold = dev.label_indices(verb)?;
    let inputs = dev.inputs();
    let need_pflat = grid.values().iter().any(|&a| a > 0.0);
    let rows: Vec<(f64, f64, f64)> = pool
        .prompts
        .par_iter()
        .map(|p| {
            let probs = prompt_probs(model, p, &dev.texts)?;
            let acc = accuracy_from_probs(&probs, &gold)?;
            let base = match base_metric {
                BaseMetric::Loss => crate::metrics::loss_from_probs(&probs, &gold, cfg.loss_kind)?,
                BaseMetric::Mi => mutual_information(model, p, &inputs)?,
                BaseMetric::Sen => {
                    let set = build_sensitivity_set(p, verb, &cfg.sensitivity)?;
                    sensitivity(model, p, &inputs, &set)?
                }
            };
            let f = if need_pflat {
                pflat(model, p, &inputs, &cfg.perturbation, cfg.divergence)?
            } else {
                0.0
            };
            Ok((base, f, acc))
        })
        .collect::<Result<_>>()?;
    let table = PromptTable {
        ids: pool.iter().map(|p| p.id.clone()).collect(),
        base: rows.iter().map(|r| r.0).collect(),
        pflat: rows.iter().map(|r| r.1).collect(),
        accuracy: rows.iter().map(|r| r.2).collect(),
    };
    tune_alpha_from_table(&table, base_metric.direction(), grid)
}

//! Evaluation protocol: per-prompt accuracy, correlation of each metric with
//! accuracy, NDCG@k and Rate of the metric's top choice, and N/σ² sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    combined_score, loss_from_probs, mi_from_probs, pflat_samples, prompt_probs, sensitivity,
    true_flatness, Direction, DivergenceKind, LossKind,
};
use crate::model::ScoringModel;
use crate::perturb::{build_sensitivity_set, PerturbationConfig, SensitivitySetConfig};
use crate::prompt::{LabeledSet, PromptCandidate, PromptPool};
use crate::seed::derive_seed;
use crate::selection::{accuracy_from_probs, rank_prompts};

pub fn accuracy(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    test: &LabeledSet,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let gold = test.label_indices(model.verbalizer())?;
    accuracy_from_probs(&prompt_probs(model, prompt, &test.texts)?, &gold)
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "need at least 3 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value".into()));
    }
    for (name, v) in [("x", xs), ("y", ys)] {
        if v.iter().all(|&a| a == v[0]) {
            return Err(Error::DegenerateInput(format!("{name} is constant")));
        }
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Linear-gain NDCG: `DCG@k = Σ rel_i / log2(i + 1)`, normalized by the DCG of
/// `ideal`. Zero ideal gain gives 0.
pub fn ndcg_at_k(ranked: &[f64], ideal: &[f64], k: usize) -> Result<f64> {
    if ranked.len() != ideal.len() {
        return Err(Error::LengthMismatch(ranked.len(), ideal.len()));
    }
    if k == 0 || k > ranked.len() {
        return Err(Error::BadK {
            k,
            len: ranked.len(),
        });
    }
    if let Some(&r) = ranked.iter().chain(ideal).find(|&&r| r < 0.0 || r.is_nan()) {
        return Err(Error::NegativeRelevance(r));
    }
    let dcg = |rel: &[f64]| {
        rel[..k]
            .iter()
            .enumerate()
            .map(|(i, r)| r / ((i + 2) as f64).log2())
            .sum::<f64>()
    };
    let idcg = dcg(ideal);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok((dcg(ranked) / idcg).min(1.0))
}

/// NDCG of `ranked` against its own descending sort.
pub fn ndcg_of_ranking(ranked: &[f64], k: usize) -> Result<f64> {
    let mut ideal = ranked.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    ndcg_at_k(ranked, &ideal, k)
}

pub fn rate(selected: f64, best: f64) -> Result<f64> {
    if best.is_nan() || best <= 0.0 {
        return Err(Error::ZeroBest);
    }
    if selected < 0.0 || selected > best {
        return Err(Error::SelectedExceedsBest { selected, best });
    }
    Ok(selected / best)
}

/// Metrics a study can report. Combined ones are `base + α·pFlat` after
/// orienting the base to lower-is-better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "loss")]
    Loss,
    #[serde(rename = "mi")]
    Mi,
    #[serde(rename = "sen")]
    Sen,
    #[serde(rename = "pflat")]
    Pflat,
    #[serde(rename = "true_flatness")]
    TrueFlatness,
    #[serde(rename = "loss+pflat")]
    LossPflat,
    #[serde(rename = "mi+pflat")]
    MiPflat,
    #[serde(rename = "sen+pflat")]
    SenPflat,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        MetricName::Loss,
        MetricName::Mi,
        MetricName::Sen,
        MetricName::Pflat,
        MetricName::TrueFlatness,
        MetricName::LossPflat,
        MetricName::MiPflat,
        MetricName::SenPflat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Loss => "loss",
            MetricName::Mi => "mi",
            MetricName::Sen => "sen",
            MetricName::Pflat => "pflat",
            MetricName::TrueFlatness => "true_flatness",
            MetricName::LossPflat => "loss+pflat",
            MetricName::MiPflat => "mi+pflat",
            MetricName::SenPflat => "sen+pflat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric {s:?}")))
    }

    pub fn direction(self) -> Direction {
        match self {
            MetricName::Mi => Direction::HigherBetter,
            _ => Direction::LowerBetter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub metrics: Vec<MetricName>,
    pub perturbation: PerturbationConfig,
    pub sensitivity: SensitivitySetConfig,
    pub loss_kind: LossKind,
    pub divergence: DivergenceKind,
    /// Weight of pFlat in the combined metrics.
    pub alpha: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            metrics: MetricName::ALL.to_vec(),
            perturbation: PerturbationConfig::default(),
            sensitivity: SensitivitySetConfig::default(),
            loss_kind: LossKind::CrossEntropy,
            divergence: DivergenceKind::Kl,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRow {
    pub prompt_id: String,
    pub accuracy: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub selected: String,
    pub ndcg1: f64,
    pub ndcg3: f64,
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_prompt: Vec<PromptRow>,
    pub correlations: BTreeMap<String, Correlation>,
    pub ranking: BTreeMap<String, RankingEntry>,
    pub config: StudyConfig,
}

/// Raw per-prompt values; `None` where the metric was not requested.
#[derive(Debug, Clone, Copy, Default)]
struct Raw {
    loss: Option<f64>,
    mi: Option<f64>,
    sen: Option<f64>,
    pflat: Option<f64>,
    tf: Option<f64>,
}

/// Goodness-oriented correlations and top-choice ranking quality of one
/// metric, given per-prompt values and accuracies in pool order.
pub fn score_metric(
    ids: &[String],
    values: &[f64],
    acc: &[f64],
    direction: Direction,
) -> Result<(Correlation, RankingEntry)> {
    let good: Vec<f64> = match direction {
        Direction::LowerBetter => values.iter().map(|v| -v).collect(),
        Direction::HigherBetter => values.to_vec(),
    };
    let corr = match (pearson(&good, acc), spearman(&good, acc)) {
        (Ok(p), Ok(s)) => Correlation {
            pearson: Some(p),
            spearman: Some(s),
            reason: None,
        },
        (Err(e), _) | (_, Err(e)) => {
            if !matches!(e, Error::DegenerateInput(_)) {
                return Err(e);
            }
            Correlation {
                pearson: None,
                spearman: None,
                reason: Some(e.to_string()),
            }
        }
    };
    let scores: Vec<(String, f64)> = ids.iter().cloned().zip(values.iter().copied()).collect();
    let order = rank_prompts(&scores, direction)?;
    let pos = |id: &String| {
        ids.iter()
            .position(|i| i == id)
            .expect("ranked id from ids")
    };
    let ranked: Vec<f64> = order.iter().map(|id| acc[pos(id)]).collect();
    let k3 = ranked.len().min(3);
    let best = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (rate_v, reason) = match rate(ranked[0], best) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let entry = RankingEntry {
        selected: order[0].clone(),
        ndcg1: ndcg_of_ranking(&ranked, 1)?,
        ndcg3: ndcg_of_ranking(&ranked, k3)?,
        rate: rate_v,
        reason,
    };
    Ok((corr, entry))
}

/// Score every prompt of the pool on `test` and relate each metric to test
/// accuracy. Label-free metrics (MI, Sen, pFlat) see only test inputs; loss
/// and true flatness need labels and use `labeled_for_loss` if given, else
/// the test labels.
pub fn correlation_study(
    model: &dyn ScoringModel,
    pool: &PromptPool,
    test: &LabeledSet,
    cfg: &StudyConfig,
    labeled_for_loss: Option<&LabeledSet>,
) -> Result<EvaluationReport> {
    if pool.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "correlation study needs at least 3 prompts, got {}",
            pool.len()
        )));
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.perturbation.validate()?;
    let verb = model.verbalizer();
    let gold = test.label_indices(verb)?;
    let loss_set = labeled_for_loss.unwrap_or(test);
    let loss_gold = loss_set.label_indices(verb)?;
    let inputs = test.inputs();
    let wants = |m: &[MetricName]| m.iter().any(|x| cfg.metrics.contains(x));
    use MetricName::*;
    let need_loss = wants(&[Loss, LossPflat]);
    let need_mi = wants(&[Mi, MiPflat]);
    let need_sen = wants(&[Sen, SenPflat]);
    let need_pflat = wants(&[Pflat, LossPflat, MiPflat, SenPflat]);
    let need_tf = wants(&[TrueFlatness]);

    let rows: Vec<(f64, Raw)> = pool
        .prompts
        .par_iter()
        .map(|p| {
            let probs = prompt_probs(model, p, &test.texts)?;
            let acc = accuracy_from_probs(&probs, &gold)?;
            let mut r = Raw::default();
            if need_loss {
                let lp = if labeled_for_loss.is_some() {
                    prompt_probs(model, p, &loss_set.texts)?
                } else {
                    probs.clone()
                };
                r.loss = Some(loss_from_probs(&lp, &loss_gold, cfg.loss_kind)?);
            }
            if need_mi {
                r.mi = Some(mi_from_probs(&probs)?);
            }
            if need_sen {
                let set = build_sensitivity_set(p, verb, &cfg.sensitivity)?;
                r.sen = Some(sensitivity(model, p, &inputs, &set)?);
            }
            if need_pflat {
                let s = pflat_samples(model, p, &inputs, &cfg.perturbation, cfg.divergence)?;
                r.pflat = Some(s.iter().sum::<f64>() / s.len() as f64);
            }
            if need_tf {
                r.tf = Some(true_flatness(model, p, loss_set)?);
            }
            Ok((acc, r))
        })
        .collect::<Result<_>>()?;

    let ids: Vec<String> = pool.iter().map(|p| p.id.clone()).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let value = |m: MetricName, r: &Raw| -> f64 {
        let pf = || r.pflat.expect("pflat computed");
        match m {
            Loss => r.loss.expect("loss computed"),
            Mi => r.mi.expect("mi computed"),
            Sen => r.sen.expect("sen computed"),
            Pflat => pf(),
            TrueFlatness => r.tf.expect("true flatness computed"),
            LossPflat => combined_score(
                r.loss.expect("loss computed"),
                Direction::LowerBetter,
                pf(),
                cfg.alpha,
            ),
            MiPflat => combined_score(
                r.mi.expect("mi computed"),
                Direction::HigherBetter,
                pf(),
                cfg.alpha,
            ),
            SenPflat => combined_score(
                r.sen.expect("sen computed"),
                Direction::LowerBetter,
                pf(),
                cfg.alpha,
            ),
        }
    };

    let mut metrics: Vec<MetricName> = cfg.metrics.clone();
    metrics.sort();
    metrics.dedup();
    let mut per_prompt: Vec<PromptRow> = ids
        .iter()
        .zip(&rows)
        .map(|(id, (a, r))| PromptRow {
            prompt_id: id.clone(),
            accuracy: *a,
            metrics: metrics
                .iter()
                .map(|&m| (m.as_str().to_string(), value(m, r)))
                .collect(),
        })
        .collect();
    per_prompt.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));

    let mut correlations = BTreeMap::new();
    let mut ranking = BTreeMap::new();
    for &m in &metrics {
        let vals: Vec<f64> = rows.iter().map(|(_, r)| value(m, r)).collect();
        let (c, e) = score_metric(&ids, &vals, &acc, m.direction())?;
        correlations.insert(m.as_str().to_string(), c);
        ranking.insert(m.as_str().to_string(), e);
    }
    Ok(EvaluationReport {
        per_prompt,
        correlations,
        ranking,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Sigma2,
    NSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub repeats: usize,
    /// Metric whose Rate and Pearson are tabulated.
    pub metric: MetricName,
    pub fixed: StudyConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidConfig(
                "sweep needs at least one value".into(),
            ));
        }
        if self
            .values
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::InvalidConfig(
                "sweep values must be strictly ascending".into(),
            ));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if self.variable == SweepVariable::NSamples
            && self.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0)
        {
            return Err(Error::InvalidConfig(
                "n_samples values must be positive integers".into(),
            ));
        }
        Ok(())
    }

    /// Study configuration of one cell. The seeds depend on the repeat only,
    /// so cells with the same repeat share their random draws.
    pub fn cell_config(&self, value: f64, repeat: usize) -> StudyConfig {
        let mut cfg = self.fixed.clone();
        let master = self.fixed.perturbation.master_seed;
        cfg.perturbation.master_seed = derive_seed(master, "sweep-perturbation", repeat as u64);
        cfg.sensitivity.seed = derive_seed(master, "sweep-sensitivity", repeat as u64);
        match self.variable {
            SweepVariable::Sigma2 => cfg.perturbation.sigma2 = value,
            SweepVariable::NSamples => cfg.perturbation.n_samples = value as usize,
        }
        if !cfg.metrics.contains(&self.metric) {
            cfg.metrics.push(self.metric);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub repeat: usize,
    pub rate: Option<f64>,
    pub pearson: Option<f64>,
    /// pFlat of every prompt, in report order, if computed.
    pub pflat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub value: f64,
    pub mean_rate: Option<f64>,
    pub mean_pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummary>,
}

fn mean_some(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    (!xs.is_empty()).then(|| mean(&xs))
}

pub fn sweep(
    model: &dyn ScoringModel,
    pool: &PromptPool,
    test: &LabeledSet,
    spec: &SweepSpec,
    labeled_for_loss: Option<&LabeledSet>,
) -> Result<SweepReport> {
    spec.validate()?;
    let grid: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.repeats).map(move |r| (v, r)))
        .collect();
    let key = spec.metric.as_str();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(value, repeat)| {
            let rep = correlation_study(
                model,
                pool,
                test,
                &spec.cell_config(value, repeat),
                labeled_for_loss,
            )?;
            Ok(SweepCell {
                value,
                repeat,
                rate: rep.ranking[key].rate,
                pearson: rep.correlations[key].pearson,
                pflat: rep
                    .per_prompt
                    .iter()
                    .filter_map(|r| r.metrics.get("pflat").copied())
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    let summary = spec
        .values
        .iter()
        .map(|&v| {
            let cs = cells.iter().filter(|c| c.value == v);
            SweepSummary {
                value: v,
                mean_rate: mean_some(cs.clone().map(|c| c.rate)),
                mean_pearson: mean_some(cs.map(|c| c.pearson)),
            }
        })
        .collect();
    Ok(SweepReport {
        spec: spec.clone(),
        cells,
        summary,
    })
}

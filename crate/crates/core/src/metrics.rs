//! Prompt-level metrics: loss, mutual information, sensitivity, pFlat and
//! true flatness, plus the combined robust score.
//!
//! All entropies and divergences are in nats. Probabilities are floored at
//! [`PROB_FLOOR`] before any logarithm. Parallel work is collected in input
//! order and reduced sequentially, so results do not depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, encode_all, Encoded, ParameterVector, ScoringModel};
use crate::perturb::{sample_gaussian, PerturbationConfig};
use crate::prompt::{InputSet, LabeledSet, PromptCandidate};

pub const PROB_FLOOR: f64 = 1e-12;
/// Central-difference step for finite-difference gradients.
pub const FD_STEP: f64 = 1e-5;
/// Largest parameter count for which finite-difference gradients are attempted.
pub const FD_PARAM_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    ZeroOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    #[default]
    Kl,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n_samples: usize,
    pub sigma2: f64,
    pub master_seed: u64,
    pub loss_kind: LossKind,
    pub divergence_kind: DivergenceKind,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub prompt_id: String,
    pub loss: Option<f64>,
    pub mi: Option<f64>,
    pub sen: Option<f64>,
    pub pflat: Option<f64>,
    pub true_flatness: Option<f64>,
    pub combined: Option<f64>,
    pub provenance: Provenance,
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// `div(p, q)`; `q` is floored, terms with `p = 0` vanish.
pub fn divergence(p: &[f64], q: &[f64], kind: DivergenceKind) -> Result<f64> {
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if !(pi.is_finite() && qi.is_finite()) {
            return Err(Error::NonFiniteDivergence);
        }
        if pi > 0.0 {
            let lq = qi.max(PROB_FLOOR).ln();
            d += match kind {
                DivergenceKind::Kl => pi * (pi.ln() - lq),
                DivergenceKind::CrossEntropy => -pi * lq,
            };
        }
    }
    if !d.is_finite() {
        return Err(Error::NonFiniteDivergence);
    }
    // rounding can leave a KL of identical rows a hair below zero
    Ok(if kind == DivergenceKind::Kl {
        d.max(0.0)
    } else {
        d
    })
}

/// Mean loss over prediction rows against gold label indices.
pub fn loss_from_probs(rows: &[Vec<f64>], gold: &[usize], kind: LossKind) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() != gold.len() {
        return Err(Error::LengthMismatch(rows.len(), gold.len()));
    }
    let mut total = 0.0;
    for (p, &y) in rows.iter().zip(gold) {
        total += match kind {
            LossKind::CrossEntropy => -p[y].max(PROB_FLOOR).ln(),
            LossKind::ZeroOne => (argmax(p) != y) as u8 as f64,
        };
    }
    let l = total / rows.len() as f64;
    if !l.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(l)
}

/// `H(mean row) - mean H(row)`; negatives down to `-1e-9` are clamped to 0.
pub fn mi_from_probs(rows: &[Vec<f64>]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; rows[0].len()];
    let mut cond = 0.0;
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
        cond += entropy(r);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mi = entropy(&mean) - cond / n;
    Ok(if (-1e-9..0.0).contains(&mi) { 0.0 } else { mi })
}

/// Prediction rows for `prompt` rendered in front of each text.
pub fn prompt_probs<S: AsRef<str> + Sync>(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    texts: &[S],
) -> Result<Vec<Vec<f64>>> {
    let enc = encode_all(model, prompt, texts)?;
    enc.par_iter().map(|e| model.probs(e)).collect()
}

pub fn prompt_loss(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    labeled: &LabeledSet,
    kind: LossKind,
) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let gold = labeled.label_indices(model.verbalizer())?;
    loss_from_probs(&prompt_probs(model, prompt, &labeled.texts)?, &gold, kind)
}

pub fn mutual_information(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    inputs: &InputSet,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    mi_from_probs(&prompt_probs(model, prompt, &inputs.texts)?)
}

/// Number of (input, perturbed prompt) pairs whose argmax differs from the
/// original prompt's argmax on that input.
pub fn sensitivity_flips(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    inputs: &InputSet,
    perturbed: &[PromptCandidate],
) -> Result<u64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if perturbed.is_empty() {
        return Err(Error::EmptyPerturbationSet);
    }
    let base: Vec<usize> = prompt_probs(model, prompt, &inputs.texts)?
        .iter()
        .map(|p| argmax(p))
        .collect();
    let per_prompt: Vec<u64> = perturbed
        .par_iter()
        .map(|q| {
            let rows = prompt_probs(model, q, &inputs.texts)?;
            Ok(rows
                .iter()
                .zip(&base)
                .filter(|(r, &b)| argmax(r) != b)
                .count() as u64)
        })
        .collect::<Result<_>>()?;
    Ok(per_prompt.iter().sum())
}

/// Flip fraction in `[0, 1]`.
pub fn sensitivity(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    inputs: &InputSet,
    perturbed: &[PromptCandidate],
) -> Result<f64> {
    let flips = sensitivity_flips(model, prompt, inputs, perturbed)?;
    Ok(flips as f64 / (inputs.len() * perturbed.len()) as f64)
}

/// Per-sample pFlat terms: entry `i` is the mean over inputs of
/// `div(f_θ(p∘x), f_{θ+ε_i}(p∘x))`.
pub fn pflat_samples(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    inputs: &InputSet,
    cfg: &PerturbationConfig,
    div: DivergenceKind,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let enc = encode_all(model, prompt, &inputs.texts)?;
    pflat_samples_encoded(model, &enc, cfg, div)
}

/// As [`pflat_samples`] on inputs already encoded with the prompt.
pub fn pflat_samples_encoded(
    model: &dyn ScoringModel,
    enc: &[Encoded],
    cfg: &PerturbationConfig,
    div: DivergenceKind,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if enc.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let base: Vec<Vec<f64>> = enc.iter().map(|e| model.probs(e)).collect::<Result<_>>()?;
    let theta = model.params();
    let n = enc.len() as f64;
    (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let eps = sample_gaussian(theta.len(), cfg, i);
            let shifted: Vec<f64> = theta
                .iter()
                .zip(eps.as_slice())
                .map(|(a, b)| a + b)
                .collect();
            let mut s = 0.0;
            for (e, p) in enc.iter().zip(&base) {
                s += divergence(p, &model.probs_with(&shifted, e)?, div)?;
            }
            Ok(s / n)
        })
        .collect()
}

/// Monte-Carlo prompt flatness: mean over inputs and samples of the
/// divergence between unperturbed and perturbed predictions.
pub fn pflat(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    inputs: &InputSet,
    cfg: &PerturbationConfig,
    div: DivergenceKind,
) -> Result<f64> {
    let s = pflat_samples(model, prompt, inputs, cfg, div)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

fn one_hot(k: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// Mean cross-entropy prompt loss at arbitrary parameters.
fn ce_at(model: &dyn ScoringModel, params: &[f64], enc: &[Encoded], gold: &[usize]) -> Result<f64> {
    let mut s = 0.0;
    for (e, &y) in enc.iter().zip(gold) {
        s -= model.probs_with(params, e)?[y].max(PROB_FLOOR).ln();
    }
    Ok(s / enc.len() as f64)
}

/// Central-difference gradient of `f` at `x`, one coordinate per task.
pub fn finite_diff_gradient<F>(x: &[f64], h: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    (0..x.len())
        .into_par_iter()
        .map(|j| {
            let mut w = x.to_vec();
            w[j] = x[j] + h;
            let up = f(&w)?;
            w[j] = x[j] - h;
            let down = f(&w)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Gradient of the mean cross-entropy prompt loss with respect to θ.
/// Analytic where the backend has it, otherwise central differences.
pub fn grad_prompt_loss(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    labeled: &LabeledSet,
) -> Result<ParameterVector> {
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let gold = labeled.label_indices(model.verbalizer())?;
    let enc = encode_all(model, prompt, &labeled.texts)?;
    let c = model.verbalizer().len();
    let g = if model.has_analytic_gradient() {
        let mut g = vec![0.0; model.param_count()];
        let scale = 1.0 / enc.len() as f64;
        for (e, &y) in enc.iter().zip(&gold) {
            model.accumulate_ce_gradient(e, &one_hot(y, c), scale, &mut g)?;
        }
        g
    } else {
        if model.param_count() > FD_PARAM_LIMIT {
            return Err(Error::TooManyParamsForFiniteDiff {
                params: model.param_count(),
                limit: FD_PARAM_LIMIT,
            });
        }
        finite_diff_gradient(model.params(), FD_STEP, |w| ce_at(model, w, &enc, &gold))?
    };
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(ParameterVector::from(g))
}

/// `F = ‖∇θ L‖₂` for the cross-entropy prompt loss.
pub fn true_flatness(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    labeled: &LabeledSet,
) -> Result<f64> {
    Ok(grad_prompt_loss(model, prompt, labeled)?.norm())
}

/// Lower-is-better score: the base (negated if higher is better) plus
/// `alpha * pflat`.
pub fn combined_score(base: f64, direction: Direction, pflat_value: f64, alpha: f64) -> f64 {
    let b = match direction {
        Direction::LowerBetter => base,
        Direction::HigherBetter => -base,
    };
    b + alpha * pflat_value
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateGaps {
    pub mi_gap_at_perfect: f64,
    pub sen_gap_at_perfect: f64,
}

/// Checks the surrogate decompositions where the prediction equals the label
/// distribution. There `H(f) = CE(y, f)`, so `MI = H(mean f) - L_ce` and the
/// mutual-information gap is `|MI - (H(mean f) - L_ce)|`; the sensitivity gap
/// is the zero-one loss, which must vanish for one-hot targets.
pub fn surrogate_gap_check(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<SurrogateGaps> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(preds.len(), targets.len()));
    }
    for (i, (f, y)) in preds.iter().zip(targets).enumerate() {
        let tv = 0.5 * f.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>();
        if tv > 1e-9 {
            return Err(Error::PreconditionNotMet(format!(
                "prediction {i} is {tv:.3e} from its label distribution in total variation"
            )));
        }
    }
    let n = preds.len() as f64;
    let mi = mi_from_probs(preds)?;
    let mut mean = vec![0.0; preds[0].len()];
    for f in preds {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let ce = preds
        .iter()
        .zip(targets)
        .map(|(f, y)| {
            -y.iter()
                .zip(f)
                .filter(|(&yi, _)| yi > 0.0)
                .map(|(yi, fi)| yi * fi.max(PROB_FLOOR).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    let zero_one = preds
        .iter()
        .zip(targets)
        .filter(|(f, y)| argmax(f) != argmax(y))
        .count() as f64
        / n;
    Ok(SurrogateGaps {
        mi_gap_at_perfect: (mi - (entropy(&mean) - ce)).abs(),
        sen_gap_at_perfect: zero_one,
    })
}

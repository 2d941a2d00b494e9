//! Hashed bag-of-tokens softmax classifier.
//!
//! Features are token counts over `vocab_size` hash buckets, logits are
//! `W φ + b` with `W` of shape `labels x vocab_size`. Parameters are laid out
//! as `W` row-major followed by `b`. Everything about this model (gradients,
//! Fisher information) has a closed form, which is what the oracle tests lean
//! on.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tokenizer::{pieces, HashTokenizer};
use super::{softmax_in_place, Encoded, ParameterVector, PrefixParameters, ScoringModel};
use crate::error::{Error, Result};
use crate::prompt::{LabeledSet, Verbalizer};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticBagConfig {
    pub vocab_size: usize,
    pub l2: f64,
    pub train_epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop once the full objective gradient norm drops below this.
    pub grad_tol: f64,
    /// Std-dev of the seeded initial weights.
    pub init_scale: f64,
}

impl Default for LogisticBagConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            l2: 1e-3,
            train_epochs: 500,
            learning_rate: 0.5,
            seed: 0,
            grad_tol: 1e-10,
            init_scale: 1e-3,
        }
    }
}

impl LogisticBagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 64 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} < 64",
                self.vocab_size
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "l2 {} must be finite and >= 0",
                self.l2
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {}",
                self.learning_rate
            )));
        }
        if self.train_epochs == 0 {
            return Err(Error::InvalidConfig("train_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Sparse bucket counts, sorted by bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseFeatures {
    pub fn from_tokens(mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        let mut idx: Vec<u32> = Vec::new();
        let mut val: Vec<f64> = Vec::new();
        for id in ids {
            if idx.last() == Some(&id) {
                *val.last_mut().unwrap() += 1.0;
            } else {
                idx.push(id);
                val.push(1.0);
            }
        }
        Self { idx, val }
    }

    pub fn sq_norm(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone)]
pub struct LogisticBag {
    verbalizer: Verbalizer,
    tokenizer: HashTokenizer,
    params: Vec<f64>,
}

impl LogisticBag {
    /// All-zero parameters.
    pub fn new(verbalizer: Verbalizer, vocab_size: usize) -> Result<Self> {
        for t in verbalizer.tokens() {
            if pieces(t).is_empty() {
                return Err(Error::UnknownLabelToken(t.clone()));
            }
        }
        let n = verbalizer.len() * (vocab_size + 1);
        Ok(Self {
            verbalizer,
            tokenizer: HashTokenizer::new(vocab_size),
            params: vec![0.0; n],
        })
    }

    pub fn from_weights(
        verbalizer: Verbalizer,
        vocab_size: usize,
        weights: &[f64],
        bias: &[f64],
    ) -> Result<Self> {
        let mut m = Self::new(verbalizer, vocab_size)?;
        let c = m.labels();
        if weights.len() != c * vocab_size {
            return Err(Error::DimensionMismatch {
                expected: c * vocab_size,
                actual: weights.len(),
            });
        }
        if bias.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: bias.len(),
            });
        }
        m.params[..c * vocab_size].copy_from_slice(weights);
        m.params[c * vocab_size..].copy_from_slice(bias);
        Ok(m)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size
    }

    pub fn labels(&self) -> usize {
        self.verbalizer.len()
    }

    pub fn tokenizer(&self) -> &HashTokenizer {
        &self.tokenizer
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.labels() * self.vocab_size()]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.labels() * self.vocab_size()..]
    }

    pub fn features(&self, text: &str) -> SparseFeatures {
        SparseFeatures::from_tokens(self.tokenizer.tokenize(text))
    }

    fn logits(&self, params: &[f64], x: &SparseFeatures, shift: Option<&[f64]>) -> Vec<f64> {
        let v = self.vocab_size();
        let c = self.labels();
        let (w, b) = params.split_at(c * v);
        (0..c)
            .map(|k| {
                let row = &w[k * v..(k + 1) * v];
                let mut z = b[k];
                for (&j, &val) in x.idx.iter().zip(&x.val) {
                    z += row[j as usize] * val;
                }
                if let Some(s) = shift {
                    z += row.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                }
                z
            })
            .collect()
    }

    fn probs_sparse(&self, params: &[f64], x: &SparseFeatures, shift: Option<&[f64]>) -> Vec<f64> {
        let mut z = self.logits(params, x, shift);
        softmax_in_place(&mut z);
        z
    }

    fn features_of<'a>(&self, input: &'a Encoded) -> Result<&'a SparseFeatures> {
        input
            .downcast_ref::<SparseFeatures>()
            .ok_or_else(|| Error::FormatError("input was not encoded by a logistic backend".into()))
    }
}

impl ScoringModel for LogisticBag {
    fn backend_name(&self) -> &'static str {
        "logistic_bag"
    }

    fn verbalizer(&self) -> &Verbalizer {
        &self.verbalizer
    }

    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &ParameterVector) -> Result<()> {
        if params.dim() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: params.dim(),
            });
        }
        self.params.copy_from_slice(params.as_slice());
        Ok(())
    }

    fn encode(&self, text: &str) -> Result<Encoded> {
        Ok(Encoded::new(self.features(text)))
    }

    fn probs_with(&self, params: &[f64], input: &Encoded) -> Result<Vec<f64>> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        Ok(self.probs_sparse(params, self.features_of(input)?, None))
    }

    fn has_analytic_gradient(&self) -> bool {
        true
    }

    fn accumulate_ce_gradient(
        &self,
        input: &Encoded,
        target: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let x = self.features_of(input)?;
        let p = self.probs_sparse(&self.params, x, None);
        let v = self.vocab_size();
        let c = self.labels();
        for k in 0..c {
            let r = scale * (p[k] - target[k]);
            for (&j, &val) in x.idx.iter().zip(&x.val) {
                out[k * v + j as usize] += r * val;
            }
            out[c * v + k] += r;
        }
        Ok(())
    }

    fn prefix_width(&self) -> Option<usize> {
        Some(self.vocab_size())
    }

    fn probs_with_prefix(&self, prefix: &PrefixParameters, input: &Encoded) -> Result<Vec<f64>> {
        if prefix.cols != self.vocab_size() {
            return Err(Error::DimensionMismatch {
                expected: self.vocab_size(),
                actual: prefix.cols,
            });
        }
        let shift = prefix.column_sums();
        Ok(self.probs_sparse(&self.params, self.features_of(input)?, Some(&shift)))
    }

    fn has_analytic_prefix_gradient(&self) -> bool {
        true
    }

    fn accumulate_prefix_gradient(
        &self,
        prefix: &PrefixParameters,
        input: &Encoded,
        target: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let shift = prefix.column_sums();
        let p = self.probs_sparse(&self.params, self.features_of(input)?, Some(&shift));
        let v = self.vocab_size();
        let w = self.weights();
        // every prefix row feeds the same summed shift, so all rows share one gradient
        let mut g = vec![0.0; v];
        for (k, (&pk, &tk)) in p.iter().zip(target).enumerate() {
            let r = scale * (pk - tk);
            for (gj, wj) in g.iter_mut().zip(&w[k * v..(k + 1) * v]) {
                *gj += r * wj;
            }
        }
        for row in 0..prefix.rows {
            for (o, gj) in out[row * v..(row + 1) * v].iter_mut().zip(&g) {
                *o += gj;
            }
        }
        Ok(())
    }

    fn clone_model(&self) -> Box<dyn ScoringModel> {
        Box::new(self.clone())
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}

/// Per-epoch trace of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Regularized objective before each update, plus the final value.
    pub objective: Vec<f64>,
    pub final_grad_norm: f64,
    pub epochs_run: usize,
    pub step_size: f64,
}

/// Full-batch proximal gradient descent on mean cross-entropy plus
/// `l2/2 * |θ|²`. The step is capped at `1/L` for the cross-entropy
/// smoothness bound `L = ½ mean(|φ|² + 1)`, which makes the objective
/// non-increasing.
pub fn fit_logistic(
    train: &LabeledSet,
    verbalizer: &Verbalizer,
    cfg: &LogisticBagConfig,
) -> Result<LogisticBag> {
    fit_logistic_traced(train, verbalizer, cfg).map(|(m, _)| m)
}

pub fn fit_logistic_traced(
    train: &LabeledSet,
    verbalizer: &Verbalizer,
    cfg: &LogisticBagConfig,
) -> Result<(LogisticBag, FitReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = train.label_indices(verbalizer)?;
    for (k, name) in verbalizer.labels().iter().enumerate() {
        if !labels.contains(&k) {
            return Err(Error::MissingLabel(name.clone()));
        }
    }
    let mut model = LogisticBag::new(verbalizer.clone(), cfg.vocab_size)?;
    let mut rng = rng_for(cfg.seed, "logistic-init", 0);
    for p in model.params.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *p = cfg.init_scale * z;
    }

    let feats: Vec<SparseFeatures> = train.texts.iter().map(|t| model.features(t)).collect();
    let n = feats.len() as f64;
    let c = verbalizer.len();
    let lip = 0.5 * feats.iter().map(|f| f.sq_norm() + 1.0).sum::<f64>() / n;
    let step = cfg.learning_rate.min(1.0 / lip);

    let objective = |params: &[f64], grad: Option<&mut Vec<f64>>| -> f64 {
        let mut loss = 0.0;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for (x, &y) in feats.iter().zip(&labels) {
            let p = model.probs_sparse(params, x, None);
            loss -= p[y].max(1e-300).ln();
            if let Some(g) = grad.as_deref_mut() {
                let v = cfg.vocab_size;
                for k in 0..c {
                    let r = (p[k] - if k == y { 1.0 } else { 0.0 }) / n;
                    for (&j, &val) in x.idx.iter().zip(&x.val) {
                        g[k * v + j as usize] += r * val;
                    }
                    g[c * v + k] += r;
                }
            }
        }
        loss / n + 0.5 * cfg.l2 * params.iter().map(|v| v * v).sum::<f64>()
    };

    let mut params = model.params.clone();
    let mut grad = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(cfg.train_epochs + 1);
    let mut epochs_run = 0;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..cfg.train_epochs {
        let f = objective(&params, Some(&mut grad));
        history.push(f);
        grad_norm = grad
            .iter()
            .zip(&params)
            .map(|(g, p)| (g + cfg.l2 * p).powi(2))
            .sum::<f64>()
            .sqrt();
        if grad_norm <= cfg.grad_tol {
            break;
        }
        let shrink = 1.0 / (1.0 + step * cfg.l2);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p = (*p - step * g) * shrink;
        }
        epochs_run += 1;
    }
    let f = objective(&params, Some(&mut grad));
    history.push(f);
    if epochs_run == cfg.train_epochs {
        grad_norm = grad
            .iter()
            .zip(&params)
            .map(|(g, p)| (g + cfg.l2 * p).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    model.params = params;
    Ok((
        model,
        FitReport {
            objective: history,
            final_grad_norm: grad_norm,
            epochs_run,
            step_size: step,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode_all, predict};
    use crate::prompt::PromptCandidate;

    fn verb() -> Verbalizer {
        Verbalizer::from_pairs([("neg", "bad"), ("pos", "good")]).unwrap()
    }

    fn separable() -> LabeledSet {
        LabeledSet::from_pairs([
            ("sunny bright happy", "pos"),
            ("happy warm", "pos"),
            ("bright joy", "pos"),
            ("gloomy cold sad", "neg"),
            ("sad rain", "neg"),
            ("cold gloomy", "neg"),
        ])
    }

    #[test]
    fn zero_params_uniform() {
        let m = LogisticBag::new(verb(), 64).unwrap();
        let d = predict(&m, &PromptCandidate::empty("p"), "anything at all").unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn matches_direct_arithmetic() {
        let v = 64;
        let w: Vec<f64> = (0..2 * v)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1)
            .collect();
        let b = [0.3, -0.2];
        let m = LogisticBag::from_weights(verb(), v, &w, &b).unwrap();
        let text = "alpha beta alpha gamma";
        let ids = m.tokenizer().tokenize(text);
        let mut phi = vec![0.0; v];
        for id in ids {
            phi[id as usize] += 1.0;
        }
        let z: Vec<f64> = (0..2)
            .map(|k| b[k] + (0..v).map(|j| w[k * v + j] * phi[j]).sum::<f64>())
            .collect();
        let e: Vec<f64> = z.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        let enc = m.encode(text).unwrap();
        let p = m.probs(&enc).unwrap();
        for k in 0..2 {
            assert!((p[k] - e[k] / s).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_separable_reaches_full_accuracy() {
        let cfg = LogisticBagConfig {
            l2: 1e-4,
            train_epochs: 2000,
            ..Default::default()
        };
        let data = separable();
        let (m, rep) = fit_logistic_traced(&data, &verb(), &cfg).unwrap();
        for w in rep.objective.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-6,
                "objective increased: {} -> {}",
                w[0],
                w[1]
            );
        }
        let encs = encode_all(&m, &PromptCandidate::empty("p"), &data.texts).unwrap();
        for (enc, label) in encs.iter().zip(&data.labels) {
            let p = m.probs(enc).unwrap();
            let want = verb().index_of(label).unwrap();
            assert_eq!(crate::model::argmax(&p), want);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let cfg = LogisticBagConfig {
            train_epochs: 50,
            seed: 9,
            ..Default::default()
        };
        let a = fit_logistic(&separable(), &verb(), &cfg).unwrap();
        let b = fit_logistic(&separable(), &verb(), &cfg).unwrap();
        let (pa, pb) = (a.params(), b.params());
        assert!(pa.iter().zip(pb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn huge_l2_shrinks_to_zero() {
        let cfg = LogisticBagConfig {
            l2: 1e6,
            train_epochs: 200,
            ..Default::default()
        };
        let m = fit_logistic(&separable(), &verb(), &cfg).unwrap();
        let norm = m.params().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "norm {norm}");
    }

    #[test]
    fn missing_label_rejected() {
        let data = LabeledSet::from_pairs([("a b", "pos"), ("c d", "pos")]);
        let err = fit_logistic(&data, &verb(), &LogisticBagConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingLabel(ref l) if l == "neg"));
    }

    #[test]
    fn small_vocab_rejected() {
        let cfg = LogisticBagConfig {
            vocab_size: 32,
            ..Default::default()
        };
        assert!(matches!(
            fit_logistic(&separable(), &verb(), &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn set_params_dimension_checked() {
        let mut m = LogisticBag::new(verb(), 64).unwrap();
        let bad = ParameterVector::zeros(3);
        assert!(matches!(
            m.set_params(&bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}

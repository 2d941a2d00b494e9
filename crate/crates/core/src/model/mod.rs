//! Scoring-model abstraction and the two bundled backends.
//!
//! A backend turns rendered text into a distribution over verbalizer labels
//! and exposes its parameters as one flat vector. Probability vectors are
//! always in the verbalizer's (lexicographic) label order.

use std::any::Any;
use std::fmt;

use crate::error::{Error, Result};
use crate::prompt::{PromptCandidate, Verbalizer};

pub mod logistic;
pub mod tokenizer;
pub mod transformer;
pub mod weights;

pub use logistic::{fit_logistic, FitReport, LogisticBag, LogisticBagConfig};
pub use tokenizer::{pieces, ByteTokenizer, HashTokenizer, TokenSequence};
pub use transformer::{TinyTransformer, TransformerConfig};
pub use weights::{load_model, load_transformer};

/// Flat parameter vector of a backend.
#[derive(Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Componentwise sum; dimensions must agree.
    pub fn add(&self, other: &ParameterVector) -> Result<ParameterVector> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }
}

impl fmt::Debug for ParameterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ParameterVector(dim={}, norm={:.6e})",
            self.dim(),
            self.norm()
        )
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Label distribution produced by a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl PredictionDistribution {
    pub fn new(verbalizer: &Verbalizer, probs: Vec<f64>) -> Self {
        debug_assert_eq!(verbalizer.len(), probs.len());
        Self {
            labels: verbalizer.labels().to_vec(),
            probs,
        }
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.probs[i])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn argmax_label(&self) -> &str {
        &self.labels[argmax(&self.probs)]
    }
}

/// Backend-specific pre-processed input (token ids, sparse features, ...).
pub struct Encoded(Box<dyn Any + Send + Sync>);

impl Encoded {
    pub fn new<T: Any + Send + Sync>(value: T) -> Self {
        Self(Box::new(value))
    }

    pub fn downcast_ref<T: Any>(&self) -> Option<&T> {
        self.0.downcast_ref()
    }
}

/// Continuous prompt: `rows x cols` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixParameters {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl PrefixParameters {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Sum over rows.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

/// A differentiable classifier over verbalizer labels.
///
/// `probs_with` must be a pure function of `(params, input)`; everything that
/// perturbs parameters goes through it instead of mutating the model, so a
/// shared `&dyn ScoringModel` is safe to use from many threads.
pub trait ScoringModel: Send + Sync {
    fn backend_name(&self) -> &'static str;

    fn verbalizer(&self) -> &Verbalizer;

    fn param_count(&self) -> usize;

    fn params(&self) -> &[f64];

    fn set_params(&mut self, params: &ParameterVector) -> Result<()>;

    fn encode(&self, text: &str) -> Result<Encoded>;

    fn probs_with(&self, params: &[f64], input: &Encoded) -> Result<Vec<f64>>;

    fn probs(&self, input: &Encoded) -> Result<Vec<f64>> {
        self.probs_with(self.params(), input)
    }

    fn has_analytic_gradient(&self) -> bool {
        false
    }

    /// Adds `scale * d CE(target, f(input)) / d params` into `out`.
    fn accumulate_ce_gradient(
        &self,
        _input: &Encoded,
        _target: &[f64],
        _scale: f64,
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::Unsupported("analytic gradient"))
    }

    /// Width of one prefix row, if the backend accepts a continuous prefix.
    fn prefix_width(&self) -> Option<usize> {
        None
    }

    fn probs_with_prefix(&self, _prefix: &PrefixParameters, _input: &Encoded) -> Result<Vec<f64>> {
        Err(Error::Unsupported("prefix conditioning"))
    }

    fn has_analytic_prefix_gradient(&self) -> bool {
        false
    }

    /// Adds `scale * d CE(target, f(prefix, input)) / d prefix` into `out`.
    fn accumulate_prefix_gradient(
        &self,
        _prefix: &PrefixParameters,
        _input: &Encoded,
        _target: &[f64],
        _scale: f64,
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::Unsupported("analytic prefix gradient"))
    }

    fn clone_model(&self) -> Box<dyn ScoringModel>;

    fn as_any(&self) -> &dyn Any;
}

impl Clone for Box<dyn ScoringModel> {
    fn clone(&self) -> Self {
        self.clone_model()
    }
}

pub fn get_params(model: &dyn ScoringModel) -> ParameterVector {
    ParameterVector(model.params().to_vec())
}

pub fn set_params(model: &mut dyn ScoringModel, params: &ParameterVector) -> Result<()> {
    model.set_params(params)
}

/// Label distribution for `input` under `prompt`.
pub fn predict(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    input: &str,
) -> Result<PredictionDistribution> {
    let text = prompt.render(model.verbalizer(), input)?;
    let enc = model.encode(&text)?;
    Ok(PredictionDistribution::new(
        model.verbalizer(),
        model.probs(&enc)?,
    ))
}

/// Encode `prompt` rendered in front of each text.
pub fn encode_all<S: AsRef<str>>(
    model: &dyn ScoringModel,
    prompt: &PromptCandidate,
    texts: &[S],
) -> Result<Vec<Encoded>> {
    let prefix = prompt.render_prefix(model.verbalizer())?;
    texts
        .iter()
        .map(|t| {
            let mut s = String::with_capacity(prefix.len() + t.as_ref().len() + 1);
            s.push_str(&prefix);
            s.push_str(t.as_ref());
            s.push('\n');
            model.encode(&s)
        })
        .collect()
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Index of the largest entry; ties go to the lowest index, i.e. the
/// lexicographically smallest label.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

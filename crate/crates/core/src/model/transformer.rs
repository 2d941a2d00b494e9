//! Tiny byte-level pre-LayerNorm transformer with verbalizer-restricted output.
//!
//! The label distribution is the softmax of the final-position logits taken
//! only at the verbalizer's reserved token ids. The unembedding is tied to the
//! token embedding.
//!
//! Tensor layout (in parameter-vector and weight-file order):
//!
//! | name                | shape          |
//! |---------------------|----------------|
//! | `wte`               | `[vocab, d]`   |
//! | `wpe`               | `[seq, d]`     |
//! | `h{l}.ln1.g/b`      | `[d]`          |
//! | `h{l}.attn.w_qkv`   | `[d, 3d]`      |
//! | `h{l}.attn.b_qkv`   | `[3d]`         |
//! | `h{l}.attn.w_o`     | `[d, d]`       |
//! | `h{l}.attn.b_o`     | `[d]`          |
//! | `h{l}.ln2.g/b`      | `[d]`          |
//! | `h{l}.mlp.w_fc`     | `[d, 4d]`      |
//! | `h{l}.mlp.b_fc`     | `[4d]`         |
//! | `h{l}.mlp.w_proj`   | `[4d, d]`      |
//! | `h{l}.mlp.b_proj`   | `[d]`          |
//! | `ln_f.g/b`          | `[d]`          |
//!
//! so `param_count = vocab*d + seq*d + layers*(12d² + 13d) + 2d`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tokenizer::{ByteTokenizer, TokenSequence, BYTE_VOCAB};
use super::{softmax_in_place, Encoded, ParameterVector, PrefixParameters, ScoringModel};
use crate::error::{Error, Result};
use crate::prompt::Verbalizer;
use crate::seed::rng_for;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.max_seq_len == 0 {
            return Err(Error::InvalidConfig(
                "transformer sizes must be positive".into(),
            ));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size < BYTE_VOCAB {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} < 256",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Tensor names and shapes in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![
            ("wte".to_string(), vec![self.vocab_size, d]),
            ("wpe".to_string(), vec![self.max_seq_len, d]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("h{l}.{s}");
            out.push((p("ln1.g"), vec![d]));
            out.push((p("ln1.b"), vec![d]));
            out.push((p("attn.w_qkv"), vec![d, 3 * d]));
            out.push((p("attn.b_qkv"), vec![3 * d]));
            out.push((p("attn.w_o"), vec![d, d]));
            out.push((p("attn.b_o"), vec![d]));
            out.push((p("ln2.g"), vec![d]));
            out.push((p("ln2.b"), vec![d]));
            out.push((p("mlp.w_fc"), vec![d, 4 * d]));
            out.push((p("mlp.b_fc"), vec![4 * d]));
            out.push((p("mlp.w_proj"), vec![4 * d, d]));
            out.push((p("mlp.b_proj"), vec![d]));
        }
        out.push(("ln_f.g".to_string(), vec![d]));
        out.push(("ln_f.b".to_string(), vec![d]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_o: usize,
    b_o: usize,
    ln2_g: usize,
    ln2_b: usize,
    w_fc: usize,
    b_fc: usize,
    w_proj: usize,
    b_proj: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    wte: usize,
    wpe: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
}

impl Layout {
    fn new(cfg: &TransformerConfig) -> Self {
        let mut offsets = Vec::new();
        let mut at = 0;
        for (_, shape) in cfg.tensor_shapes() {
            offsets.push(at);
            at += shape.iter().product::<usize>();
        }
        let mut it = offsets.into_iter();
        let mut next = || it.next().expect("layout");
        let wte = next();
        let wpe = next();
        let layers = (0..cfg.layers)
            .map(|_| LayerOffsets {
                ln1_g: next(),
                ln1_b: next(),
                w_qkv: next(),
                b_qkv: next(),
                w_o: next(),
                b_o: next(),
                ln2_g: next(),
                ln2_b: next(),
                w_fc: next(),
                b_fc: next(),
                w_proj: next(),
                b_proj: next(),
            })
            .collect();
        let lnf_g = next();
        let lnf_b = next();
        Self {
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TinyTransformer {
    cfg: TransformerConfig,
    verbalizer: Verbalizer,
    tokenizer: ByteTokenizer,
    layout: Layout,
    params: Vec<f64>,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * inv * g[i] + b[i];
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// `out[j] = bias[j] + Σ_i x[i] * w[i * cols + j]`
fn affine(x: &[f64], w: &[f64], bias: &[f64], out: &mut [f64]) {
    let cols = out.len();
    out.copy_from_slice(&bias[..cols]);
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

impl TinyTransformer {
    pub fn zeros(cfg: TransformerConfig, verbalizer: Verbalizer) -> Result<Self> {
        cfg.validate()?;
        let tokenizer = ByteTokenizer::new(verbalizer.tokens());
        if tokenizer.vocab_size() > cfg.vocab_size {
            let missing = &verbalizer.tokens()[cfg.vocab_size.saturating_sub(BYTE_VOCAB)];
            return Err(Error::UnknownLabelToken(missing.clone()));
        }
        let layout = Layout::new(&cfg);
        Ok(Self {
            params: vec![0.0; cfg.param_count()],
            cfg,
            verbalizer,
            tokenizer,
            layout,
        })
    }

    /// GPT-2 style init: N(0, 0.02²) matrices and embeddings, zero biases,
    /// unit LayerNorm gains.
    pub fn random(cfg: TransformerConfig, verbalizer: Verbalizer, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(cfg, verbalizer)?;
        let mut rng = rng_for(seed, "transformer-init", 0);
        let mut at = 0;
        for (name, shape) in cfg.tensor_shapes() {
            let n: usize = shape.iter().product();
            let slot = &mut m.params[at..at + n];
            if name.ends_with(".g") {
                slot.fill(1.0);
            } else if shape.len() == 2 {
                for v in slot.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = 0.02 * z;
                }
            }
            at += n;
        }
        Ok(m)
    }

    pub fn from_params(
        cfg: TransformerConfig,
        verbalizer: Verbalizer,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::zeros(cfg, verbalizer)?;
        if params.len() != m.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.tokenizer.tokenize(text)
    }

    fn tokens_of<'a>(&self, input: &'a Encoded) -> Result<&'a TokenSequence> {
        input.downcast_ref::<TokenSequence>().ok_or_else(|| {
            Error::FormatError("input was not encoded by a transformer backend".into())
        })
    }

    fn forward(
        &self,
        params: &[f64],
        tokens: &[u32],
        prefix: Option<&PrefixParameters>,
    ) -> Result<Vec<f64>> {
        let d = self.cfg.d_model;
        let n_prefix = prefix.map_or(0, |p| p.rows);
        let t_len = n_prefix + tokens.len();
        if t_len > self.cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: t_len,
                max: self.cfg.max_seq_len,
            });
        }
        if t_len == 0 {
            return Err(Error::PreconditionNotMet("empty token sequence".into()));
        }
        let lay = &self.layout;
        let mut x = vec![0.0; t_len * d];
        for t in 0..t_len {
            let row = &mut x[t * d..(t + 1) * d];
            if t < n_prefix {
                row.copy_from_slice(prefix.unwrap().row(t));
            } else {
                let id = tokens[t - n_prefix] as usize;
                if id >= self.cfg.vocab_size {
                    return Err(Error::UnknownLabelToken(format!("token id {id}")));
                }
                row.copy_from_slice(&params[lay.wte + id * d..lay.wte + (id + 1) * d]);
            }
            let pos = &params[lay.wpe + t * d..lay.wpe + (t + 1) * d];
            for (r, p) in row.iter_mut().zip(pos) {
                *r += p;
            }
        }

        let heads = self.cfg.heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut h = vec![0.0; d];
        let mut qkv = vec![0.0; t_len * 3 * d];
        let mut attn = vec![0.0; d];
        let mut o = vec![0.0; d];
        let mut fc = vec![0.0; 4 * d];
        let mut scores = vec![0.0; t_len];
        for l in &lay.layers {
            for t in 0..t_len {
                layer_norm(
                    &x[t * d..(t + 1) * d],
                    &params[l.ln1_g..l.ln1_g + d],
                    &params[l.ln1_b..l.ln1_b + d],
                    &mut h,
                );
                affine(
                    &h,
                    &params[l.w_qkv..l.w_qkv + 3 * d * d],
                    &params[l.b_qkv..l.b_qkv + 3 * d],
                    &mut qkv[t * 3 * d..(t + 1) * 3 * d],
                );
            }
            for t in 0..t_len {
                for head in 0..heads {
                    let q = &qkv[t * 3 * d + head * hd..t * 3 * d + (head + 1) * hd];
                    for (s, score) in scores[..=t].iter_mut().enumerate() {
                        let k = &qkv[s * 3 * d + d + head * hd..s * 3 * d + d + (head + 1) * hd];
                        *score = scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
                    }
                    softmax_in_place(&mut scores[..=t]);
                    let out = &mut attn[head * hd..(head + 1) * hd];
                    out.fill(0.0);
                    for (s, &a) in scores[..=t].iter().enumerate() {
                        let v = &qkv
                            [s * 3 * d + 2 * d + head * hd..s * 3 * d + 2 * d + (head + 1) * hd];
                        for (oi, vi) in out.iter_mut().zip(v) {
                            *oi += a * vi;
                        }
                    }
                }
                affine(
                    &attn,
                    &params[l.w_o..l.w_o + d * d],
                    &params[l.b_o..l.b_o + d],
                    &mut o,
                );
                for (xi, oi) in x[t * d..(t + 1) * d].iter_mut().zip(&o) {
                    *xi += oi;
                }
            }
            for t in 0..t_len {
                layer_norm(
                    &x[t * d..(t + 1) * d],
                    &params[l.ln2_g..l.ln2_g + d],
                    &params[l.ln2_b..l.ln2_b + d],
                    &mut h,
                );
                affine(
                    &h,
                    &params[l.w_fc..l.w_fc + 4 * d * d],
                    &params[l.b_fc..l.b_fc + 4 * d],
                    &mut fc,
                );
                fc.iter_mut().for_each(|v| *v = gelu(*v));
                affine(
                    &fc,
                    &params[l.w_proj..l.w_proj + 4 * d * d],
                    &params[l.b_proj..l.b_proj + d],
                    &mut o,
                );
                for (xi, oi) in x[t * d..(t + 1) * d].iter_mut().zip(&o) {
                    *xi += oi;
                }
            }
        }
        layer_norm(
            &x[(t_len - 1) * d..t_len * d],
            &params[lay.lnf_g..lay.lnf_g + d],
            &params[lay.lnf_b..lay.lnf_b + d],
            &mut h,
        );
        let mut logits: Vec<f64> = (0..self.verbalizer.len())
            .map(|i| {
                let id = self.tokenizer.reserved_id(i) as usize;
                let e = &params[lay.wte + id * d..lay.wte + (id + 1) * d];
                h.iter().zip(e).map(|(a, b)| a * b).sum()
            })
            .collect();
        softmax_in_place(&mut logits);
        Ok(logits)
    }
}

impl ScoringModel for TinyTransformer {
    fn backend_name(&self) -> &'static str {
        "transformer"
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
        let ids = self.tokenize(text);
        if ids.len() > self.cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.cfg.max_seq_len,
            });
        }
        Ok(Encoded::new(ids))
    }

    fn probs_with(&self, params: &[f64], input: &Encoded) -> Result<Vec<f64>> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.forward(params, self.tokens_of(input)?, None)
    }

    fn prefix_width(&self) -> Option<usize> {
        Some(self.cfg.d_model)
    }

    fn probs_with_prefix(&self, prefix: &PrefixParameters, input: &Encoded) -> Result<Vec<f64>> {
        if prefix.cols != self.cfg.d_model {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.d_model,
                actual: prefix.cols,
            });
        }
        self.forward(&self.params, self.tokens_of(input)?, Some(prefix))
    }

    fn clone_model(&self) -> Box<dyn ScoringModel> {
        Box::new(self.clone())
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}

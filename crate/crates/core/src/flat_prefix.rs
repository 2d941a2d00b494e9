//! Continuous prompt (prefix) tuning with optional sharpness-aware updates.
//!
//! A SAM step first climbs to `w + ρ g/‖g‖` and then descends using the
//! gradient found there. With `use_flatness = false` it is a plain gradient
//! step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{finite_diff_gradient, FD_STEP, PROB_FLOOR};
use crate::model::{argmax, Encoded, PrefixParameters, ScoringModel};
use crate::prompt::LabeledSet;
use crate::seed::rng_for;

/// Largest prefix (rows × width) tuned through finite differences.
pub const PREFIX_FD_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamConfig {
    pub rho: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub grad_norm_floor: f64,
    pub use_flatness: bool,
    pub seed: u64,
    pub prefix_len: usize,
    /// Std-dev of the seeded initial prefix entries.
    pub init_scale: f64,
}

impl Default for SamConfig {
    fn default() -> Self {
        Self {
            rho: 0.05,
            learning_rate: 5e-5,
            epochs: 30,
            grad_norm_floor: 1e-12,
            use_flatness: true,
            seed: 0,
            prefix_len: 10,
            init_scale: 1e-3,
        }
    }
}

impl SamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_flatness && !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rho {} must be positive",
                self.rho
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {}",
                self.learning_rate
            )));
        }
        if self.grad_norm_floor.is_nan() || self.grad_norm_floor <= 0.0 {
            return Err(Error::InvalidConfig(
                "grad_norm_floor must be positive".into(),
            ));
        }
        if self.prefix_len == 0 {
            return Err(Error::InvalidConfig("prefix_len must be positive".into()));
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn checked(g: Vec<f64>, dim: usize) -> Result<Vec<f64>> {
    if g.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: g.len(),
        });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(g)
}

/// One update of a flat vector `w`; `grad_fn` returns `(loss, gradient)`.
pub fn sam_update<F>(
    w: &[f64],
    mut grad_fn: F,
    rho: f64,
    lr: f64,
    floor: f64,
    use_flatness: bool,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let g0 = checked(grad_fn(w)?.1, w.len())?;
    let g = if use_flatness {
        let n = norm(&g0);
        if n <= floor {
            g0
        } else {
            let ascent: Vec<f64> = w.iter().zip(&g0).map(|(a, b)| a + rho * b / n).collect();
            checked(grad_fn(&ascent)?.1, w.len())?
        }
    } else {
        g0
    };
    Ok(w.iter().zip(&g).map(|(a, b)| a - lr * b).collect())
}

pub fn sam_step<F>(
    prefix: &PrefixParameters,
    grad_fn: F,
    cfg: &SamConfig,
) -> Result<PrefixParameters>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let v = sam_update(
        &prefix.values,
        grad_fn,
        cfg.rho,
        cfg.learning_rate,
        cfg.grad_norm_floor,
        cfg.use_flatness,
    )?;
    PrefixParameters::from_values(prefix.rows, prefix.cols, v)
}

/// Mean cross-entropy of `model` under `prefix` and its gradient with respect
/// to the prefix entries.
pub fn prefix_loss_and_grad(
    model: &dyn ScoringModel,
    prefix: &PrefixParameters,
    enc: &[Encoded],
    gold: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if enc.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = model.verbalizer().len();
    let n = enc.len() as f64;
    let loss_at = |p: &PrefixParameters| -> Result<f64> {
        let mut s = 0.0;
        for (e, &y) in enc.iter().zip(gold) {
            s -= model.probs_with_prefix(p, e)?[y].max(PROB_FLOOR).ln();
        }
        Ok(s / n)
    };
    let loss = loss_at(prefix)?;
    let grad = if model.has_analytic_prefix_gradient() {
        let mut g = vec![0.0; prefix.len()];
        for (e, &y) in enc.iter().zip(gold) {
            let mut t = vec![0.0; c];
            t[y] = 1.0;
            model.accumulate_prefix_gradient(prefix, e, &t, 1.0 / n, &mut g)?;
        }
        g
    } else {
        if prefix.len() > PREFIX_FD_LIMIT {
            return Err(Error::PrefixTooLargeForFiniteDiff {
                entries: prefix.len(),
                limit: PREFIX_FD_LIMIT,
            });
        }
        finite_diff_gradient(&prefix.values, FD_STEP, |w| {
            loss_at(&PrefixParameters {
                rows: prefix.rows,
                cols: prefix.cols,
                values: w.to_vec(),
            })
        })?
    };
    Ok((loss, checked(grad, prefix.len())?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub loss: f64,
    /// `‖∇_prefix L‖` at the start of the epoch.
    pub grad_norm: f64,
}

/// Seeded `N(0, init_scale²)` prefix of `prefix_len` rows.
pub fn init_prefix(model: &dyn ScoringModel, cfg: &SamConfig) -> Result<PrefixParameters> {
    let width = model
        .prefix_width()
        .ok_or(Error::Unsupported("prefix conditioning"))?;
    let mut rng = rng_for(cfg.seed, "prefix-init", 0);
    let values = (0..cfg.prefix_len * width)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            cfg.init_scale * z
        })
        .collect();
    PrefixParameters::from_values(cfg.prefix_len, width, values)
}

fn encode_raw(model: &dyn ScoringModel, texts: &[String]) -> Result<Vec<Encoded>> {
    texts.iter().map(|t| model.encode(t)).collect()
}

/// Full-batch prefix tuning on `train` (raw inputs, no discrete prompt).
/// History holds one entry per epoch plus the final state.
pub fn prefix_tune(
    model: &dyn ScoringModel,
    train: &LabeledSet,
    cfg: &SamConfig,
) -> Result<(PrefixParameters, Vec<HistoryEntry>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut prefix = init_prefix(model, cfg)?;
    if prefix.len() > PREFIX_FD_LIMIT && !model.has_analytic_prefix_gradient() {
        return Err(Error::PrefixTooLargeForFiniteDiff {
            entries: prefix.len(),
            limit: PREFIX_FD_LIMIT,
        });
    }
    let gold = train.label_indices(model.verbalizer())?;
    let enc = encode_raw(model, &train.texts)?;
    let (rows, cols) = (prefix.rows, prefix.cols);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let (loss, g) = prefix_loss_and_grad(model, &prefix, &enc, &gold)?;
        history.push(HistoryEntry {
            epoch,
            loss,
            grad_norm: norm(&g),
        });
        if epoch == cfg.epochs {
            break;
        }
        let mut first = Some(g);
        prefix = sam_step(
            &prefix,
            |w| match first.take() {
                Some(g) => Ok((loss, g)),
                None => prefix_loss_and_grad(
                    model,
                    &PrefixParameters {
                        rows,
                        cols,
                        values: w.to_vec(),
                    },
                    &enc,
                    &gold,
                ),
            },
            cfg,
        )?;
    }
    Ok((prefix, history))
}

/// Accuracy with `prefix` prepended to raw inputs.
pub fn prefix_accuracy(
    model: &dyn ScoringModel,
    prefix: &PrefixParameters,
    test: &LabeledSet,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let gold = test.label_indices(model.verbalizer())?;
    let mut hits = 0usize;
    for (t, &y) in test.texts.iter().zip(&gold) {
        if argmax(&model.probs_with_prefix(prefix, &model.encode(t)?)?) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

/// Planted two-minima landscape in the plane.
///
/// ```text
/// L(w) = -exp(-|w - c_s|² / (2 s²)) - exp(-(|w - c_f|² / r²)²)
/// c_s = (-1, 0), s = 0.45        sharp well: Gaussian, Hessian 1/s² ≈ 4.94 at its bottom
/// c_f = ( 1, 0), r = 0.7         flat well: super-Gaussian, zero Hessian at its bottom
/// ```
///
/// Both wells have depth 1 (up to the negligible tail of the other). At the
/// midpoint the slope points toward the sharp well, so plain descent started
/// on the bisector `x = 0` near the axis falls into it. A SAM step evaluated
/// at radius ρ inside the sharp well overshoots once `lr·ρ/s²` exceeds the
/// well's width, and the iterate is ejected toward the flat well, where the
/// curvature is too small to eject it again.
pub mod two_well {
    use super::*;

    pub const SHARP: [f64; 2] = [-1.0, 0.0];
    pub const FLAT: [f64; 2] = [1.0, 0.0];
    pub const SHARP_WIDTH: f64 = 0.45;
    pub const FLAT_RADIUS: f64 = 0.7;
    /// A point closer than this to a centre is in that basin.
    pub const BASIN_RADIUS: f64 = 0.5;

    fn d2(w: &[f64], c: [f64; 2]) -> f64 {
        (w[0] - c[0]).powi(2) + (w[1] - c[1]).powi(2)
    }

    pub fn loss(w: &[f64]) -> f64 {
        let s2 = SHARP_WIDTH * SHARP_WIDTH;
        let r2 = FLAT_RADIUS * FLAT_RADIUS;
        -(-d2(w, SHARP) / (2.0 * s2)).exp() - (-(d2(w, FLAT) / r2).powi(2)).exp()
    }

    pub fn grad(w: &[f64]) -> Vec<f64> {
        let s2 = SHARP_WIDTH * SHARP_WIDTH;
        let r2 = FLAT_RADIUS * FLAT_RADIUS;
        let gs = (-d2(w, SHARP) / (2.0 * s2)).exp() / s2;
        let u = d2(w, FLAT) / r2;
        let gf = (-u * u).exp() * 4.0 * u / r2;
        (0..2)
            .map(|i| gs * (w[i] - SHARP[i]) + gf * (w[i] - FLAT[i]))
            .collect()
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    pub enum Basin {
        Sharp,
        Flat,
        Neither,
    }

    pub fn basin(w: &[f64]) -> Basin {
        if d2(w, SHARP).sqrt() < BASIN_RADIUS {
            Basin::Sharp
        } else if d2(w, FLAT).sqrt() < BASIN_RADIUS {
            Basin::Flat
        } else {
            Basin::Neither
        }
    }

    /// Start `index` of a seeded set on the bisector, `y ∈ [-0.25, 0.25]`.
    pub fn init(seed: u64, index: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, "two-well-init", index);
        vec![0.0, rng.random_range(-0.25..=0.25)]
    }

    /// Run `epochs` steps from `w0`.
    pub fn run(w0: &[f64], cfg: &SamConfig) -> Result<Vec<f64>> {
        let mut w = w0.to_vec();
        for _ in 0..cfg.epochs {
            w = sam_update(
                &w,
                |x| Ok((loss(x), grad(x))),
                cfg.rho,
                cfg.learning_rate,
                cfg.grad_norm_floor,
                cfg.use_flatness,
            )?;
        }
        Ok(w)
    }

    /// Mean loss increase over `n` Gaussian pokes of variance `sigma2`.
    pub fn poke_sharpness(w: &[f64], sigma2: f64, n: usize, seed: u64) -> f64 {
        let base = loss(w);
        let sd = sigma2.sqrt();
        let mut total = 0.0;
        for i in 0..n {
            let mut rng = rng_for(seed, "two-well-poke", i as u64);
            let p: Vec<f64> = w
                .iter()
                .map(|x| {
                    let z: f64 = rng.sample(StandardNormal);
                    x + sd * z
                })
                .collect();
            total += loss(&p) - base;
        }
        total / n as f64
    }

    /// Step settings under which SAM and plain descent settle in different wells.
    pub fn default_config(use_flatness: bool) -> SamConfig {
        SamConfig {
            rho: 0.2,
            learning_rate: 0.25,
            epochs: 3000,
            use_flatness,
            ..SamConfig::default()
        }
    }
}

use std::io::Write;
use std::path::{Path, PathBuf};

use pflat_core::evaluation::{
    correlation_study, sweep, EvaluationReport, MetricName, StudyConfig, SweepSpec, SweepVariable,
};
use pflat_core::flat_prefix::{prefix_accuracy, prefix_tune, HistoryEntry, SamConfig};
use pflat_core::io::{
    atomic_write, cell, format_float, load_dataset, load_prompt_pool, load_verbalizer,
    render_report, Report, Table,
};
use pflat_core::metrics::{
    combined_score, loss_from_probs, mi_from_probs, pflat, prompt_probs, sensitivity,
    true_flatness, Direction, MetricReport, Provenance, FD_PARAM_LIMIT,
};
use pflat_core::model::logistic::fit_logistic_traced;
use pflat_core::model::weights::{save_model, save_prefix};
use pflat_core::model::{argmax, load_model, ScoringModel, TinyTransformer};
use pflat_core::perturb::build_sensitivity_set;
use pflat_core::prompt::{Dataset, LabeledSet, PromptCandidate, PromptPool};
use pflat_core::selection::{rank_prompts, tune_alpha, AlphaGrid, BaseMetric, TuneConfig};
use pflat_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Cli, Command, Global, Inputs, Perturb};

fn settle(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = g.seed.or(cfg.seed).unwrap_or(0);
    cfg.apply_seed(seed);
    Ok(cfg)
}

fn require(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone().or_else(|| fallback.clone()).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "--{name} is required (flag or config field {name:?})"
        ))
    })
}

fn apply_perturb(cfg: &mut RunConfig, p: &Perturb) {
    if let Some(n) = p.n_samples {
        cfg.perturbation.n_samples = n;
    }
    if let Some(s) = p.sigma2 {
        cfg.perturbation.sigma2 = s;
    }
}

fn emit<R: Report + ?Sized>(report: &R, g: &Global) -> Result<()> {
    let bytes = render_report(report, g.format)?;
    match &g.out {
        Some(p) => atomic_write(p, &bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

struct Loaded {
    model: Box<dyn ScoringModel>,
    pool: PromptPool,
}

fn load_inputs(inputs: &Inputs, cfg: &RunConfig) -> Result<Loaded> {
    let model = load_model(&require(&inputs.model, &cfg.model, "model")?)?;
    let pool = load_prompt_pool(
        &require(&inputs.pool, &cfg.pool, "pool")?,
        model.verbalizer(),
    )?;
    Ok(Loaded { model, pool })
}

fn load_labeled(path: &Path, model: &dyn ScoringModel) -> Result<LabeledSet> {
    load_dataset(path, Some(model.verbalizer()))?.labeled()
}

pub(crate) fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = settle(g)?;
    match &cli.command {
        Command::Score {
            inputs,
            perturb,
            data,
            metrics,
            alpha,
            base,
        } => {
            apply_perturb(&mut cfg, perturb);
            let l = load_inputs(inputs, &cfg)?;
            let data = load_dataset(
                &require(data, &cfg.data, "data")?,
                Some(l.model.verbalizer()),
            )?;
            let metrics = metrics.clone().or_else(|| cfg.metrics.clone());
            let alpha = alpha.or(cfg.alpha);
            emit(
                &score(&*l.model, &l.pool, &data, metrics, alpha, *base, &cfg)?,
                g,
            )
        }
        Command::Select {
            inputs,
            perturb,
            data,
            metric,
            alpha,
        } => {
            apply_perturb(&mut cfg, perturb);
            let l = load_inputs(inputs, &cfg)?;
            let data = load_dataset(
                &require(data, &cfg.data, "data")?,
                Some(l.model.verbalizer()),
            )?;
            let alpha = alpha.or(cfg.alpha).unwrap_or(0.0);
            emit(&select(&*l.model, &l.pool, &data, *metric, alpha, &cfg)?, g)
        }
        Command::TuneAlpha {
            inputs,
            perturb,
            dev,
            base,
            grid,
        } => {
            apply_perturb(&mut cfg, perturb);
            let l = load_inputs(inputs, &cfg)?;
            let dev = load_labeled(&require(dev, &cfg.dev, "dev")?, &*l.model)?;
            let grid = match grid {
                Some(v) => AlphaGrid::new(v.clone())?,
                None => cfg.grid.clone().unwrap_or_default(),
            };
            let tc = TuneConfig {
                perturbation: cfg.perturbation,
                sensitivity: cfg.sensitivity.clone(),
                divergence: cfg.divergence,
                loss_kind: cfg.loss_kind,
            };
            emit(&tune_alpha(&*l.model, &l.pool, &dev, *base, &grid, &tc)?, g)
        }
        Command::Evaluate {
            inputs,
            perturb,
            test,
            dev,
            metrics,
            alpha,
        } => {
            apply_perturb(&mut cfg, perturb);
            let l = load_inputs(inputs, &cfg)?;
            let test = load_labeled(&require(test, &cfg.test, "test")?, &*l.model)?;
            let dev = match dev.clone().or_else(|| cfg.dev.clone()) {
                Some(p) => Some(load_labeled(&p, &*l.model)?),
                None => None,
            };
            let study = study_config(&cfg, &*l.model, metrics.clone(), *alpha);
            let report: EvaluationReport =
                correlation_study(&*l.model, &l.pool, &test, &study, dev.as_ref())?;
            emit(&report, g)
        }
        Command::Sweep {
            inputs,
            test,
            dev,
            variable,
            values,
            repeats,
            metric,
            alpha,
        } => {
            let l = load_inputs(inputs, &cfg)?;
            let test = load_labeled(&require(test, &cfg.test, "test")?, &*l.model)?;
            let dev = match dev.clone().or_else(|| cfg.dev.clone()) {
                Some(p) => Some(load_labeled(&p, &*l.model)?),
                None => None,
            };
            let values = values
                .clone()
                .or_else(|| cfg.sweep.values.clone())
                .ok_or_else(|| Error::InvalidConfig("--values is required".into()))?;
            let metric = metric.or(cfg.sweep.metric).unwrap_or(MetricName::Pflat);
            let spec = SweepSpec {
                variable: variable
                    .or(cfg.sweep.variable)
                    .unwrap_or(SweepVariable::Sigma2),
                values,
                repeats: repeats.or(cfg.sweep.repeats).unwrap_or(1),
                metric,
                fixed: study_config(&cfg, &*l.model, Some(vec![metric]), *alpha),
            };
            emit(&sweep(&*l.model, &l.pool, &test, &spec, dev.as_ref())?, g)
        }
        Command::PrefixTune {
            model,
            train,
            test,
            prefix_out,
            rho,
            learning_rate,
            epochs,
            prefix_len,
            no_sam,
        } => {
            let mut sam = cfg.sam.clone();
            sam.rho = rho.unwrap_or(sam.rho);
            sam.learning_rate = learning_rate.unwrap_or(sam.learning_rate);
            sam.epochs = epochs.unwrap_or(sam.epochs);
            sam.prefix_len = prefix_len.unwrap_or(sam.prefix_len);
            if *no_sam {
                sam.use_flatness = false;
            }
            let model = load_model(&require(model, &cfg.model, "model")?)?;
            let train = load_labeled(&require(train, &cfg.train, "train")?, &*model)?;
            let test = match test.clone().or_else(|| cfg.test.clone()) {
                Some(p) => Some(load_labeled(&p, &*model)?),
                None => None,
            };
            let (prefix, history) = prefix_tune(&*model, &train, &sam)?;
            let report = PrefixReport {
                train_accuracy: prefix_accuracy(&*model, &prefix, &train)?,
                test_accuracy: test
                    .as_ref()
                    .map(|t| prefix_accuracy(&*model, &prefix, t))
                    .transpose()?,
                history,
                sam,
            };
            let rendered = render_report(&report, g.format)?;
            if let Some(p) = prefix_out {
                save_prefix(&prefix, model.backend_name(), p)?;
            }
            write_rendered(&rendered, g)
        }
        Command::FitBackend {
            train,
            verbalizer,
            backend,
            weights_out,
        } => {
            let verb = load_verbalizer(&require(verbalizer, &cfg.verbalizer, "verbalizer")?)?;
            let (model, summary): (Box<dyn ScoringModel>, FitSummary) = match backend.as_str() {
                "logistic" => {
                    let train = load_dataset(&require(train, &cfg.train, "train")?, Some(&verb))?
                        .labeled()?;
                    let (m, trace) = fit_logistic_traced(&train, &verb, &cfg.fit)?;
                    let acc = raw_accuracy(&m, &train)?;
                    let summary = FitSummary {
                        backend: m.backend_name().into(),
                        param_count: m.param_count(),
                        train_accuracy: Some(acc),
                        epochs_run: Some(trace.epochs_run),
                        final_objective: trace.objective.last().copied(),
                        final_grad_norm: Some(trace.final_grad_norm),
                    };
                    (Box::new(m), summary)
                }
                "transformer" => {
                    let tc = cfg.transformer.ok_or_else(|| {
                        Error::InvalidConfig(
                            "the transformer backend needs a \"transformer\" section in --config"
                                .into(),
                        )
                    })?;
                    let m = TinyTransformer::random(tc, verb, cfg.fit.seed)?;
                    let summary = FitSummary {
                        backend: m.backend_name().into(),
                        param_count: m.param_count(),
                        train_accuracy: None,
                        epochs_run: None,
                        final_objective: None,
                        final_grad_norm: None,
                    };
                    (Box::new(m), summary)
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown backend {other:?} (expected logistic or transformer)"
                    )))
                }
            };
            let rendered = render_report(&summary, g.format)?;
            save_model(&*model, weights_out)?;
            write_rendered(&rendered, g)
        }
    }
}

fn write_rendered(bytes: &[u8], g: &Global) -> Result<()> {
    match &g.out {
        Some(p) => atomic_write(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn study_config(
    cfg: &RunConfig,
    model: &dyn ScoringModel,
    metrics: Option<Vec<MetricName>>,
    alpha: Option<f64>,
) -> StudyConfig {
    let defaults = StudyConfig::default();
    let metrics = metrics.or_else(|| cfg.metrics.clone()).unwrap_or_else(|| {
        let fd_ok = model.has_analytic_gradient() || model.param_count() <= FD_PARAM_LIMIT;
        MetricName::ALL
            .into_iter()
            .filter(|m| fd_ok || *m != MetricName::TrueFlatness)
            .collect()
    });
    StudyConfig {
        metrics,
        perturbation: cfg.perturbation,
        sensitivity: cfg.sensitivity.clone(),
        loss_kind: cfg.loss_kind,
        divergence: cfg.divergence,
        alpha: alpha.or(cfg.alpha).unwrap_or(defaults.alpha),
    }
}

fn raw_accuracy(model: &dyn ScoringModel, set: &LabeledSet) -> Result<f64> {
    let gold = set.label_indices(model.verbalizer())?;
    let mut hits = 0usize;
    for (t, &y) in set.texts.iter().zip(&gold) {
        if argmax(&model.probs(&model.encode(t)?)?) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

#[derive(Debug, Default, Clone, Copy)]
struct Wanted {
    loss: bool,
    mi: bool,
    sen: bool,
    pflat: bool,
    true_flatness: bool,
}

impl Wanted {
    fn add(&mut self, m: MetricName) -> Result<()> {
        match m {
            MetricName::Loss => self.loss = true,
            MetricName::Mi => self.mi = true,
            MetricName::Sen => self.sen = true,
            MetricName::Pflat => self.pflat = true,
            MetricName::TrueFlatness => self.true_flatness = true,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "{:?} is a combined metric; use --alpha with --base instead",
                    other.as_str()
                )))
            }
        }
        Ok(())
    }

    fn add_base(&mut self, b: BaseMetric) {
        match b {
            BaseMetric::Loss => self.loss = true,
            BaseMetric::Mi => self.mi = true,
            BaseMetric::Sen => self.sen = true,
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Values {
    loss: Option<f64>,
    mi: Option<f64>,
    sen: Option<f64>,
    pflat: Option<f64>,
    true_flatness: Option<f64>,
}

impl Values {
    fn base(&self, b: BaseMetric) -> Option<f64> {
        match b {
            BaseMetric::Loss => self.loss,
            BaseMetric::Mi => self.mi,
            BaseMetric::Sen => self.sen,
        }
    }
}

fn compute(
    model: &dyn ScoringModel,
    p: &PromptCandidate,
    data: &Dataset,
    labeled: Option<&LabeledSet>,
    w: Wanted,
    cfg: &RunConfig,
) -> Result<Values> {
    let inputs = data.inputs();
    let mut v = Values::default();
    let needs_labels = || labeled.ok_or_else(|| data.labeled().expect_err("unlabeled dataset"));
    if w.loss || w.mi {
        let probs = prompt_probs(model, p, &inputs.texts)?;
        if w.mi {
            v.mi = Some(mi_from_probs(&probs)?);
        }
        if w.loss {
            let gold = needs_labels()?.label_indices(model.verbalizer())?;
            v.loss = Some(loss_from_probs(&probs, &gold, cfg.loss_kind)?);
        }
    }
    if w.sen {
        let set = build_sensitivity_set(p, model.verbalizer(), &cfg.sensitivity)?;
        v.sen = Some(sensitivity(model, p, &inputs, &set)?);
    }
    if w.pflat {
        v.pflat = Some(pflat(model, p, &inputs, &cfg.perturbation, cfg.divergence)?);
    }
    if w.true_flatness {
        v.true_flatness = Some(true_flatness(model, p, needs_labels()?)?);
    }
    Ok(v)
}

fn provenance(cfg: &RunConfig, alpha: Option<f64>) -> Provenance {
    Provenance {
        n_samples: cfg.perturbation.n_samples,
        sigma2: cfg.perturbation.sigma2,
        master_seed: cfg.perturbation.master_seed,
        loss_kind: cfg.loss_kind,
        divergence_kind: cfg.divergence,
        alpha,
    }
}

fn score(
    model: &dyn ScoringModel,
    pool: &PromptPool,
    data: &Dataset,
    metrics: Option<Vec<MetricName>>,
    alpha: Option<f64>,
    base: BaseMetric,
    cfg: &RunConfig,
) -> Result<Vec<MetricReport>> {
    cfg.perturbation.validate()?;
    let labeled = data.labeled().ok();
    let mut w = Wanted::default();
    match metrics {
        Some(ms) => {
            for m in ms {
                w.add(m)?;
            }
        }
        None => {
            w.mi = true;
            w.sen = true;
            w.pflat = true;
            w.loss = labeled.is_some();
        }
    }
    if let Some(a) = alpha {
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha {a} must be finite and non-negative"
            )));
        }
        w.add_base(base);
        w.pflat |= a > 0.0;
    }
    pool.prompts
        .par_iter()
        .map(|p| {
            let v = compute(model, p, data, labeled.as_ref(), w, cfg)?;
            let combined = match alpha {
                Some(a) => {
                    let b = v.base(base).expect("base metric computed");
                    Some(combined_score(
                        b,
                        base.direction(),
                        v.pflat.unwrap_or(0.0),
                        a,
                    ))
                }
                None => None,
            };
            Ok(MetricReport {
                prompt_id: p.id.clone(),
                loss: v.loss,
                mi: v.mi,
                sen: v.sen,
                pflat: v.pflat,
                true_flatness: v.true_flatness,
                combined,
                provenance: provenance(cfg, alpha),
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct SelectRow {
    prompt_id: String,
    base: f64,
    pflat: Option<f64>,
    /// Lower-is-better selection score.
    score: f64,
}

#[derive(Debug, Serialize)]
struct SelectReport {
    metric: MetricName,
    alpha: f64,
    selected: String,
    score: f64,
    /// Every prompt, best first.
    ranking: Vec<SelectRow>,
    provenance: Provenance,
}

impl Report for SelectReport {
    fn table(&self) -> Table {
        let mut t = Table::new(["rank", "prompt_id", "base", "pflat", "score"]);
        for (i, r) in self.ranking.iter().enumerate() {
            t.rows.push(vec![
                (i + 1).to_string(),
                r.prompt_id.clone(),
                format_float(r.base),
                cell(r.pflat),
                format_float(r.score),
            ]);
        }
        t
    }
}

fn select(
    model: &dyn ScoringModel,
    pool: &PromptPool,
    data: &Dataset,
    metric: MetricName,
    alpha: f64,
    cfg: &RunConfig,
) -> Result<SelectReport> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha {alpha} must be finite and non-negative"
        )));
    }
    let base = match metric {
        MetricName::Loss => Some(BaseMetric::Loss),
        MetricName::Mi => Some(BaseMetric::Mi),
        MetricName::Sen => Some(BaseMetric::Sen),
        MetricName::Pflat => None,
        other => {
            return Err(Error::InvalidConfig(format!(
                "select ranks by loss, mi, sen or pflat, not {:?}; combine with --alpha",
                other.as_str()
            )))
        }
    };
    if base.is_none() && alpha > 0.0 {
        return Err(Error::InvalidConfig(
            "--alpha needs a base metric (loss, mi or sen)".into(),
        ));
    }
    let labeled = data.labeled().ok();
    let mut w = Wanted::default();
    match base {
        Some(b) => {
            w.add_base(b);
            w.pflat = alpha > 0.0;
        }
        None => w.pflat = true,
    }
    if w.pflat {
        cfg.perturbation.validate()?;
    }
    let rows: Vec<SelectRow> = pool
        .prompts
        .par_iter()
        .map(|p| {
            let v = compute(model, p, data, labeled.as_ref(), w, cfg)?;
            let (b, score) = match base {
                Some(bm) => {
                    let b = v.base(bm).expect("base metric computed");
                    (
                        b,
                        combined_score(b, bm.direction(), v.pflat.unwrap_or(0.0), alpha),
                    )
                }
                None => {
                    let f = v.pflat.expect("pflat computed");
                    (f, f)
                }
            };
            Ok(SelectRow {
                prompt_id: p.id.clone(),
                base: b,
                pflat: v.pflat,
                score,
            })
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(String, f64)> = rows
        .iter()
        .map(|r| (r.prompt_id.clone(), r.score))
        .collect();
    let order = rank_prompts(&pairs, Direction::LowerBetter)?;
    let mut ranking = Vec::with_capacity(rows.len());
    let mut rows: Vec<Option<SelectRow>> = rows.into_iter().map(Some).collect();
    for id in &order {
        let i = pool
            .iter()
            .position(|p| &p.id == id)
            .expect("ranked id from pool");
        ranking.push(rows[i].take().expect("each prompt ranked once"));
    }
    Ok(SelectReport {
        metric,
        alpha,
        selected: order[0].clone(),
        score: ranking[0].base,
        ranking,
        provenance: provenance(cfg, Some(alpha)),
    })
}

#[derive(Debug, Serialize)]
struct PrefixReport {
    history: Vec<HistoryEntry>,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
    sam: SamConfig,
}

impl Report for PrefixReport {
    fn table(&self) -> Table {
        self.history.table()
    }
}

#[derive(Debug, Serialize)]
struct FitSummary {
    backend: String,
    param_count: usize,
    train_accuracy: Option<f64>,
    epochs_run: Option<usize>,
    final_objective: Option<f64>,
    final_grad_norm: Option<f64>,
}

impl Report for FitSummary {
    fn table(&self) -> Table {
        let mut t = Table::new([
            "backend",
            "param_count",
            "train_accuracy",
            "epochs_run",
            "final_objective",
            "final_grad_norm",
        ]);
        t.rows.push(vec![
            self.backend.clone(),
            self.param_count.to_string(),
            cell(self.train_accuracy),
            self.epochs_run.map(|e| e.to_string()).unwrap_or_default(),
            cell(self.final_objective),
            cell(self.final_grad_norm),
        ]);
        t
    }
}

//! Reading datasets, prompt pools and verbalizers; writing canonical reports.
//!
//! Datasets are JSONL (`{"text": ..., "label": ...}` per line). Pools and
//! verbalizers are single JSON documents. Reports are written as canonical
//! JSON (sorted keys, floats as `%.12g`, two-space indent, LF) or as CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::evaluation::{EvaluationReport, SweepReport};
use crate::flat_prefix::HistoryEntry;
use crate::metrics::MetricReport;
use crate::prompt::{Dataset, Example, LabeledSet, PromptCandidate, PromptPool, Verbalizer};
use crate::selection::TuneResult;

/// Significant digits in report floats.
pub const FLOAT_DIGITS: usize = 12;

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    text: Value,
    #[serde(default)]
    label: Option<String>,
}

/// Parse JSONL text. Blank lines are skipped but still counted, so error
/// line numbers match the file.
pub fn parse_dataset(src: &str, verbalizer: Option<&Verbalizer>) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(raw).map_err(|e| Error::ParseError {
            line,
            msg: e.to_string(),
        })?;
        let text = match rec.text {
            Value::String(s) => s,
            other => {
                return Err(Error::ParseError {
                    line,
                    msg: format!("\"text\" must be a string, got {other}"),
                })
            }
        };
        if text.trim().is_empty() {
            return Err(Error::EmptyText(line));
        }
        if let (Some(v), Some(l)) = (verbalizer, &rec.label) {
            if v.index_of(l).is_none() {
                return Err(Error::UnknownLabel {
                    line,
                    label: l.clone(),
                });
            }
        }
        examples.push(Example {
            text,
            label: rec.label,
        });
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset { examples })
}

pub fn load_dataset(path: &Path, verbalizer: Option<&Verbalizer>) -> Result<Dataset> {
    parse_dataset(&read_text(path)?, verbalizer)
}

fn json_error(e: serde_json::Error) -> Error {
    Error::ParseError {
        line: e.line(),
        msg: e.to_string(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolFile {
    prompts: Vec<PromptCandidate>,
}

pub fn parse_prompt_pool(src: &str, verbalizer: &Verbalizer) -> Result<PromptPool> {
    let file: PoolFile = serde_json::from_str(src).map_err(json_error)?;
    let pool = PromptPool::new(file.prompts)?;
    for p in pool.iter() {
        p.check_labels(verbalizer)?;
    }
    Ok(pool)
}

pub fn load_prompt_pool(path: &Path, verbalizer: &Verbalizer) -> Result<PromptPool> {
    parse_prompt_pool(&read_text(path)?, verbalizer)
}

/// A verbalizer file maps labels to surface tokens: `{"positive": "great"}`.
pub fn load_verbalizer(path: &Path) -> Result<Verbalizer> {
    let map: BTreeMap<String, String> =
        serde_json::from_str(&read_text(path)?).map_err(json_error)?;
    Verbalizer::new(map)
}

/// Any JSON document deserialized into `T`.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(json_error)
}

/// JSONL text of a labeled set, one `{"label", "text"}` object per line.
pub fn dataset_to_jsonl(set: &LabeledSet) -> String {
    let mut out = String::new();
    for (text, label) in set.iter() {
        let line = serde_json::json!({ "text": text, "label": label });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

pub fn write_dataset(set: &LabeledSet, path: &Path) -> Result<()> {
    atomic_write(path, dataset_to_jsonl(set).as_bytes())
}

pub fn write_prompt_pool(pool: &PromptPool, path: &Path) -> Result<()> {
    atomic_write(path, to_canonical_json(pool)?.as_bytes())
}

pub fn write_verbalizer(v: &Verbalizer, path: &Path) -> Result<()> {
    atomic_write(path, to_canonical_json(v)?.as_bytes())
}

/// C's `%.12g`: shortest of fixed or exponent notation at 12 significant
/// digits, trailing zeros removed.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{:.*e}", FLOAT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= FLOAT_DIGITS as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        let decimals = (FLOAT_DIGITS as i32 - 1 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |out: &mut String, n: usize| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => write!(out, "{u}").expect("write to String"),
            (None, Some(i)) => write!(out, "{i}").expect("write to String"),
            _ => out.push_str(&format_float(n.as_f64().expect("finite number"))),
        },
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, item) in a.iter().enumerate() {
                pad(out, indent + 2);
                write_value(out, item, indent + 2);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                pad(out, indent + 2);
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push_str(": ");
                write_value(out, &m[k.as_str()], indent + 2);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
    }
}

/// Canonical JSON text of `value`, newline-terminated.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v =
        serde_json::to_value(value).map_err(|e| Error::InvalidConfig(format!("serialize: {e}")))?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::InvalidConfig(format!(
                "unknown format {other:?} (expected json or csv)"
            ))),
        }
    }
}

/// A flat table: one header, equal-length string rows.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }
}

/// Empty cell for a missing or non-finite value.
pub fn cell(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format_float(v),
        _ => String::new(),
    }
}

/// Something `write_report` can emit in either format.
pub trait Report: Serialize {
    fn table(&self) -> Table;
}

pub fn render_report<R: Report + ?Sized>(report: &R, format: OutputFormat) -> Result<Vec<u8>> {
    match format {
        OutputFormat::Json => Ok(to_canonical_json(report)?.into_bytes()),
        OutputFormat::Csv => {
            let t = report.table();
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            let fail = |e: csv::Error| Error::Io(std::io::Error::other(e));
            w.write_record(&t.header).map_err(fail)?;
            for r in &t.rows {
                w.write_record(r).map_err(fail)?;
            }
            w.into_inner()
                .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
        }
    }
}

pub fn write_report<R: Report + ?Sized>(
    report: &R,
    path: &Path,
    format: OutputFormat,
) -> Result<()> {
    atomic_write(path, &render_report(report, format)?)
}

impl Report for [MetricReport] {
    fn table(&self) -> Table {
        let mut t = Table::new([
            "prompt_id",
            "loss",
            "mi",
            "sen",
            "pflat",
            "true_flatness",
            "combined",
        ]);
        for r in self {
            t.rows.push(vec![
                r.prompt_id.clone(),
                cell(r.loss),
                cell(r.mi),
                cell(r.sen),
                cell(r.pflat),
                cell(r.true_flatness),
                cell(r.combined),
            ]);
        }
        t
    }
}

impl Report for Vec<MetricReport> {
    fn table(&self) -> Table {
        self.as_slice().table()
    }
}

impl Report for EvaluationReport {
    fn table(&self) -> Table {
        let names: Vec<String> = self
            .config
            .metrics
            .iter()
            .map(|m| m.as_str().to_string())
            .collect();
        let mut t = Table::new(["prompt_id", "accuracy"]);
        t.header.extend(names.iter().cloned());
        for row in &self.per_prompt {
            let mut r = vec![row.prompt_id.clone(), format_float(row.accuracy)];
            r.extend(names.iter().map(|n| cell(row.metrics.get(n).copied())));
            t.rows.push(r);
        }
        t
    }
}

impl Report for SweepReport {
    fn table(&self) -> Table {
        let mut t = Table::new(["value", "repeat", "rate", "pearson"]);
        for c in &self.cells {
            t.rows.push(vec![
                format_float(c.value),
                c.repeat.to_string(),
                cell(c.rate),
                cell(c.pearson),
            ]);
        }
        t
    }
}

impl Report for TuneResult {
    fn table(&self) -> Table {
        let mut t = Table::new(["alpha", "selected", "dev_accuracy"]);
        for o in &self.per_alpha {
            t.rows.push(vec![
                format_float(o.alpha),
                o.selected.clone(),
                format_float(o.dev_accuracy),
            ]);
        }
        t
    }
}

impl Report for Vec<HistoryEntry> {
    fn table(&self) -> Table {
        let mut t = Table::new(["epoch", "loss", "grad_norm"]);
        for h in self {
            t.rows.push(vec![
                h.epoch.to_string(),
                format_float(h.loss),
                format_float(h.grad_norm),
            ]);
        }
        t
    }
}

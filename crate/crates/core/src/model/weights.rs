//! Weight files.
//!
//! Layout: the magic bytes `PFLT1`, one line of compact JSON
//!
//! ```text
//! {"backend":..,"config":{..},"verbalizer":{..},"tensors":[{"name":..,"shape":[..],"offset":..}]}
//! ```
//!
//! terminated by `\n`, then the tensors as little-endian `f32` in header order.
//! `offset` is the byte offset of a tensor from the start of the payload.
//! Parameters live in memory as `f64`; saving narrows to `f32`, so only a
//! loaded model (whose values are already `f32`-exact) round-trips bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::logistic::LogisticBag;
use super::transformer::{TinyTransformer, TransformerConfig};
use super::{PrefixParameters, ScoringModel};
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::prompt::Verbalizer;

pub const MAGIC: &[u8; 5] = b"PFLT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub backend: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbalizer: Option<Verbalizer>,
    pub tensors: Vec<TensorEntry>,
}

/// Decoded weight file; tensor data in header order, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub header: Header,
    pub data: Vec<Vec<f64>>,
}

impl WeightFile {
    /// Build from named tensors, assigning contiguous offsets.
    pub fn new(
        backend: &str,
        config: serde_json::Value,
        verbalizer: Option<Verbalizer>,
        tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
    ) -> Self {
        let mut entries = Vec::with_capacity(tensors.len());
        let mut data = Vec::with_capacity(tensors.len());
        let mut offset = 0;
        for (name, shape, values) in tensors {
            debug_assert_eq!(shape.iter().product::<usize>(), values.len());
            entries.push(TensorEntry {
                name,
                shape,
                offset,
            });
            offset += 4 * values.len();
            data.push(values);
        }
        Self {
            header: Header {
                backend: backend.to_string(),
                config,
                verbalizer,
                tensors: entries,
            },
            data,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.header
            .tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.data[i].as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_string(&self.header)
            .map_err(|e| Error::FormatError(format!("header: {e}")))?;
        let payload: usize = self.data.iter().map(|d| 4 * d.len()).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 1 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for d in &self.data {
            for &v in d {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| Error::FormatError("bad magic".into()))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::FormatError("missing header terminator".into()))?;
        let header: Header = serde_json::from_slice(&rest[..nl])
            .map_err(|e| Error::FormatError(format!("header: {e}")))?;
        let payload = &rest[nl + 1..];
        let mut data = Vec::with_capacity(header.tensors.len());
        let mut expect = 0;
        for t in &header.tensors {
            if t.offset != expect {
                return Err(Error::FormatError(format!(
                    "tensor {} at offset {}, expected {}",
                    t.name, t.offset, expect
                )));
            }
            let n: usize = t.shape.iter().product();
            let end = t.offset + 4 * n;
            if end > payload.len() {
                return Err(Error::FormatError(format!(
                    "truncated payload in tensor {}",
                    t.name
                )));
            }
            let values = payload[t.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            data.push(values);
            expect = end;
        }
        if expect != payload.len() {
            return Err(Error::FormatError(format!(
                "{} trailing payload bytes",
                payload.len() - expect
            )));
        }
        Ok(Self { header, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Write via a temporary file in the same directory, then rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LogisticHeaderConfig {
    vocab_size: usize,
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

pub fn logistic_to_file(m: &LogisticBag) -> WeightFile {
    let c = m.labels();
    let v = m.vocab_size();
    WeightFile::new(
        "logistic_bag",
        json(&LogisticHeaderConfig { vocab_size: v }),
        Some(m.verbalizer().clone()),
        vec![
            ("W".to_string(), vec![c, v], m.weights().to_vec()),
            ("b".to_string(), vec![c], m.bias().to_vec()),
        ],
    )
}

pub fn transformer_to_file(m: &TinyTransformer) -> WeightFile {
    let mut at = 0;
    let params = m.params();
    let tensors = m
        .config()
        .tensor_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let t = (name, shape, params[at..at + n].to_vec());
            at += n;
            t
        })
        .collect();
    WeightFile::new(
        "transformer",
        json(m.config()),
        Some(m.verbalizer().clone()),
        tensors,
    )
}

pub fn save_logistic(m: &LogisticBag, path: &Path) -> Result<()> {
    logistic_to_file(m).write(path)
}

pub fn save_transformer(m: &TinyTransformer, path: &Path) -> Result<()> {
    transformer_to_file(m).write(path)
}

fn take_verbalizer(wf: &WeightFile) -> Result<Verbalizer> {
    wf.header
        .verbalizer
        .clone()
        .ok_or_else(|| Error::FormatError("header has no verbalizer".into()))
}

fn logistic_from_file(wf: &WeightFile) -> Result<LogisticBag> {
    let cfg: LogisticHeaderConfig = serde_json::from_value(wf.header.config.clone())
        .map_err(|e| Error::FormatError(format!("config: {e}")))?;
    let verb = take_verbalizer(wf)?;
    let c = verb.len();
    let w = wf
        .tensor("W")
        .ok_or_else(|| Error::FormatError("missing tensor W".into()))?;
    let b = wf
        .tensor("b")
        .ok_or_else(|| Error::FormatError("missing tensor b".into()))?;
    if w.len() != c * cfg.vocab_size || b.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "W/b sizes {}/{} do not match {c} labels x {} buckets",
            w.len(),
            b.len(),
            cfg.vocab_size
        )));
    }
    LogisticBag::from_weights(verb, cfg.vocab_size, w, b)
}

fn transformer_from_file(
    wf: &WeightFile,
    expected: Option<&TransformerConfig>,
) -> Result<TinyTransformer> {
    let cfg: TransformerConfig = serde_json::from_value(wf.header.config.clone())
        .map_err(|e| Error::FormatError(format!("config: {e}")))?;
    if let Some(e) = expected {
        if *e != cfg {
            return Err(Error::ShapeMismatch(format!(
                "header config {cfg:?} vs expected {e:?}"
            )));
        }
    }
    let shapes = cfg.tensor_shapes();
    if shapes.len() != wf.header.tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tensors in file, {} expected",
            wf.header.tensors.len(),
            shapes.len()
        )));
    }
    let mut params = Vec::with_capacity(cfg.param_count());
    for ((name, shape), (entry, data)) in shapes.iter().zip(wf.header.tensors.iter().zip(&wf.data))
    {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::ShapeMismatch(format!(
                "tensor {} {:?} where {} {:?} expected",
                entry.name, entry.shape, name, shape
            )));
        }
        params.extend_from_slice(data);
    }
    TinyTransformer::from_params(cfg, take_verbalizer(wf)?, params)
}

/// Load a transformer and check its header against `cfg`.
pub fn load_transformer(path: &Path, cfg: &TransformerConfig) -> Result<TinyTransformer> {
    let wf = WeightFile::read(path)?;
    if wf.header.backend != "transformer" {
        return Err(Error::FormatError(format!(
            "backend {:?} is not a transformer",
            wf.header.backend
        )));
    }
    transformer_from_file(&wf, Some(cfg))
}

pub fn load_logistic(path: &Path) -> Result<LogisticBag> {
    let wf = WeightFile::read(path)?;
    if wf.header.backend != "logistic_bag" {
        return Err(Error::FormatError(format!(
            "backend {:?} is not logistic_bag",
            wf.header.backend
        )));
    }
    logistic_from_file(&wf)
}

/// Load either backend, dispatching on the header's backend tag.
pub fn load_model(path: &Path) -> Result<Box<dyn ScoringModel>> {
    let wf = WeightFile::read(path)?;
    match wf.header.backend.as_str() {
        "logistic_bag" => Ok(Box::new(logistic_from_file(&wf)?)),
        "transformer" => Ok(Box::new(transformer_from_file(&wf, None)?)),
        other => Err(Error::FormatError(format!("unknown backend {other:?}"))),
    }
}

/// Save any bundled backend.
pub fn save_model(model: &dyn ScoringModel, path: &Path) -> Result<()> {
    let any = model.as_any();
    if let Some(m) = any.downcast_ref::<LogisticBag>() {
        save_logistic(m, path)
    } else if let Some(m) = any.downcast_ref::<TinyTransformer>() {
        save_transformer(m, path)
    } else {
        Err(Error::FormatError(format!(
            "cannot save backend {:?}",
            model.backend_name()
        )))
    }
}

pub fn save_prefix(prefix: &PrefixParameters, backend: &str, path: &Path) -> Result<()> {
    WeightFile::new(
        "prefix",
        serde_json::json!({ "backend": backend }),
        None,
        vec![(
            "prefix".to_string(),
            vec![prefix.rows, prefix.cols],
            prefix.values.clone(),
        )],
    )
    .write(path)
}

pub fn load_prefix(path: &Path) -> Result<PrefixParameters> {
    let wf = WeightFile::read(path)?;
    let entry = wf
        .header
        .tensors
        .iter()
        .find(|t| t.name == "prefix")
        .ok_or_else(|| Error::FormatError("missing tensor prefix".into()))?;
    if entry.shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "prefix shape {:?}",
            entry.shape
        )));
    }
    let (rows, cols) = (entry.shape[0], entry.shape[1]);
    PrefixParameters::from_values(rows, cols, wf.tensor("prefix").unwrap().to_vec())
}

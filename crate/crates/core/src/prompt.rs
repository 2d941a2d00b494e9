//! Prompts, verbalizers and datasets.
//!
//! A prompt is rendered in front of every input with a fixed template:
//!
//! ```text
//! {instruction}\n\n
//! {demo text}\n{verbalizer token}\n\n      (once per demonstration)
//! {input}\n
//! ```

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label name to surface token. Labels are kept in lexicographic order, which
/// is also the order of every probability vector in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<String, String>",
    into = "BTreeMap<String, String>"
)]
pub struct Verbalizer {
    labels: Vec<String>,
    tokens: Vec<String>,
}

impl Verbalizer {
    pub fn new(entries: BTreeMap<String, String>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidVerbalizer(format!(
                "need at least 2 labels, got {}",
                entries.len()
            )));
        }
        let mut seen = HashSet::new();
        for (label, token) in &entries {
            if token.trim().is_empty() {
                return Err(Error::InvalidVerbalizer(format!(
                    "label {label:?} has an empty token"
                )));
            }
            if !seen.insert(token.clone()) {
                return Err(Error::InvalidVerbalizer(format!(
                    "token {token:?} used twice"
                )));
            }
        }
        let (labels, tokens) = entries.into_iter().unzip();
        Ok(Self { labels, tokens })
    }

    pub fn from_pairs<I, L, T>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (L, T)>,
        L: Into<String>,
        T: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (l, t) in pairs {
            let l = l.into();
            if map.insert(l.clone(), t.into()).is_some() {
                return Err(Error::InvalidVerbalizer(format!("label {l:?} repeated")));
            }
        }
        Self::new(map)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn token_for(&self, label: &str) -> Option<&str> {
        self.index_of(label).map(|i| self.tokens[i].as_str())
    }
}

impl TryFrom<BTreeMap<String, String>> for Verbalizer {
    type Error = Error;
    fn try_from(m: BTreeMap<String, String>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<Verbalizer> for BTreeMap<String, String> {
    fn from(v: Verbalizer) -> Self {
        v.labels.into_iter().zip(v.tokens).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub text: String,
    pub label: String,
}

/// An instruction plus ordered demonstrations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub demos: Vec<Demo>,
}

impl PromptCandidate {
    pub fn new(id: impl Into<String>, instruction: impl Into<String>, demos: Vec<Demo>) -> Self {
        Self {
            id: id.into(),
            instruction: instruction.into(),
            demos,
        }
    }

    /// The empty prompt: no instruction, no demonstrations.
    pub fn empty(id: impl Into<String>) -> Self {
        Self::new(id, "", Vec::new())
    }

    /// Everything the template places before the input text.
    pub fn render_prefix(&self, verbalizer: &Verbalizer) -> Result<String> {
        let mut out = String::with_capacity(self.instruction.len() + 64 * self.demos.len());
        out.push_str(&self.instruction);
        out.push_str("\n\n");
        for demo in &self.demos {
            let token = verbalizer
                .token_for(&demo.label)
                .ok_or_else(|| Error::UnknownLabel {
                    line: 0,
                    label: demo.label.clone(),
                })?;
            out.push_str(&demo.text);
            out.push('\n');
            out.push_str(token);
            out.push_str("\n\n");
        }
        Ok(out)
    }

    pub fn render(&self, verbalizer: &Verbalizer, input: &str) -> Result<String> {
        let mut out = self.render_prefix(verbalizer)?;
        out.push_str(input);
        out.push('\n');
        Ok(out)
    }

    pub fn check_labels(&self, verbalizer: &Verbalizer) -> Result<()> {
        for d in &self.demos {
            if verbalizer.index_of(&d.label).is_none() {
                return Err(Error::UnknownLabel {
                    line: 0,
                    label: d.label.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Ordered pool of candidates with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPool {
    pub prompts: Vec<PromptCandidate>,
}

impl PromptPool {
    pub fn new(prompts: Vec<PromptCandidate>) -> Result<Self> {
        if prompts.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "a prompt pool needs at least 2 prompts, got {}",
                prompts.len()
            )));
        }
        let mut ids = HashSet::new();
        for p in &prompts {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::DuplicateId(p.id.clone()));
            }
        }
        Ok(Self { prompts })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PromptCandidate> {
        self.prompts.iter()
    }

    pub fn get(&self, id: &str) -> Option<&PromptCandidate> {
        self.prompts.iter().find(|p| p.id == id)
    }
}

/// One input instance, optionally labeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    #[serde(default)]
    pub label: Option<String>,
}

/// Labeled examples (paired inputs and gold labels).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledSet {
    pub texts: Vec<String>,
    pub labels: Vec<String>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S, L>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, L)>,
        S: Into<String>,
        L: Into<String>,
    {
        let (texts, labels) = pairs.into_iter().map(|(t, l)| (t.into(), l.into())).unzip();
        Self { texts, labels }
    }

    pub fn push(&mut self, text: impl Into<String>, label: impl Into<String>) {
        self.texts.push(text.into());
        self.labels.push(label.into());
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.texts
            .iter()
            .map(String::as_str)
            .zip(self.labels.iter().map(String::as_str))
    }

    pub fn inputs(&self) -> InputSet {
        InputSet {
            texts: self.texts.clone(),
        }
    }

    /// Gold label indices under `verbalizer`.
    pub fn label_indices(&self, verbalizer: &Verbalizer) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                verbalizer.index_of(l).ok_or_else(|| Error::UnknownLabel {
                    line: i + 1,
                    label: l.clone(),
                })
            })
            .collect()
    }

    /// Number of examples labeled `label`.
    pub fn count_label(&self, label: &str) -> usize {
        self.labels.iter().filter(|l| *l == label).count()
    }
}

/// Unlabeled inputs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InputSet {
    pub texts: Vec<String>,
}

impl InputSet {
    pub fn new(texts: Vec<String>) -> Self {
        Self { texts }
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

/// Examples as read from disk: labels optional.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn inputs(&self) -> InputSet {
        InputSet {
            texts: self.examples.iter().map(|e| e.text.clone()).collect(),
        }
    }

    /// Fails on the first unlabeled example.
    pub fn labeled(&self) -> Result<LabeledSet> {
        let mut out = LabeledSet::new();
        for (i, e) in self.examples.iter().enumerate() {
            match &e.label {
                Some(l) => out.push(e.text.clone(), l.clone()),
                None => {
                    return Err(Error::UnknownLabel {
                        line: i + 1,
                        label: "<missing>".into(),
                    })
                }
            }
        }
        Ok(out)
    }
}

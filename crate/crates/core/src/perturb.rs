//! Parameter and prompt perturbations.
//!
//! Gaussian parameter noise feeds pFlat; demo reorderings and one-token
//! instruction edits make up the perturbed prompt set used by sensitivity.
//! Every draw is keyed through [`crate::seed::derive_seed`].

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::prompt::{PromptCandidate, Verbalizer};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub n_samples: usize,
    pub sigma2: f64,
    pub master_seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            n_samples: 5,
            sigma2: 1e-4,
            master_seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma2 {} must be finite and >= 0",
                self.sigma2
            )));
        }
        Ok(())
    }
}

/// The `sample_index`-th Gaussian perturbation, i.i.d. `N(0, sigma2)` per
/// component. Depends only on `(master_seed, sample_index, dim)`.
pub fn sample_gaussian(dim: usize, cfg: &PerturbationConfig, sample_index: u64) -> ParameterVector {
    let mut v = vec![0.0; dim];
    if cfg.sigma2 > 0.0 {
        let sd = cfg.sigma2.sqrt();
        let mut rng = rng_for(cfg.master_seed, "gaussian", sample_index);
        for x in v.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x = sd * z;
        }
    }
    ParameterVector::from(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    DropToken,
    SwapAdjacent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivitySetConfig {
    pub k_permutations: usize,
    pub m_edits: usize,
    pub edit_kinds: Vec<EditKind>,
    pub seed: u64,
}

impl Default for SensitivitySetConfig {
    fn default() -> Self {
        Self {
            k_permutations: 8,
            m_edits: 8,
            edit_kinds: vec![EditKind::DropToken, EditKind::SwapAdjacent],
            seed: 0,
        }
    }
}

/// `n! - 1`, saturating.
fn other_orderings(n: usize) -> usize {
    (2..=n)
        .try_fold(1usize, |acc, i| acc.checked_mul(i))
        .map_or(usize::MAX, |f| f - 1)
}

/// Next permutation in lexicographic order; false once `perm` was the last.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

fn reorder(p: &PromptCandidate, perm: &[usize], tag: usize) -> PromptCandidate {
    PromptCandidate {
        id: format!("{}~perm{tag}", p.id),
        instruction: p.instruction.clone(),
        demos: perm.iter().map(|&i| p.demos[i].clone()).collect(),
    }
}

/// `k` distinct demo reorderings of `p`, none equal to its own order.
///
/// Asking for every other ordering returns them all in lexicographic order of
/// the index permutation; otherwise orderings are sampled without replacement.
pub fn demo_permutations(p: &PromptCandidate, k: usize, seed: u64) -> Result<Vec<PromptCandidate>> {
    let n = p.demos.len();
    if n < 2 {
        return Err(Error::TooFewDemos(p.id.clone()));
    }
    let available = other_orderings(n);
    if k > available {
        return Err(Error::NotEnoughOrderings {
            requested: k,
            available,
        });
    }
    let identity: Vec<usize> = (0..n).collect();
    let mut perms: Vec<Vec<usize>> = Vec::with_capacity(k);
    if k == available || available <= 5040 {
        let mut cur = identity.clone();
        let mut all = Vec::with_capacity(available);
        while next_permutation(&mut cur) {
            all.push(cur.clone());
        }
        if k < available {
            let mut rng = rng_for(seed, "demo-permutations", 0);
            all.shuffle(&mut rng);
            all.truncate(k);
        }
        perms = all;
    } else {
        let mut rng = rng_for(seed, "demo-permutations", 0);
        let mut seen = HashSet::new();
        seen.insert(identity.clone());
        while perms.len() < k {
            let mut cand = identity.clone();
            cand.shuffle(&mut rng);
            if seen.insert(cand.clone()) {
                perms.push(cand);
            }
        }
    }
    Ok(perms
        .iter()
        .enumerate()
        .map(|(i, perm)| reorder(p, perm, i))
        .collect())
}

/// Apply one edit to whitespace-separated `tokens` at `at`.
pub fn apply_edit(tokens: &[&str], kind: EditKind, at: usize) -> String {
    let mut t: Vec<&str> = tokens.to_vec();
    match kind {
        EditKind::DropToken => {
            t.remove(at);
        }
        EditKind::SwapAdjacent => t.swap(at, at + 1),
    }
    t.join(" ")
}

/// `m` single-edit variants of the instruction. Edit `i` draws its kind and
/// position from its own seeded stream.
pub fn instruction_edits(
    p: &PromptCandidate,
    m: usize,
    kinds: &[EditKind],
    seed: u64,
) -> Result<Vec<PromptCandidate>> {
    let tokens: Vec<&str> = p.instruction.split_whitespace().collect();
    if tokens.len() < 2 {
        return Err(Error::InstructionTooShort(tokens.len()));
    }
    if m > 0 && kinds.is_empty() {
        return Err(Error::InvalidConfig("no edit kinds given".into()));
    }
    Ok((0..m)
        .map(|i| {
            let mut rng = rng_for(seed, "instruction-edit", i as u64);
            let kind = kinds[rng.random_range(0..kinds.len())];
            let at = match kind {
                EditKind::DropToken => rng.random_range(0..tokens.len()),
                EditKind::SwapAdjacent => rng.random_range(0..tokens.len() - 1),
            };
            PromptCandidate {
                id: format!("{}~edit{i}", p.id),
                instruction: apply_edit(&tokens, kind, at),
                demos: p.demos.clone(),
            }
        })
        .collect())
}

/// Reorderings followed by instruction edits, deduplicated by rendered text
/// and with anything rendering like `p` itself removed.
pub fn build_sensitivity_set(
    p: &PromptCandidate,
    verbalizer: &Verbalizer,
    cfg: &SensitivitySetConfig,
) -> Result<Vec<PromptCandidate>> {
    if cfg.k_permutations + cfg.m_edits == 0 {
        return Err(Error::InvalidConfig(
            "sensitivity set needs k_permutations + m_edits >= 1".into(),
        ));
    }
    let mut candidates = Vec::with_capacity(cfg.k_permutations + cfg.m_edits);
    if cfg.k_permutations > 0 {
        candidates.extend(demo_permutations(p, cfg.k_permutations, cfg.seed)?);
    }
    if cfg.m_edits > 0 {
        candidates.extend(instruction_edits(
            p,
            cfg.m_edits,
            &cfg.edit_kinds,
            cfg.seed,
        )?);
    }
    let mut seen = HashSet::new();
    seen.insert(p.render_prefix(verbalizer)?);
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        if seen.insert(c.render_prefix(verbalizer)?) {
            out.push(c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Demo;

    fn prompt(n: usize) -> PromptCandidate {
        let demos = (0..n)
            .map(|i| Demo {
                text: format!("demo {i}"),
                label: if i % 2 == 0 { "pos" } else { "neg" }.into(),
            })
            .collect();
        PromptCandidate::new("p", "classify the sentiment", demos)
    }

    fn verb() -> Verbalizer {
        Verbalizer::from_pairs([("neg", "bad"), ("pos", "good")]).unwrap()
    }

    #[test]
    fn zero_variance_is_zero() {
        let cfg = PerturbationConfig {
            sigma2: 0.0,
            ..Default::default()
        };
        assert!(sample_gaussian(17, &cfg, 3)
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_is_keyed_by_index() {
        let cfg = PerturbationConfig {
            master_seed: 11,
            ..Default::default()
        };
        let a = sample_gaussian(50, &cfg, 2);
        let _ = sample_gaussian(50, &cfg, 0);
        assert_eq!(a, sample_gaussian(50, &cfg, 2));
        assert_ne!(a, sample_gaussian(50, &cfg, 1));
    }

    #[test]
    fn lexicographic_successor() {
        let mut p = vec![0, 1, 2];
        let mut seen = vec![p.clone()];
        while next_permutation(&mut p) {
            seen.push(p.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
    }

    #[test]
    fn exhaustive_three_demos() {
        let p = prompt(3);
        let perms = demo_permutations(&p, 5, 0).unwrap();
        assert_eq!(perms.len(), 5);
        let orders: HashSet<Vec<String>> = perms
            .iter()
            .map(|q| q.demos.iter().map(|d| d.text.clone()).collect())
            .collect();
        assert_eq!(orders.len(), 5);
        assert!(!orders.contains(&p.demos.iter().map(|d| d.text.clone()).collect::<Vec<_>>()));
    }

    #[test]
    fn two_demos_forced_swap() {
        let p = prompt(2);
        let perms = demo_permutations(&p, 1, 9).unwrap();
        assert_eq!(perms[0].demos, vec![p.demos[1].clone(), p.demos[0].clone()]);
    }

    #[test]
    fn too_many_orderings() {
        assert!(matches!(
            demo_permutations(&prompt(3), 6, 0),
            Err(Error::NotEnoughOrderings {
                requested: 6,
                available: 5
            })
        ));
        assert!(matches!(
            demo_permutations(&prompt(1), 1, 0),
            Err(Error::TooFewDemos(_))
        ));
    }

    #[test]
    fn single_deletion_and_forced_swap() {
        assert_eq!(
            apply_edit(&["classify", "the", "sentiment"], EditKind::DropToken, 1),
            "classify sentiment"
        );
        let p = PromptCandidate::new("ab", "a b", vec![]);
        let e = instruction_edits(&p, 3, &[EditKind::SwapAdjacent], 4).unwrap();
        assert!(e.iter().all(|q| q.instruction == "b a"));
    }

    #[test]
    fn short_instruction_rejected() {
        let p = PromptCandidate::new("x", "classify", vec![]);
        assert!(matches!(
            instruction_edits(&p, 1, &[EditKind::DropToken], 0),
            Err(Error::InstructionTooShort(1))
        ));
    }

    #[test]
    fn edits_only_set() {
        let p = PromptCandidate::new("x", "one two three four five six", prompt(3).demos);
        let cfg = SensitivitySetConfig {
            k_permutations: 0,
            m_edits: 3,
            edit_kinds: vec![EditKind::DropToken],
            seed: 1,
        };
        let set = build_sensitivity_set(&p, &verb(), &cfg).unwrap();
        let edits = instruction_edits(&p, 3, &[EditKind::DropToken], 1).unwrap();
        let uniq: HashSet<_> = edits.iter().map(|e| e.instruction.clone()).collect();
        assert_eq!(set.len(), uniq.len());
        assert!(set.iter().all(|q| q.demos == p.demos));
    }

    #[test]
    fn colliding_edits_deduplicated() {
        let p = PromptCandidate::new("x", "a b", prompt(2).demos);
        let cfg = SensitivitySetConfig {
            k_permutations: 0,
            m_edits: 4,
            edit_kinds: vec![EditKind::SwapAdjacent],
            seed: 0,
        };
        let set = build_sensitivity_set(&p, &verb(), &cfg).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn empty_config_rejected() {
        let cfg = SensitivitySetConfig {
            k_permutations: 0,
            m_edits: 0,
            ..Default::default()
        };
        assert!(build_sensitivity_set(&prompt(3), &verb(), &cfg).is_err());
    }
}

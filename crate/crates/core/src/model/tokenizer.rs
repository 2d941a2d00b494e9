//! Deterministic tokenizers.
//!
//! Text is lowercased and split into pieces: maximal runs of alphanumeric
//! characters, plus every other non-whitespace character on its own. The
//! hashing tokenizer maps each piece to `fnv1a64(piece) % vocab_size`; the
//! byte tokenizer emits raw UTF-8 bytes with a space between pieces, except
//! that verbalizer tokens get reserved ids `256..256 + labels`.

use crate::seed::fnv1a64;

pub type TokenSequence = Vec<u32>;

/// Lowercased pieces of `text`.
pub fn pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_lowercase().collect());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashTokenizer {
    pub vocab_size: usize,
}

impl HashTokenizer {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }

    pub fn bucket(&self, piece: &str) -> u32 {
        (fnv1a64(piece.as_bytes()) % self.vocab_size as u64) as u32
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        pieces(text).iter().map(|p| self.bucket(p)).collect()
    }
}

pub const BYTE_VOCAB: usize = 256;
const SPACE: u32 = b' ' as u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteTokenizer {
    /// Verbalizer tokens split into pieces, indexed by label position.
    reserved: Vec<Vec<String>>,
}

impl ByteTokenizer {
    pub fn new<S: AsRef<str>>(verbalizer_tokens: &[S]) -> Self {
        Self {
            reserved: verbalizer_tokens
                .iter()
                .map(|t| pieces(t.as_ref()))
                .collect(),
        }
    }

    pub fn reserved_id(&self, label_index: usize) -> u32 {
        (BYTE_VOCAB + label_index) as u32
    }

    pub fn vocab_size(&self) -> usize {
        BYTE_VOCAB + self.reserved.len()
    }

    /// Longest reserved token matching the pieces at `at`.
    fn match_reserved(&self, ps: &[String], at: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for (i, r) in self.reserved.iter().enumerate() {
            if r.is_empty() || at + r.len() > ps.len() {
                continue;
            }
            if ps[at..at + r.len()] == r[..] && best.is_none_or(|(_, n)| r.len() > n) {
                best = Some((i, r.len()));
            }
        }
        best
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let ps = pieces(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < ps.len() {
            if !out.is_empty() {
                out.push(SPACE);
            }
            if let Some((label, n)) = self.match_reserved(&ps, i) {
                out.push(self.reserved_id(label));
                i += n;
            } else {
                out.extend(ps[i].bytes().map(u32::from));
                i += 1;
            }
        }
        out
    }
}

//! Katz back-off trigram language model over arbitrary string symbols.
//!
//! Used twice: over POS tags to rank partial tag-lattice paths, and over
//! words as the stand-in for the downstream parser when scoring lattice
//! paths and repair offsets. All scores are natural-log probabilities.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smoothing::{check_discount, SmoothingError};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NgramError {
    #[error("cannot train a language model on an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error("malformed trigram counts: {0}")]
    BadCounts(String),
}

/// Trigram counts keyed by `(h2, h1, w)` symbol strings.
pub type SymbolTrigrams = BTreeMap<(String, String, String), u64>;

/// Counts the trigrams of `<s> <s> seq </s>`-padded sequences.
pub fn count_trigrams<S: AsRef<str>>(sequences: &[Vec<S>]) -> SymbolTrigrams {
    let mut counts = SymbolTrigrams::new();
    for seq in sequences {
        let (mut u, mut v) = (BOS, BOS);
        for w in seq.iter().map(AsRef::as_ref).chain([EOS]) {
            *counts
                .entry((u.to_string(), v.to_string(), w.to_string()))
                .or_default() += 1;
            (u, v) = (v, w);
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    seen: HashMap<u32, f64>,
    alpha: f64,
}

/// Serialized form: the raw counts. Probabilities are re-derived on load,
/// which is deterministic, so a reloaded model scores bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigramCounts {
    pub discount: f64,
    /// Symbols with ids `3..`; ids 0..3 are `<s>`, `</s>`, `<unk>`.
    pub vocab: Vec<String>,
    pub trigrams: Vec<(u32, u32, u32, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrigramCounts", into = "TrigramCounts")]
pub struct TrigramLM {
    discount: f64,
    symbols: Vec<String>,
    index: HashMap<String, u32>,
    trigram_counts: BTreeMap<(u32, u32, u32), u64>,
    unigram: Vec<f64>,
    bigram: HashMap<u32, Row>,
    trigram: HashMap<(u32, u32), Row>,
}

impl TryFrom<TrigramCounts> for TrigramLM {
    type Error = NgramError;

    fn try_from(c: TrigramCounts) -> Result<Self, NgramError> {
        let n = c.vocab.len() as u32 + 3;
        let mut counts = BTreeMap::new();
        for (u, v, w, k) in c.trigrams {
            if u >= n || v >= n || w >= n || w == BOS_ID || k == 0 {
                return Err(NgramError::BadCounts(format!("entry ({u},{v},{w},{k})")));
            }
            *counts.entry((u, v, w)).or_default() += k;
        }
        Self::from_counts(c.vocab, counts, c.discount)
    }
}

impl From<TrigramLM> for TrigramCounts {
    fn from(lm: TrigramLM) -> Self {
        TrigramCounts {
            discount: lm.discount,
            vocab: lm.symbols[3..].to_vec(),
            trigrams: lm
                .trigram_counts
                .iter()
                .map(|(&(u, v, w), &k)| (u, v, w, k))
                .collect(),
        }
    }
}

impl TrigramLM {
    /// Trains on `<s> <s> seq </s>`-padded sequences.
    pub fn train<S: AsRef<str>>(sequences: &[Vec<S>], discount: f64) -> Result<Self, NgramError> {
        if sequences.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        Self::from_symbol_counts(&count_trigrams(sequences), discount)
    }

    /// Builds the model from trigram counts keyed by symbol strings, as
    /// produced by [`count_trigrams`].
    pub fn from_symbol_counts(counts: &SymbolTrigrams, discount: f64) -> Result<Self, NgramError> {
        if counts.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        check_discount(discount)?;
        let vocab: BTreeSet<&str> = counts
            .keys()
            .flat_map(|(u, v, w)| [u.as_str(), v.as_str(), w.as_str()])
            .filter(|s| ![BOS, EOS, UNK].contains(s))
            .collect();
        let vocab: Vec<String> = vocab.into_iter().map(str::to_string).collect();
        let index = Self::build_index(&vocab);
        let mut ids: BTreeMap<(u32, u32, u32), u64> = BTreeMap::new();
        for ((u, v, w), &k) in counts {
            if w == BOS {
                return Err(NgramError::BadCounts("<s> used as an outcome".into()));
            }
            *ids.entry((index[u], index[v], index[w])).or_default() += k;
        }
        Self::from_counts(vocab, ids, discount)
    }

    fn build_index(vocab: &[String]) -> HashMap<String, u32> {
        [BOS, EOS, UNK]
            .iter()
            .map(|s| s.to_string())
            .chain(vocab.iter().cloned())
            .enumerate()
            .map(|(i, s)| (s, i as u32))
            .collect()
    }

    fn from_counts(
        vocab: Vec<String>,
        trigram_counts: BTreeMap<(u32, u32, u32), u64>,
        discount: f64,
    ) -> Result<Self, NgramError> {
        check_discount(discount)?;
        let index = Self::build_index(&vocab);
        if index.len() != vocab.len() + 3 {
            return Err(NgramError::BadCounts("duplicate or reserved vocabulary symbol".into()));
        }
        let symbols: Vec<String> = [BOS, EOS, UNK]
            .iter()
            .map(|s| s.to_string())
            .chain(vocab)
            .collect();
        let n = symbols.len();

        let mut uni_counts = vec![0u64; n];
        let mut bi_counts: BTreeMap<u32, BTreeMap<u32, u64>> = BTreeMap::new();
        let mut tri_counts: BTreeMap<(u32, u32), BTreeMap<u32, u64>> = BTreeMap::new();
        for (&(u, v, w), &k) in &trigram_counts {
            uni_counts[w as usize] += k;
            *bi_counts.entry(v).or_default().entry(w).or_default() += k;
            *tri_counts.entry((u, v)).or_default().entry(w).or_default() += k;
        }

        // Unigram against uniform over the outcome symbols (everything but <s>).
        let outcomes = (n - 1) as f64;
        let uniform: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { 1.0 / outcomes }).collect();
        let uni_row = smooth_row(&to_dense(&uni_counts), &uniform, discount);
        let unigram: Vec<f64> = (0..n).map(|i| row_prob(&uni_row, i as u32, uniform[i])).collect();

        let mut bigram = HashMap::new();
        for (&v, row) in &bi_counts {
            bigram.insert(v, smooth_row(row, &unigram, discount));
        }
        let mut lm = TrigramLM {
            discount,
            symbols,
            index,
            trigram_counts,
            unigram,
            bigram,
            trigram: HashMap::new(),
        };
        let mut trigram = HashMap::new();
        for (&(u, v), row) in &tri_counts {
            let lower: Vec<f64> = (0..n as u32).map(|w| lm.bigram_prob(w, v)).collect();
            trigram.insert((u, v), smooth_row(row, &lower, discount));
        }
        lm.trigram = trigram;
        Ok(lm)
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Outcome vocabulary size (includes `</s>` and `<unk>`).
    pub fn vocab_size(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Symbol id; out-of-vocabulary symbols map to `<unk>`.
    pub fn id(&self, symbol: &str) -> u32 {
        self.index.get(symbol).copied().unwrap_or(UNK_ID)
    }

    pub fn bos_id(&self) -> u32 {
        BOS_ID
    }

    pub fn eos_id(&self) -> u32 {
        EOS_ID
    }

    fn bigram_prob(&self, w: u32, v: u32) -> f64 {
        let lower = self.unigram[w as usize];
        match self.bigram.get(&v) {
            Some(row) => row_prob(row, w, lower),
            None => lower,
        }
    }

    /// `P(w | u, v)` by ids.
    pub fn prob_ids(&self, w: u32, u: u32, v: u32) -> f64 {
        if w == BOS_ID {
            return 0.0;
        }
        match self.trigram.get(&(u, v)) {
            Some(row) => row_prob(row, w, self.bigram_prob(w, v)),
            None => self.bigram_prob(w, v),
        }
    }

    pub fn log_prob_ids(&self, w: u32, u: u32, v: u32) -> f64 {
        self.prob_ids(w, u, v).ln()
    }

    /// `ln P(word | h2, h1)`; use [`BOS`] for positions before the start.
    pub fn log_prob(&self, word: &str, h2: &str, h1: &str) -> f64 {
        self.log_prob_ids(self.id(word), self.id(h2), self.id(h1))
    }

    /// Sum of per-position log-probabilities with `<s> <s>` history and no
    /// end-of-sentence term. The empty sequence scores 0.
    pub fn score<S: AsRef<str>>(&self, seq: &[S]) -> f64 {
        let (mut u, mut v) = (BOS_ID, BOS_ID);
        let mut total = 0.0;
        for s in seq {
            let w = self.id(s.as_ref());
            total += self.log_prob_ids(w, u, v);
            (u, v) = (v, w);
        }
        total
    }

    /// [`score`](Self::score) plus the `</s>` transition.
    pub fn score_sentence<S: AsRef<str>>(&self, seq: &[S]) -> f64 {
        let n = seq.len();
        let u = if n >= 2 { self.id(seq[n - 2].as_ref()) } else { BOS_ID };
        let v = if n >= 1 { self.id(seq[n - 1].as_ref()) } else { BOS_ID };
        self.score(seq) + self.log_prob_ids(EOS_ID, u, v)
    }

    /// Largest deviation from 1 over every stored conditional row, the
    /// unigram, and one never-seen history.
    pub fn max_normalization_error(&self) -> f64 {
        let n = self.symbols.len() as u32;
        let sum = |u: u32, v: u32| (1..n).map(|w| self.prob_ids(w, u, v)).sum::<f64>();
        let mut worst = ((1..n).map(|w| self.unigram[w as usize]).sum::<f64>() - 1.0).abs();
        for &v in self.bigram.keys() {
            worst = worst.max(((1..n).map(|w| self.bigram_prob(w, v)).sum::<f64>() - 1.0).abs());
        }
        for &(u, v) in self.trigram.keys() {
            worst = worst.max((sum(u, v) - 1.0).abs());
        }
        worst.max((sum(UNK_ID, UNK_ID) - 1.0).abs())
    }
}

fn to_dense(counts: &[u64]) -> BTreeMap<u32, u64> {
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (i as u32, c))
        .collect()
}

fn row_prob(row: &Row, w: u32, lower: f64) -> f64 {
    row.seen.get(&w).copied().unwrap_or(row.alpha * lower)
}

fn smooth_row(counts: &BTreeMap<u32, u64>, lower: &[f64], discount: f64) -> Row {
    let total: u64 = counts.values().sum();
    let total = total as f64;
    // Summed in id order so results do not depend on hash iteration.
    let unseen_mass: f64 = lower
        .iter()
        .enumerate()
        .filter(|(w, _)| !counts.contains_key(&(*w as u32)))
        .map(|(_, p)| p)
        .sum();
    if unseen_mass <= 0.0 {
        return Row {
            seen: counts.iter().map(|(&w, &c)| (w, c as f64 / total)).collect(),
            alpha: 0.0,
        };
    }
    let seen: HashMap<u32, f64> = counts
        .iter()
        .map(|(&w, &c)| (w, (c as f64 - discount) / total))
        .collect();
    let freed = discount * seen.len() as f64 / total;
    Row {
        seen,
        alpha: freed / unseen_mass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(items: &[&[&str]]) -> Vec<Vec<String>> {
        items
            .iter()
            .map(|s| s.iter().map(|w| w.to_string()).collect())
            .collect()
    }

    #[test]
    fn tiny_corpus_hand_check() {
        let lm = TrigramLM::train(&seqs(&[&["a", "b"]]), 0.5).unwrap();
        // Outcomes: </s>, <unk>, a, b. Unigram counts a=1, b=1, </s>=1 (N=3):
        // seen get (1-.5)/3 = 1/6, freed .5 spread uniformly over the 1 unseen
        // outcome (<unk>) at 1/4 with alpha = .5 / .25.
        let a = lm.id("a");
        assert!((lm.unigram[a as usize] - 1.0 / 6.0).abs() < 1e-15);
        assert!((lm.unigram[UNK_ID as usize] - 0.5).abs() < 1e-15);
        // History (<s>,<s>) saw only "a": (1-.5)/1 = .5 before back-off.
        assert!((lm.prob_ids(a, BOS_ID, BOS_ID) - 0.5).abs() < 1e-15);
        let others: f64 = ["b", "</s>", "<unk>"]
            .iter()
            .map(|w| lm.prob_ids(lm.id(w), BOS_ID, BOS_ID))
            .sum();
        assert!((others - 0.5).abs() < 1e-12);
        assert!(lm.prob_ids(lm.id("b"), BOS_ID, BOS_ID) > 0.0);
        assert!(lm.max_normalization_error() < 1e-12);
    }

    #[test]
    fn empty_and_oov_scores() {
        let lm = TrigramLM::train(&seqs(&[&["a", "b"], &["b", "a", "a"]]), 0.5).unwrap();
        assert_eq!(lm.score::<&str>(&[]), 0.0);
        let s = lm.score(&["a", "zebra", "b"]);
        assert!(s.is_finite() && s < 0.0);
        assert_eq!(lm.id("zebra"), lm.id(UNK));
    }

    #[test]
    fn empty_corpus_rejected() {
        let empty: Vec<Vec<String>> = vec![];
        assert_eq!(TrigramLM::train(&empty, 0.5).unwrap_err(), NgramError::EmptyCorpus);
        assert!(TrigramLM::train(&seqs(&[&["a"]]), 1.0).is_err());
    }

    #[test]
    fn sentence_score_adds_end_transition() {
        let lm = TrigramLM::train(&seqs(&[&["a", "b"]]), 0.5).unwrap();
        let expected = lm.score(&["a", "b"]) + lm.log_prob(EOS, "a", "b");
        assert_eq!(lm.score_sentence(&["a", "b"]), expected);
        assert_eq!(lm.score_sentence::<&str>(&[]), lm.log_prob(EOS, BOS, BOS));
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let lm = TrigramLM::train(&seqs(&[&["x", "y", "z"], &["y", "y"]]), 0.3).unwrap();
        let json = serde_json::to_string(&lm).unwrap();
        let back: TrigramLM = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lm);
        assert_eq!(
            back.score(&["x", "y", "q"]).to_bits(),
            lm.score(&["x", "y", "q"]).to_bits()
        );
    }
}

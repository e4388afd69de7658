//! Word → (POS distribution, semantic class) tables and the closed list of
//! editing-term phrases.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const UNK_POS: &str = "UNK";
pub const UNK_SEM: &str = "UNK_SEM";

pub const DEFAULT_EDITING_TERMS: [&str; 5] = ["uh", "uhm", "well", "i mean", "no"];

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("malformed lexicon: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("word {word:?}: {message}")]
    BadEntry { word: String, message: String },
    #[error("editing term list: {0}")]
    BadEditingTerm(String),
}

/// The unit scored by the scope model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub word: String,
    pub pos: String,
    pub sem: String,
}

impl Triple {
    pub fn new(word: impl Into<String>, pos: impl Into<String>, sem: impl Into<String>) -> Self {
        Triple {
            word: word.into(),
            pos: pos.into(),
            sem: sem.into(),
        }
    }
}

/// On-disk shape of a lexicon file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconFile {
    pub pos_table: BTreeMap<String, BTreeMap<String, f64>>,
    pub sem_table: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editing_terms: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknown_pos_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknown_sem_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    /// Tag distributions, sorted by descending probability then tag name.
    pos_table: BTreeMap<String, Vec<(String, f64)>>,
    sem_table: BTreeMap<String, String>,
    editing_terms: Vec<Vec<String>>,
    unknown_pos: Vec<(String, f64)>,
    unknown_sem: String,
}

impl Lexicon {
    pub fn from_file(file: LexiconFile) -> Result<Self, LexiconError> {
        let mut pos_table = BTreeMap::new();
        for (word, dist) in file.pos_table {
            let bad = |message: String| LexiconError::BadEntry {
                word: word.clone(),
                message,
            };
            if dist.is_empty() {
                return Err(bad("empty POS distribution".into()));
            }
            if let Some((tag, p)) = dist.iter().find(|(_, &p)| !(p > 0.0)) {
                return Err(bad(format!("tag {tag} has non-positive probability {p}")));
            }
            let total: f64 = dist.values().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(bad(format!("POS probabilities sum to {total}")));
            }
            let mut entries: Vec<(String, f64)> = dist.into_iter().collect();
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            pos_table.insert(word.to_lowercase(), entries);
        }

        let phrases = file
            .editing_terms
            .unwrap_or_else(|| DEFAULT_EDITING_TERMS.iter().map(|s| s.to_string()).collect());
        let mut seen = BTreeSet::new();
        let mut editing_terms = Vec::with_capacity(phrases.len());
        for phrase in phrases {
            let tokens: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
            if tokens.is_empty() {
                return Err(LexiconError::BadEditingTerm("empty entry".into()));
            }
            if !seen.insert(tokens.clone()) {
                return Err(LexiconError::BadEditingTerm(format!("duplicate entry {phrase:?}")));
            }
            editing_terms.push(tokens);
        }

        Ok(Lexicon {
            pos_table,
            sem_table: file
                .sem_table
                .into_iter()
                .map(|(w, c)| (w.to_lowercase(), c))
                .collect(),
            editing_terms,
            unknown_pos: vec![(file.unknown_pos_tag.unwrap_or_else(|| UNK_POS.to_string()), 1.0)],
            unknown_sem: file.unknown_sem_class.unwrap_or_else(|| UNK_SEM.to_string()),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn to_file(&self) -> LexiconFile {
        LexiconFile {
            pos_table: self
                .pos_table
                .iter()
                .map(|(w, d)| (w.clone(), d.iter().cloned().collect()))
                .collect(),
            sem_table: self.sem_table.clone(),
            editing_terms: Some(self.editing_terms.iter().map(|t| t.join(" ")).collect()),
            unknown_pos_tag: Some(self.unknown_pos_tag().to_string()),
            unknown_sem_class: Some(self.unknown_sem.clone()),
        }
    }

    pub fn unknown_pos_tag(&self) -> &str {
        &self.unknown_pos[0].0
    }

    pub fn unknown_sem_class(&self) -> &str {
        &self.unknown_sem
    }

    pub fn pos_distribution(&self, word: &str) -> &[(String, f64)] {
        self.pos_table
            .get(word)
            .map_or(&self.unknown_pos[..], Vec::as_slice)
    }

    /// Most probable tag; ties go to the lexicographically smaller tag.
    pub fn best_tag(&self, word: &str) -> &str {
        &self.pos_distribution(word)[0].0
    }

    pub fn semantic_class(&self, word: &str) -> &str {
        self.sem_table.get(word).map_or(&self.unknown_sem, String::as_str)
    }

    pub fn triple(&self, word: &str, pos: &str) -> Triple {
        Triple::new(word, pos, self.semantic_class(word))
    }

    pub fn best_triple(&self, word: &str) -> Triple {
        self.triple(word, self.best_tag(word))
    }

    pub fn editing_terms(&self) -> &[Vec<String>] {
        &self.editing_terms
    }

    pub fn max_editing_term_len(&self) -> usize {
        self.editing_terms.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Length of the longest editing-term entry that prefixes `tokens`.
    pub fn match_editing_term<S: AsRef<str>>(&self, tokens: &[S]) -> usize {
        self.editing_terms
            .iter()
            .filter(|term| {
                term.len() <= tokens.len()
                    && term
                        .iter()
                        .zip(tokens)
                        .all(|(a, b)| a.eq_ignore_ascii_case(b.as_ref()))
            })
            .map(Vec::len)
            .max()
            .unwrap_or(0)
    }

    /// Every word listed in either table.
    pub fn words(&self) -> BTreeSet<&str> {
        self.pos_table
            .keys()
            .chain(self.sem_table.keys())
            .map(String::as_str)
            .collect()
    }

    /// Every tag mentioned, plus the unknown tag.
    pub fn tags(&self) -> BTreeSet<&str> {
        let mut tags: BTreeSet<&str> = self
            .pos_table
            .values()
            .flatten()
            .map(|(t, _)| t.as_str())
            .collect();
        tags.insert(self.unknown_pos_tag());
        tags
    }

    /// Every semantic class mentioned, plus the unknown class.
    pub fn sem_classes(&self) -> BTreeSet<&str> {
        let mut classes: BTreeSet<&str> = self.sem_table.values().map(String::as_str).collect();
        classes.insert(&self.unknown_sem);
        classes
    }
}

//! Synthetic disfluent corpus for desk-scale experiments.
//!
//! Fluent turns are sampled from templates. A planted modification repair
//! copies a span of the fluent turn, substitutes words within their semantic
//! classes, and inserts the copy (the reparandum) in front of the original
//! span (the reparans), optionally followed by an editing term.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{AnnotatedToken, TransliteratedTurn};
use crate::lexicon::{Lexicon, LexiconError, LexiconFile, DEFAULT_EDITING_TERMS};
use crate::training::{AnnotatedTurn, RepairAnnotation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("no templates")]
    EmptyTemplates,
    #[error("template {template:?}: {message}")]
    Template { template: String, message: String },
    #[error("{name} = {value} must lie in [0, 1]")]
    Rate { name: &'static str, value: f64 },
    #[error("invalid spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabEntry {
    pub word: String,
    pub pos: String,
    pub sem: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub vocabulary: Vec<VocabEntry>,
    /// Space-separated; an UPPERCASE token is a slot filled from that
    /// semantic class, anything else is a literal vocabulary word.
    pub templates: Vec<String>,
    /// Semantic classes whose words are never substituted in a reparandum.
    pub fixed_classes: Vec<String>,
    pub editing_terms: Vec<String>,
    pub repair_rate: f64,
    pub editing_term_prob: f64,
    pub fragment_prob: f64,
    /// Per-word substitution probability beyond the one forced substitution.
    pub substitution_prob: f64,
    pub max_span: usize,
    /// Inclusive range of template sentences concatenated into one turn.
    pub sentences_per_turn: [usize; 2],
    /// IP probability on a planted interruption point.
    pub ip_high: f64,
    /// Background IP probabilities are drawn from `[0, ip_background)`.
    pub ip_background: f64,
    /// Chance that a planted IP gets only a background probability.
    pub ip_miss_rate: f64,
    /// Chance that any other word gets `ip_high`.
    pub false_alarm_rate: f64,
    pub seed: u64,
}

fn entries(sem: &str, pos: &str, words: &[&str]) -> Vec<VocabEntry> {
    words
        .iter()
        .map(|w| VocabEntry {
            word: w.to_string(),
            pos: pos.to_string(),
            sem: sem.to_string(),
        })
        .collect()
}

impl Default for SynthSpec {
    /// Appointment scheduling, the classic dialogue domain for this task.
    fn default() -> Self {
        let mut vocabulary = Vec::new();
        vocabulary.extend(entries("PERSON", "PRON", &["i", "we", "you"]));
        vocabulary.extend(entries("ABILITY", "MODAL", &["can", "could", "cannot", "should"]));
        vocabulary.extend(entries("ACT", "VERB", &["meet", "see", "call", "visit", "join"]));
        vocabulary.extend(entries(
            "DAY",
            "NOUN",
            &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday"],
        ));
        vocabulary.extend(entries(
            "HOUR",
            "NUM",
            &["one", "two", "three", "four", "eight", "nine", "ten", "eleven"],
        ));
        vocabulary.extend(entries("MONTH", "NOUN", &["january", "march", "may", "june", "october"]));
        vocabulary.extend(entries("ORD", "ADJ", &["first", "second", "third", "fifth", "tenth"]));
        vocabulary.extend(entries("PLACE", "NOUN", &["office", "station", "hotel", "airport", "lobby"]));
        vocabulary.extend(entries("PREP", "PREP", &["on", "at", "after", "before"]));
        vocabulary.extend(entries("DET", "DET", &["the", "this", "next"]));
        vocabulary.extend(entries("FEEL", "ADJ", &["fine", "good", "great", "bad"]));
        vocabulary.extend(entries("FUNC", "PRON", &["us", "me", "that"]));
        vocabulary.extend(entries("FUNC", "VERB", &["let", "is", "be", "would", "suits", "works"]));
        vocabulary.extend(entries("FUNC", "ADV", &["how", "not", "o'clock", "then", "maybe"]));
        vocabulary.extend(entries("FUNC", "PREP", &["about", "of", "for", "in", "to"]));
        vocabulary.extend(entries("FUNC", "NOUN", &["week", "morning", "afternoon", "meeting"]));
        vocabulary.extend(entries("EDIT", "ITJ", &["uh", "uhm", "well", "no", "mean"]));
        let templates = [
            "PERSON ABILITY ACT you PREP DAY",
            "PERSON ABILITY ACT you PREP HOUR o'clock",
            "how about DAY PREP HOUR",
            "how about the ORD of MONTH",
            "let us ACT PREP the PLACE PREP DAY",
            "PERSON ABILITY not ACT you before HOUR",
            "DAY the ORD is FEEL for me",
            "that would be FEEL then",
            "PERSON ABILITY ACT in the PLACE in the morning",
            "maybe DET DAY PREP HOUR",
            "the meeting PREP the PLACE suits me",
            "DET week is FEEL for PERSON",
            "PERSON ABILITY ACT you PREP DAY the ORD of MONTH",
            "DAY afternoon works for me",
            "PERSON ABILITY ACT to the PLACE PREP HOUR",
        ];
        SynthSpec {
            vocabulary,
            templates: templates.iter().map(|t| t.to_string()).collect(),
            fixed_classes: vec!["FUNC".into(), "EDIT".into()],
            editing_terms: DEFAULT_EDITING_TERMS.iter().map(|t| t.to_string()).collect(),
            repair_rate: 0.21,
            editing_term_prob: 0.3,
            fragment_prob: 0.2,
            substitution_prob: 0.3,
            max_span: 4,
            sentences_per_turn: [1, 2],
            ip_high: 0.95,
            ip_background: 0.3,
            ip_miss_rate: 0.05,
            false_alarm_rate: 0.03,
            seed: 42,
        }
    }
}

enum Slot {
    Literal(String),
    Class(String),
}

struct Compiled<'a> {
    templates: Vec<Vec<Slot>>,
    class_words: BTreeMap<&'a str, Vec<&'a str>>,
    sem_of: BTreeMap<&'a str, &'a str>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<Compiled<'_>, SynthError> {
        if self.vocabulary.is_empty() {
            return Err(SynthError::EmptyVocabulary);
        }
        if self.templates.is_empty() {
            return Err(SynthError::EmptyTemplates);
        }
        for (name, value) in [
            ("repair_rate", self.repair_rate),
            ("editing_term_prob", self.editing_term_prob),
            ("fragment_prob", self.fragment_prob),
            ("substitution_prob", self.substitution_prob),
            ("ip_high", self.ip_high),
            ("ip_background", self.ip_background),
            ("ip_miss_rate", self.ip_miss_rate),
            ("false_alarm_rate", self.false_alarm_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::Rate { name, value });
            }
        }
        if self.max_span == 0 {
            return Err(SynthError::Invalid("max_span must be at least 1".into()));
        }
        let [lo, hi] = self.sentences_per_turn;
        if lo == 0 || lo > hi {
            return Err(SynthError::Invalid(format!("sentences_per_turn [{lo}, {hi}]")));
        }
        if self.editing_term_prob > 0.0 && self.editing_terms.iter().all(|t| t.split_whitespace().next().is_none()) {
            return Err(SynthError::Invalid("editing_term_prob > 0 but no editing terms".into()));
        }

        let mut class_words: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut sem_of = BTreeMap::new();
        for e in &self.vocabulary {
            if e.word.is_empty() || e.word.contains(char::is_whitespace) || e.word.contains('|') {
                return Err(SynthError::Invalid(format!("bad vocabulary word {:?}", e.word)));
            }
            let words = class_words.entry(e.sem.as_str()).or_default();
            if !words.contains(&e.word.as_str()) {
                words.push(&e.word);
            }
            sem_of.entry(e.word.as_str()).or_insert(e.sem.as_str());
        }
        let mut templates = Vec::new();
        for t in &self.templates {
            let err = |message: String| SynthError::Template {
                template: t.clone(),
                message,
            };
            let mut slots = Vec::new();
            for tok in t.split_whitespace() {
                if tok.chars().any(char::is_alphabetic) && tok.chars().all(|c| !c.is_lowercase()) {
                    if !class_words.contains_key(tok) {
                        return Err(err(format!("unknown class {tok}")));
                    }
                    slots.push(Slot::Class(tok.to_string()));
                } else if sem_of.contains_key(tok) {
                    slots.push(Slot::Literal(tok.to_string()));
                } else {
                    return Err(err(format!("word {tok:?} is not in the vocabulary")));
                }
            }
            if slots.is_empty() {
                return Err(err("empty template".into()));
            }
            templates.push(slots);
        }
        Ok(Compiled {
            templates,
            class_words,
            sem_of,
        })
    }

    /// Lexicon matching the vocabulary. A word listed under several tags
    /// gets a uniform tag distribution.
    pub fn lexicon(&self) -> Result<Lexicon, LexiconError> {
        let mut pos_table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut sem_table = BTreeMap::new();
        for e in &self.vocabulary {
            pos_table.entry(e.word.clone()).or_default().insert(e.pos.clone(), 1.0);
            sem_table.entry(e.word.clone()).or_insert_with(|| e.sem.clone());
        }
        for tags in pos_table.values_mut() {
            let n = tags.len() as f64;
            tags.values_mut().for_each(|p| *p = 1.0 / n);
        }
        Lexicon::from_file(LexiconFile {
            pos_table,
            sem_table,
            editing_terms: Some(self.editing_terms.clone()),
            unknown_pos_tag: None,
            unknown_sem_class: None,
        })
    }
}

fn fragment_of(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let keep = (chars.len() / 2).max(1);
    chars[..keep].iter().collect::<String>() + "-"
}

/// Samples `n_turns` turns. Returns the annotated transliterations (what a
/// recogniser plus prosody classifier would hand over) and the gold repairs.
pub fn generate_synthetic(
    spec: &SynthSpec,
    n_turns: usize,
) -> Result<(Vec<TransliteratedTurn>, Vec<AnnotatedTurn>), SynthError> {
    let compiled = spec.compile()?;
    let fixed: BTreeSet<&str> = spec.fixed_classes.iter().map(String::as_str).collect();
    let editing_terms: Vec<Vec<&str>> = spec
        .editing_terms
        .iter()
        .map(|t| t.split_whitespace().collect::<Vec<_>>())
        .filter(|t| !t.is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut turns = Vec::with_capacity(n_turns);
    let mut gold = Vec::with_capacity(n_turns);

    for index in 0..n_turns {
        let turn_id = format!("synth-{}-{index:06}", spec.seed);
        let n_sent = rng.gen_range(spec.sentences_per_turn[0]..=spec.sentences_per_turn[1]);
        let mut fluent: Vec<String> = Vec::new();
        for _ in 0..n_sent {
            let template = compiled.templates.choose(&mut rng).expect("templates checked");
            for slot in template {
                match slot {
                    Slot::Literal(w) => fluent.push(w.clone()),
                    Slot::Class(c) => {
                        let w = compiled.class_words[c.as_str()].choose(&mut rng).expect("class checked");
                        fluent.push(w.to_string());
                    }
                }
            }
        }

        let mut words = fluent.clone();
        let mut ip_index = None;
        let mut frag_index = None;
        let mut repairs = Vec::new();
        if rng.gen_bool(spec.repair_rate) {
            let l = rng.gen_range(1..=spec.max_span.min(fluent.len()));
            let s = rng.gen_range(0..=fluent.len() - l);
            let reparans = &fluent[s..s + l];
            let substitutable: Vec<usize> = (0..l)
                .filter(|&k| {
                    let sem = compiled.sem_of[reparans[k].as_str()];
                    !fixed.contains(sem) && compiled.class_words[sem].len() > 1
                })
                .collect();
            let forced = substitutable.choose(&mut rng).copied();
            let mut reparandum: Vec<String> = reparans.to_vec();
            for &k in &substitutable {
                if Some(k) == forced || rng.gen_bool(spec.substitution_prob) {
                    let sem = compiled.sem_of[reparans[k].as_str()];
                    let others: Vec<&str> = compiled.class_words[sem]
                        .iter()
                        .copied()
                        .filter(|w| *w != reparans[k])
                        .collect();
                    reparandum[k] = others.choose(&mut rng).expect("class has alternatives").to_string();
                }
            }
            let fragment = rng.gen_bool(spec.fragment_prob);
            if fragment {
                reparandum[l - 1] = fragment_of(&reparandum[l - 1]);
            }
            let editing: Vec<&str> = if !editing_terms.is_empty() && rng.gen_bool(spec.editing_term_prob) {
                editing_terms.choose(&mut rng).expect("non-empty").clone()
            } else {
                Vec::new()
            };

            let m = l;
            let k = editing.len();
            words = fluent[..s].to_vec();
            words.extend(reparandum);
            words.extend(editing.iter().map(|w| w.to_string()));
            words.extend_from_slice(&fluent[s..]);
            ip_index = Some(s + m - 1);
            if fragment {
                frag_index = Some(s + m - 1);
            }
            repairs.push(RepairAnnotation {
                rd: [s, s + m],
                et: (k > 0).then_some([s + m, s + m + k]),
                rs: [s + m + k, s + m + k + l],
                links: (1..=m).map(|j| [j, j]).collect(),
            });
        }

        let round = |p: f64| (p * 1000.0).round() / 1000.0;
        let tokens = words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let background = round(rng.gen::<f64>() * spec.ip_background);
                let ip_prob = if Some(i) == ip_index {
                    if rng.gen_bool(spec.ip_miss_rate) {
                        background
                    } else {
                        spec.ip_high
                    }
                } else if rng.gen_bool(spec.false_alarm_rate) {
                    spec.ip_high
                } else {
                    background
                };
                AnnotatedToken {
                    word: w.clone(),
                    ip_prob,
                    fragment: Some(i) == frag_index,
                }
            })
            .collect();
        turns.push(TransliteratedTurn {
            turn_id: turn_id.clone(),
            tokens,
        });
        gold.push(AnnotatedTurn {
            turn_id,
            tokens: words,
            repairs,
        });
    }
    Ok((turns, gold))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_output_is_reproducible() {
        let spec = SynthSpec::default();
        let a = generate_synthetic(&spec, 50).unwrap();
        let b = generate_synthetic(&spec, 50).unwrap();
        assert_eq!(a, b);
        let one = generate_synthetic(&spec, 1).unwrap();
        assert_eq!(one, generate_synthetic(&spec, 1).unwrap());
    }

    #[test]
    fn zero_rate_plants_nothing() {
        let spec = SynthSpec {
            repair_rate: 0.0,
            ..SynthSpec::default()
        };
        let (_, gold) = generate_synthetic(&spec, 300).unwrap();
        assert!(gold.iter().all(|t| t.repairs.is_empty()));
    }

    #[test]
    fn full_rate_plants_everywhere_within_window() {
        let spec = SynthSpec {
            repair_rate: 1.0,
            fragment_prob: 0.5,
            editing_term_prob: 0.5,
            ip_miss_rate: 0.0,
            ..SynthSpec::default()
        };
        let (turns, gold) = generate_synthetic(&spec, 500).unwrap();
        for (t, g) in turns.iter().zip(&gold) {
            g.validate().unwrap();
            assert_eq!(g.repairs.len(), 1);
            let r = &g.repairs[0];
            assert!(r.m() <= 4 && r.l() <= 4);
            let words: Vec<&str> = t.tokens.iter().map(|t| t.word.as_str()).collect();
            assert_eq!(words, g.tokens.iter().map(String::as_str).collect::<Vec<_>>());
            assert_eq!(t.tokens[r.ip()].ip_prob, spec.ip_high);
            if let Some([b, e]) = r.et {
                let term = g.tokens[b..e].join(" ");
                assert!(spec.editing_terms.contains(&term));
            }
        }
    }

    #[test]
    fn reparandum_differs_only_within_classes() {
        let spec = SynthSpec {
            repair_rate: 1.0,
            fragment_prob: 0.0,
            ..SynthSpec::default()
        };
        let lex = spec.lexicon().unwrap();
        let (_, gold) = generate_synthetic(&spec, 200).unwrap();
        for g in &gold {
            let r = &g.repairs[0];
            for &[j, i] in &r.links {
                let rd = &g.tokens[r.rd[0] + j - 1];
                let rs = &g.tokens[r.rs[0] + i - 1];
                assert_eq!(lex.semantic_class(rd), lex.semantic_class(rs));
            }
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let empty = SynthSpec {
            vocabulary: vec![],
            ..SynthSpec::default()
        };
        assert_eq!(empty.validate(), Err(SynthError::EmptyVocabulary));
        let no_templates = SynthSpec {
            templates: vec![],
            ..SynthSpec::default()
        };
        assert_eq!(no_templates.validate(), Err(SynthError::EmptyTemplates));
        let rate = SynthSpec {
            repair_rate: 1.5,
            ..SynthSpec::default()
        };
        assert!(matches!(rate.validate(), Err(SynthError::Rate { name: "repair_rate", .. })));
        let slot = SynthSpec {
            templates: vec!["how about WEEKDAY".into()],
            ..SynthSpec::default()
        };
        assert!(matches!(slot.validate(), Err(SynthError::Template { .. })));
    }

    #[test]
    fn lexicon_covers_vocabulary() {
        let spec = SynthSpec::default();
        let lex = spec.lexicon().unwrap();
        assert_eq!(lex.best_tag("monday"), "NOUN");
        assert_eq!(lex.semantic_class("tuesday"), "DAY");
        assert_eq!(lex.match_editing_term(&["i", "mean", "it"]), 2);
    }
}

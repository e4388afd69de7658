//! The repair cascade for one turn: cheap triggers propose interruption
//! points, the scope model searches the windowed contexts around each one,
//! and every accepted segmentation is spliced into the lattice as a new path
//! that skips the reparandum and editing term.
//!
//! The spliced path carries the deleted material in the repair slot of its
//! first edge, and that edge's acoustic score absorbs the deleted words'
//! acoustic scores plus their best word-trigram transition scores. Against
//! the original path, only the transitions across the splice point differ.

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{DeletedSegment, EdgeId, LatticeError, NodeId, WordEdge, WordLattice};
use crate::lexicon::Lexicon;
use crate::model::{RepairModel, MODEL_FORMAT};
use crate::ngram::{TrigramLM, BOS};
use crate::scope::{best_scored, enumerate_candidates, Candidate, RepairHypothesis, ScopeError};
use crate::tag_lattice::build_tag_lattice;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model incompatible with this configuration: {0}")]
    Incompatible(String),
    #[error("lattice {turn_id}: {message}")]
    Structure { turn_id: String, message: String },
    #[error("edge {0} carries no repair slot")]
    MissingSlot(EdgeId),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Scope(#[from] ScopeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Acoustic,
    Fragment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub kind: TriggerKind,
    pub edge_id: EdgeId,
    pub ip_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub tau_ip: f64,
    pub enable_fragment_trigger: bool,
    pub window: usize,
    pub beam: usize,
    /// Overrides the model's acceptance threshold when set.
    pub theta: Option<f64>,
    #[serde(with = "millis")]
    pub budget: Duration,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau_ip: 0.5,
            enable_fragment_trigger: true,
            window: 4,
            beam: 10,
            theta: None,
            budget: Duration::from_millis(10_000),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.tau_ip) {
            return Err(PipelineError::Config(format!("tau_ip {} outside [0, 1]", self.tau_ip)));
        }
        if self.budget.is_zero() {
            return Err(PipelineError::Config("time budget must be positive".into()));
        }
        if self.window == 0 || self.beam == 0 {
            return Err(PipelineError::Config("window and beam must be at least 1".into()));
        }
        if self.theta.is_some_and(f64::is_nan) {
            return Err(PipelineError::Config("theta is NaN".into()));
        }
        Ok(())
    }
}

/// Triggers in topological edge order. An edge with both cues yields a
/// single fragment trigger.
pub fn detect_triggers(lattice: &WordLattice, config: &PipelineConfig) -> Vec<Trigger> {
    lattice
        .edges_in_order()
        .into_iter()
        .filter(|e| e.repair_slot.is_none())
        .filter_map(|e| {
            let kind = if config.enable_fragment_trigger && e.fragment {
                TriggerKind::Fragment
            } else if e.ip_prob >= config.tau_ip {
                TriggerKind::Acoustic
            } else {
                return None;
            };
            Some(Trigger {
                kind,
                edge_id: e.id,
                ip_prob: e.ip_prob,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairEdit {
    pub hypothesis: RepairHypothesis,
    pub trigger: TriggerKind,
    /// Copies of the reparans edges, in path order; the first is the carrier.
    pub inserted_edge_ids: Vec<EdgeId>,
    pub carrier_edge_id: EdgeId,
}

impl RepairEdit {
    pub fn candidate(&self) -> &Candidate {
        &self.hypothesis.candidate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutput {
    pub lattice: WordLattice,
    pub edits: Vec<RepairEdit>,
    pub triggers: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy)]
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    // No monotonic clock on wasm32-unknown-unknown; the budget is not enforced there.
    fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed();
        #[cfg(target_arch = "wasm32")]
        return Duration::ZERO;
    }
}

fn check_model(model: &RepairModel, config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validate()?;
    if model.format != MODEL_FORMAT {
        return Err(PipelineError::Incompatible(format!("model format {:?}", model.format)));
    }
    if config.window > model.scope.window {
        return Err(PipelineError::Incompatible(format!(
            "window {} exceeds the model's trained window {}",
            config.window, model.scope.window
        )));
    }
    Ok(())
}

/// The best-scoring segmentation for every trigger, without the acceptance
/// threshold and without splicing. Used for threshold calibration.
pub fn score_triggers(
    lattice: &WordLattice,
    model: &RepairModel,
    lex: &Lexicon,
    config: &PipelineConfig,
) -> Result<Vec<(Trigger, Option<RepairHypothesis>)>, PipelineError> {
    check_model(model, config)?;
    let tl = build_tag_lattice(lattice, lex);
    detect_triggers(lattice, config)
        .into_iter()
        .map(|t| {
            let candidates = trigger_candidates(&tl, &t, model, lex, config);
            let best = best_scored(&model.scope, &candidates, t.edge_id)?;
            Ok((t, best))
        })
        .collect()
}

fn trigger_candidates(
    tl: &crate::tag_lattice::TagLattice<'_>,
    trigger: &Trigger,
    model: &RepairModel,
    lex: &Lexicon,
    config: &PipelineConfig,
) -> Vec<Candidate> {
    let pre = tl.expand_pre_context(trigger.edge_id, config.window, config.beam, &model.pos_lm);
    let post = tl.expand_post_context(trigger.edge_id, config.window, config.beam, &model.pos_lm, lex);
    let mut candidates = Vec::new();
    for p in &pre {
        for q in &post {
            candidates.extend(enumerate_candidates(p, q, config.window));
        }
    }
    candidates
}

/// Runs the full cascade on one turn.
pub fn process_turn(
    lattice: &WordLattice,
    model: &RepairModel,
    lex: &Lexicon,
    config: &PipelineConfig,
) -> Result<TurnOutput, PipelineError> {
    check_model(model, config)?;
    let clock = Stopwatch::start();
    let theta = config.theta.unwrap_or(model.scope.theta);
    let triggers = detect_triggers(lattice, config);
    let tl = build_tag_lattice(lattice, lex);

    let mut out = lattice.clone();
    let mut edits: Vec<RepairEdit> = Vec::new();
    let mut consumed: HashSet<EdgeId> = HashSet::new();
    let mut truncated = false;
    for trigger in &triggers {
        if clock.elapsed() >= config.budget {
            truncated = true;
            break;
        }
        if consumed.contains(&trigger.edge_id) {
            continue;
        }
        let candidates: Vec<Candidate> = trigger_candidates(&tl, trigger, model, lex, config)
            .into_iter()
            .filter(|c| c.edge_ids().all(|e| !consumed.contains(&e)))
            .collect();
        let Some(hypothesis) = best_scored(&model.scope, &candidates, trigger.edge_id)? else {
            continue;
        };
        if hypothesis.score < theta {
            continue;
        }
        consumed.extend(hypothesis.candidate.edge_ids());
        let mut edit = insert_repair_path(&mut out, hypothesis, &model.word_lm)?;
        edit.trigger = trigger.kind;
        edits.push(edit);
    }
    Ok(TurnOutput {
        lattice: out,
        edits,
        triggers: triggers.len(),
        truncated,
    })
}

fn structure(lattice: &WordLattice, message: impl Into<String>) -> PipelineError {
    PipelineError::Structure {
        turn_id: lattice.turn_id.clone(),
        message: message.into(),
    }
}

/// Words that can precede `node` as a one-word history; `<s>` at the start.
fn predecessor_words(lattice: &WordLattice, node: NodeId) -> Vec<&str> {
    if node == lattice.start {
        return vec![BOS];
    }
    lattice.incoming(node).map(|e| e.word.as_str()).collect()
}

/// Best trigram log-probability of each word of the chain `deleted`, taking
/// the maximum over every history the lattice offers before the chain.
pub fn max_transition_scores(lattice: &WordLattice, deleted: &[&WordEdge], lm: &TrigramLM) -> Vec<f64> {
    let onset = deleted[0].from;
    let mut scores = Vec::with_capacity(deleted.len());
    for (k, edge) in deleted.iter().enumerate() {
        let histories: Vec<(&str, &str)> = match k {
            0 if onset == lattice.start => vec![(BOS, BOS)],
            0 => lattice
                .incoming(onset)
                .flat_map(|e1| {
                    predecessor_words(lattice, e1.from)
                        .into_iter()
                        .map(move |w2| (w2, e1.word.as_str()))
                })
                .collect(),
            1 => predecessor_words(lattice, onset)
                .into_iter()
                .map(|w2| (w2, deleted[0].word.as_str()))
                .collect(),
            _ => vec![(deleted[k - 2].word.as_str(), deleted[k - 1].word.as_str())],
        };
        let best = histories
            .iter()
            .map(|(h2, h1)| lm.log_prob(&edge.word, h2, h1))
            .fold(f64::NEG_INFINITY, f64::max);
        scores.push(best);
    }
    scores
}

fn chain<'a>(lattice: &'a WordLattice, ids: &[EdgeId]) -> Result<Vec<&'a WordEdge>, PipelineError> {
    let edges = ids
        .iter()
        .map(|&id| {
            lattice
                .edge(id)
                .ok_or_else(|| structure(lattice, format!("edge {id} does not exist")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for pair in edges.windows(2) {
        if pair[0].to != pair[1].from {
            return Err(structure(
                lattice,
                format!("edges {} and {} are not consecutive", pair[0].id, pair[1].id),
            ));
        }
    }
    Ok(edges)
}

/// Adds a path from the reparandum onset through copies of the reparans,
/// leaving every original edge untouched.
pub fn insert_repair_path(
    lattice: &mut WordLattice,
    hypothesis: RepairHypothesis,
    word_lm: &TrigramLM,
) -> Result<RepairEdit, PipelineError> {
    let c = &hypothesis.candidate;
    let deleted_ids: Vec<EdgeId> = c.pre_edge_ids.iter().chain(&c.editing_edge_ids).copied().collect();
    if c.pre_edge_ids.is_empty() || c.post_edge_ids.is_empty() {
        return Err(structure(lattice, "empty reparandum or reparans"));
    }
    let deleted = chain(lattice, &deleted_ids)?;
    let reparans = chain(lattice, &c.post_edge_ids)?;
    if deleted.last().expect("non-empty").to != reparans[0].from {
        return Err(structure(lattice, "reparans does not follow the deleted segment"));
    }
    if reparans.last().expect("non-empty").to == reparans[0].from {
        return Err(structure(lattice, "reparans ends where it starts"));
    }

    let transition: f64 = max_transition_scores(lattice, &deleted, word_lm).iter().sum();
    let acoustic: f64 = deleted.iter().map(|e| e.acoustic).sum();
    let offset = acoustic + transition;
    let slot = DeletedSegment {
        reparandum_words: deleted[..c.pre_edge_ids.len()].iter().map(|e| e.word.clone()).collect(),
        editing_term_words: deleted[c.pre_edge_ids.len()..].iter().map(|e| e.word.clone()).collect(),
        original_edge_ids: deleted_ids.clone(),
        score_offset: offset,
    };

    let onset = deleted[0].from;
    let last_to = reparans.last().expect("non-empty").to;
    let copies: Vec<(String, f64)> = reparans.iter().map(|e| (e.word.clone(), e.acoustic)).collect();
    let mut next_node = lattice.next_node_id();
    let mut next_edge = lattice.next_edge_id();
    let mut from = onset;
    let mut inserted = Vec::with_capacity(copies.len());
    for (k, (word, acoustic)) in copies.into_iter().enumerate() {
        let to = if k + 1 == c.post_edge_ids.len() {
            last_to
        } else {
            lattice.nodes.push(next_node);
            next_node += 1;
            next_node - 1
        };
        let mut edge = WordEdge::new(next_edge, from, to, word).with_acoustic(acoustic);
        if k == 0 {
            edge.acoustic += offset;
            edge.repair_slot = Some(slot.clone());
        }
        inserted.push(edge.id);
        lattice.edges.push(edge);
        next_edge += 1;
        from = to;
    }
    lattice.validate()?;
    Ok(RepairEdit {
        hypothesis,
        trigger: TriggerKind::Acoustic,
        carrier_edge_id: inserted[0],
        inserted_edge_ids: inserted,
    })
}

/// The disfluent word sequence a splice replaced.
pub fn reconstruct_original(lattice: &WordLattice, edit: &RepairEdit) -> Result<Vec<String>, PipelineError> {
    reconstruct_from(lattice, edit.carrier_edge_id, &edit.inserted_edge_ids)
}

pub fn reconstruct_from(
    lattice: &WordLattice,
    carrier: EdgeId,
    inserted: &[EdgeId],
) -> Result<Vec<String>, PipelineError> {
    let edge = lattice
        .edge(carrier)
        .ok_or_else(|| structure(lattice, format!("edge {carrier} does not exist")))?;
    let slot = edge.repair_slot.as_ref().ok_or(PipelineError::MissingSlot(carrier))?;
    let mut words = slot.reparandum_words.clone();
    words.extend(slot.editing_term_words.iter().cloned());
    for &id in inserted {
        let e = lattice
            .edge(id)
            .ok_or_else(|| structure(lattice, format!("edge {id} does not exist")))?;
        words.push(e.word.clone());
    }
    Ok(words)
}

/// Token-coordinate view of an edit, valid for lattices whose node ids are
/// token positions (as built by [`crate::lattice::linear_lattice`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRecord {
    pub ip_edge: EdgeId,
    pub ip: usize,
    pub rd: [usize; 2],
    #[serde(default)]
    pub et: Option<[usize; 2]>,
    pub rs: [usize; 2],
    pub rd_words: Vec<String>,
    pub et_words: Vec<String>,
    pub rs_words: Vec<String>,
    pub score: f64,
    pub trigger: TriggerKind,
    pub carrier_edge: EdgeId,
}

impl EditRecord {
    pub fn from_edit(lattice: &WordLattice, edit: &RepairEdit) -> Result<Self, PipelineError> {
        let c = edit.candidate();
        let span = |ids: &[EdgeId]| -> Result<[usize; 2], PipelineError> {
            let edges = chain(lattice, ids)?;
            Ok([edges[0].from as usize, edges[edges.len() - 1].to as usize])
        };
        let ip = lattice
            .edge(edit.hypothesis.ip_edge)
            .ok_or_else(|| structure(lattice, "IP edge vanished"))?;
        Ok(EditRecord {
            ip_edge: ip.id,
            ip: ip.from as usize,
            rd: span(&c.pre_edge_ids)?,
            et: if c.editing_edge_ids.is_empty() {
                None
            } else {
                Some(span(&c.editing_edge_ids)?)
            },
            rs: span(&c.post_edge_ids)?,
            rd_words: c.reparandum.iter().map(|t| t.word.clone()).collect(),
            et_words: c.editing_words.clone(),
            rs_words: c.reparans.iter().map(|t| t.word.clone()).collect(),
            score: edit.hypothesis.score,
            trigger: edit.trigger,
            carrier_edge: edit.carrier_edge_id,
        })
    }
}

/// One line of the edits sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnEdits {
    pub turn_id: String,
    pub truncated: bool,
    pub triggers: usize,
    pub edits: Vec<EditRecord>,
}

impl TurnEdits {
    pub fn from_output(out: &TurnOutput) -> Result<Self, PipelineError> {
        Ok(TurnEdits {
            turn_id: out.lattice.turn_id.clone(),
            truncated: out.truncated,
            triggers: out.triggers,
            edits: out
                .edits
                .iter()
                .map(|e| EditRecord::from_edit(&out.lattice, e))
                .collect::<Result<_, _>>()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{path_score, select_best_path};
    use crate::lattice::linear_lattice;
    use crate::training::{AnnotatedTurn, RepairAnnotation, TrainConfig};

    fn lex() -> Lexicon {
        Lexicon::from_json(
            r#"{"pos_table":{"i":{"PRON":1.0},"we":{"PRON":1.0},"you":{"PRON":1.0},"can":{"AUX":1.0},
                "cannot":{"AUX":1.0},"on":{"PREP":1.0},"monday":{"NOUN":1.0},"tuesday":{"NOUN":1.0},
                "meet":{"VERB":1.0},"no":{"ITJ":1.0}},
                "sem_table":{"i":"PERSON","we":"PERSON","you":"PERSON","monday":"DAY","tuesday":"DAY",
                "can":"ABILITY","cannot":"ABILITY"}}"#,
        )
        .unwrap()
    }

    fn model() -> RepairModel {
        let mut corpus = Vec::new();
        let repaired = [
            ("i cannot no i can meet you", [0, 2], Some([2, 3]), [3, 5]),
            ("we meet on monday on tuesday", [2, 4], None, [4, 6]),
            ("we cannot we can meet", [0, 2], None, [2, 4]),
        ];
        for (k, (text, rd, et, rs)) in repaired.into_iter().enumerate() {
            corpus.push(AnnotatedTurn {
                turn_id: format!("r{k}"),
                tokens: text.split_whitespace().map(String::from).collect(),
                repairs: vec![RepairAnnotation {
                    rd,
                    et,
                    rs,
                    links: (1..=rd[1] - rd[0]).map(|j| [j, j]).collect(),
                }],
            });
        }
        for (k, text) in ["i can meet you", "we can meet on monday", "i can meet you on tuesday"]
            .iter()
            .cycle()
            .take(12)
            .enumerate()
        {
            corpus.push(AnnotatedTurn {
                turn_id: format!("f{k}"),
                tokens: text.split_whitespace().map(String::from).collect(),
                repairs: vec![],
            });
        }
        let config = TrainConfig {
            theta: -10.0,
            ..TrainConfig::default()
        };
        RepairModel::train(&corpus, &lex(), &config).unwrap().0
    }

    fn turn(text: &str) -> WordLattice {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        linear_lattice(&tokens, "t").unwrap()
    }

    #[test]
    fn trigger_kinds() {
        let l = turn("i cannot|ip=0.7 no|ip=0.5 i|ip=0.49 ca-|frag|ip=0.9 can");
        let config = PipelineConfig::default();
        let t = detect_triggers(&l, &config);
        let got: Vec<(EdgeId, TriggerKind)> = t.iter().map(|t| (t.edge_id, t.kind)).collect();
        assert_eq!(
            got,
            vec![(1, TriggerKind::Acoustic), (2, TriggerKind::Acoustic), (4, TriggerKind::Fragment)]
        );
        let no_frag = PipelineConfig {
            enable_fragment_trigger: false,
            tau_ip: 0.95,
            ..config
        };
        assert!(detect_triggers(&l, &no_frag).is_empty());
    }

    #[test]
    fn config_is_validated() {
        let bad = PipelineConfig {
            tau_ip: 1.5,
            ..PipelineConfig::default()
        };
        assert!(matches!(bad.validate(), Err(PipelineError::Config(_))));
        let wide = PipelineConfig {
            window: 5,
            ..PipelineConfig::default()
        };
        assert!(matches!(
            process_turn(&turn("i can"), &model(), &lex(), &wide),
            Err(PipelineError::Incompatible(_))
        ));
    }

    #[test]
    fn cannot_no_can_is_repaired() {
        let m = model();
        let l = turn("i cannot|ip=0.9 no i can meet you");
        let out = process_turn(&l, &m, &lex(), &PipelineConfig::default()).unwrap();
        assert_eq!(out.triggers, 1);
        assert_eq!(out.edits.len(), 1);
        let edit = &out.edits[0];
        let c = edit.candidate();
        assert_eq!(c.pre_edge_ids, vec![0, 1]);
        assert_eq!(c.editing_edge_ids, vec![2]);
        assert_eq!(c.post_edge_ids, vec![3, 4]);
        assert_eq!(out.lattice.edges.len(), l.edges.len() + 2);
        assert_eq!(reconstruct_original(&out.lattice, edit).unwrap(), ["i", "cannot", "no", "i", "can"]);

        let carrier = out.lattice.edge(edit.carrier_edge_id).unwrap();
        assert_eq!((carrier.from, carrier.word.as_str()), (0, "i"));
        assert_eq!(carrier.ip_prob, 0.0);
        let slot = carrier.repair_slot.as_ref().unwrap();
        assert_eq!(slot.original_edge_ids, vec![0, 1, 2]);

        let record = TurnEdits::from_output(&out).unwrap();
        let r = &record.edits[0];
        assert_eq!((r.ip, r.rd, r.et, r.rs), (1, [0, 2], Some([2, 3]), [3, 5]));
        assert_eq!(r.trigger, TriggerKind::Acoustic);
    }

    #[test]
    fn splice_changes_only_junction_transitions() {
        let m = model();
        let l = turn("i cannot|ip=0.9 no i can meet you");
        let out = process_turn(&l, &m, &lex(), &PipelineConfig::default()).unwrap();
        let edit = &out.edits[0];
        let lm = &m.word_lm;
        let carrier = out.lattice.edge(edit.carrier_edge_id).unwrap();
        // Deleted words sit at the turn start, so their histories are unique.
        let deleted_lm = lm.log_prob("i", BOS, BOS) + lm.log_prob("cannot", BOS, "i") + lm.log_prob("no", "i", "cannot");
        let offset = carrier.repair_slot.as_ref().unwrap().score_offset;
        assert!((offset - deleted_lm).abs() < 1e-12);

        let original = path_score(&out.lattice, &[0, 1, 2, 3, 4, 5, 6], lm);
        let mut repaired_ids = edit.inserted_edge_ids.clone();
        repaired_ids.extend([5, 6]);
        let repaired = path_score(&out.lattice, &repaired_ids, lm);
        let old_junction = lm.log_prob("i", "cannot", "no") + lm.log_prob("can", "no", "i") + lm.log_prob("meet", "i", "can");
        let new_junction = lm.log_prob("i", BOS, BOS) + lm.log_prob("can", BOS, "i") + lm.log_prob("meet", "i", "can");
        assert!(((repaired - new_junction) - (original - old_junction)).abs() < 1e-9);
    }

    #[test]
    fn best_path_takes_the_repair_when_fluent_is_likelier() {
        let m = model();
        let l = turn("i cannot|ip=0.9 no i can meet you");
        let before = select_best_path(&l, &m.word_lm).unwrap();
        assert_eq!(before.words.len(), 7);
        let out = process_turn(&l, &m, &lex(), &PipelineConfig::default()).unwrap();
        let after = select_best_path(&out.lattice, &m.word_lm).unwrap();
        let fluent_lm = m.word_lm.score_sentence(&["i", "can", "meet", "you"]);
        let disfluent_lm = m.word_lm.score_sentence(&["i", "cannot", "no", "i", "can", "meet", "you"]);
        assert!(fluent_lm > disfluent_lm);
        assert_eq!(after.words, ["i", "can", "meet", "you"]);
        assert!(after.score >= before.score);
    }

    #[test]
    fn threshold_gate_and_budget() {
        let m = model();
        let l = turn("i cannot|ip=0.9 no i can meet you");
        let strict = PipelineConfig {
            theta: Some(f64::INFINITY),
            ..PipelineConfig::default()
        };
        let out = process_turn(&l, &m, &lex(), &strict).unwrap();
        assert!(out.edits.is_empty() && !out.truncated);
        assert_eq!(out.lattice, l);

        let tiny = PipelineConfig {
            budget: Duration::from_nanos(1),
            ..PipelineConfig::default()
        };
        let out = process_turn(&l, &m, &lex(), &tiny).unwrap();
        assert!(out.truncated);
        assert!(out.lattice.validate().is_ok());
    }

    #[test]
    fn accepted_edges_are_not_reused() {
        let m = model();
        let l = turn("we cannot|ip=0.9 we|ip=0.9 can meet");
        let out = process_turn(&l, &m, &lex(), &PipelineConfig::default()).unwrap();
        let mut used = HashSet::new();
        for e in &out.edits {
            for id in e.candidate().edge_ids() {
                assert!(used.insert(id), "edge {id} used twice");
            }
        }
        assert!(!out.edits.is_empty());
    }

    #[test]
    fn transition_maximum_over_parallel_histories() {
        let m = model();
        let mut l = turn("we can meet");
        l.edges.push(WordEdge::new(3, 0, 1, "i"));
        l.validate().unwrap();
        let deleted = vec![l.edge(1).unwrap()];
        let got = max_transition_scores(&l, &deleted, &m.word_lm)[0];
        let want = m.word_lm.log_prob("can", BOS, "we").max(m.word_lm.log_prob("can", BOS, "i"));
        assert_eq!(got, want);
    }
}

//! Best-path selection under the word trigram, and detection / correct-scope
//! recall and precision against gold annotations.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{EdgeId, NodeId, WordLattice};
use crate::lexicon::Lexicon;
use crate::model::RepairModel;
use crate::ngram::TrigramLM;
use crate::pipeline::{score_triggers, EditRecord, PipelineConfig, TurnEdits};
use crate::scope::RepairHypothesis;
use crate::training::{AnnotatedTurn, Span};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("lattice {0}: no path from start to end")]
    NoPath(String),
    #[error("prediction for unknown turn {0:?}")]
    UnknownTurn(String),
    #[error("duplicate turn {0:?}")]
    DuplicateTurn(String),
    #[error("{0}")]
    Pipeline(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestPath {
    pub edge_ids: Vec<EdgeId>,
    pub words: Vec<String>,
    pub score: f64,
}

/// Score of one explicit path: per edge `acoustic + ln P(word | history)`,
/// then the end-of-sentence transition. Accumulated left to right.
pub fn path_score(lattice: &WordLattice, edge_ids: &[EdgeId], lm: &TrigramLM) -> f64 {
    let index = lattice.edge_index();
    let (mut u, mut v) = (lm.bos_id(), lm.bos_id());
    let mut score = 0.0;
    for id in edge_ids {
        let e = &lattice.edges[index[id]];
        let w = lm.id(&e.word);
        score = score + e.acoustic + lm.log_prob_ids(w, u, v);
        (u, v) = (v, w);
    }
    score + lm.log_prob_ids(lm.eos_id(), u, v)
}

/// Viterbi over (node, two-word history) states. Equal scores go to the
/// lexicographically smaller edge-id sequence.
pub fn select_best_path(lattice: &WordLattice, lm: &TrigramLM) -> Result<BestPath, EvalError> {
    type State = (NodeId, u32, u32);
    let order = lattice
        .topological_order()
        .map_err(|_| EvalError::NoPath(lattice.turn_id.clone()))?;
    let mut outgoing: HashMap<NodeId, Vec<usize>> = HashMap::new();
    for (i, e) in lattice.edges.iter().enumerate() {
        outgoing.entry(e.from).or_default().push(i);
    }
    let mut best: HashMap<State, (f64, Vec<EdgeId>)> = HashMap::new();
    let bos = lm.bos_id();
    best.insert((lattice.start, bos, bos), (0.0, Vec::new()));
    let mut by_node: HashMap<NodeId, Vec<State>> = HashMap::new();
    by_node.entry(lattice.start).or_default().push((lattice.start, bos, bos));

    let better = |cand: &(f64, Vec<EdgeId>), cur: &(f64, Vec<EdgeId>)| {
        cand.0 > cur.0 || (cand.0 == cur.0 && cand.1 < cur.1)
    };

    for node in order {
        if node == lattice.end {
            continue;
        }
        let states = by_node.remove(&node).unwrap_or_default();
        for state in states {
            let (score, path) = best[&state].clone();
            let (_, u, v) = state;
            for &i in outgoing.get(&node).into_iter().flatten() {
                let e = &lattice.edges[i];
                let w = lm.id(&e.word);
                let next = (e.to, v, w);
                let mut p = path.clone();
                p.push(e.id);
                let cand = (score + e.acoustic + lm.log_prob_ids(w, u, v), p);
                match best.get(&next) {
                    Some(cur) if !better(&cand, cur) => {}
                    Some(_) => {
                        best.insert(next, cand);
                    }
                    None => {
                        best.insert(next, cand);
                        by_node.entry(e.to).or_default().push(next);
                    }
                }
            }
        }
    }

    let mut winner: Option<(f64, Vec<EdgeId>)> = None;
    for &state in by_node.get(&lattice.end).into_iter().flatten() {
        let (score, path) = &best[&state];
        let (_, u, v) = state;
        let cand = (score + lm.log_prob_ids(lm.eos_id(), u, v), path.clone());
        if winner.as_ref().is_none_or(|w| better(&cand, w)) {
            winner = Some(cand);
        }
    }
    let (score, edge_ids) = winner.ok_or_else(|| EvalError::NoPath(lattice.turn_id.clone()))?;
    let index = lattice.edge_index();
    Ok(BestPath {
        words: edge_ids.iter().map(|id| lattice.edges[index[id]].word.clone()).collect(),
        edge_ids,
        score,
    })
}

/// A predicted repair in token coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedRepair {
    pub ip: usize,
    pub rd: Span,
    pub rs: Span,
}

impl From<&EditRecord> for PredictedRepair {
    fn from(r: &EditRecord) -> Self {
        PredictedRepair {
            ip: r.ip,
            rd: r.rd,
            rs: r.rs,
        }
    }
}

pub fn predictions_from_edits(turns: &[TurnEdits]) -> BTreeMap<String, Vec<PredictedRepair>> {
    turns
        .iter()
        .map(|t| (t.turn_id.clone(), t.edits.iter().map(PredictedRepair::from).collect()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub detection_recall: f64,
    pub detection_precision: f64,
    pub scope_recall: f64,
    pub scope_precision: f64,
    pub gold: usize,
    pub predicted: usize,
    pub detection_hits: usize,
    pub scope_hits: usize,
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

impl Metrics {
    pub fn from_counts(gold: usize, predicted: usize, detection_hits: usize, scope_hits: usize) -> Self {
        Metrics {
            detection_recall: percent(detection_hits, gold),
            detection_precision: percent(detection_hits, predicted),
            scope_recall: percent(scope_hits, gold),
            scope_precision: percent(scope_hits, predicted),
            gold,
            predicted,
            detection_hits,
            scope_hits,
        }
    }

    pub fn scope_f1(&self) -> f64 {
        let (p, r) = (self.scope_precision, self.scope_recall);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Matches predictions to gold repairs turn by turn. A detection hit shares
/// the gold IP position; a scope hit additionally has identical reparandum
/// and reparans ranges. Each gold repair matches at most one prediction.
pub fn evaluate(
    gold: &[AnnotatedTurn],
    predicted: &BTreeMap<String, Vec<PredictedRepair>>,
) -> Result<Metrics, EvalError> {
    let mut by_id: HashMap<&str, &AnnotatedTurn> = HashMap::new();
    for t in gold {
        if by_id.insert(&t.turn_id, t).is_some() {
            return Err(EvalError::DuplicateTurn(t.turn_id.clone()));
        }
    }
    if let Some(id) = predicted.keys().find(|id| !by_id.contains_key(id.as_str())) {
        return Err(EvalError::UnknownTurn(id.clone()));
    }
    let (mut n_gold, mut n_pred, mut det, mut scope) = (0, 0, 0, 0);
    for turn in gold {
        let mut preds: Vec<&PredictedRepair> = predicted
            .get(&turn.turn_id)
            .map(|p| p.iter().collect())
            .unwrap_or_default();
        preds.sort_by_key(|p| (p.ip, p.rd, p.rs));
        let mut gold_repairs: Vec<_> = turn.repairs.iter().collect();
        gold_repairs.sort_by_key(|r| (r.ip(), r.rd, r.rs));
        n_gold += gold_repairs.len();
        n_pred += preds.len();
        let mut used = vec![false; preds.len()];
        for g in gold_repairs {
            // Prefer a prediction that also gets the scope right.
            let pick = (0..preds.len())
                .filter(|&k| !used[k] && preds[k].ip == g.ip())
                .min_by_key(|&k| !(preds[k].rd == g.rd && preds[k].rs == g.rs));
            if let Some(k) = pick {
                used[k] = true;
                det += 1;
                if preds[k].rd == g.rd && preds[k].rs == g.rs {
                    scope += 1;
                }
            }
        }
    }
    Ok(Metrics::from_counts(n_gold, n_pred, det, scope))
}

/// Picks the threshold that maximises correct-scope F1 when every
/// prediction with score below it is dropped. Ties go to the lowest threshold.
pub fn calibrate_theta(
    gold: &[AnnotatedTurn],
    scored: &BTreeMap<String, Vec<(PredictedRepair, f64)>>,
) -> Result<(f64, Metrics), EvalError> {
    let mut thresholds: Vec<f64> = scored.values().flatten().map(|(_, s)| *s).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut best: Option<(f64, Metrics)> = None;
    for &theta in &thresholds {
        let preds = scored
            .iter()
            .map(|(id, ps)| {
                (
                    id.clone(),
                    ps.iter().filter(|(_, s)| *s >= theta).map(|(p, _)| p.clone()).collect(),
                )
            })
            .collect();
        let m = evaluate(gold, &preds)?;
        if best.as_ref().is_none_or(|(_, b)| m.scope_f1() > b.scope_f1()) {
            best = Some((theta, m));
        }
    }
    match best {
        Some(b) => Ok(b),
        None => Ok((f64::NEG_INFINITY, evaluate(gold, &BTreeMap::new())?)),
    }
}

/// Token-coordinate spans of an unspliced hypothesis on a linear lattice.
pub fn hypothesis_prediction(lattice: &WordLattice, h: &RepairHypothesis) -> Result<PredictedRepair, EvalError> {
    let edge = |id: &EdgeId| {
        lattice
            .edge(*id)
            .ok_or_else(|| EvalError::Pipeline(format!("lattice {}: no edge {id}", lattice.turn_id)))
    };
    let span = |ids: &[EdgeId]| -> Result<Span, EvalError> {
        match (ids.first(), ids.last()) {
            (Some(a), Some(b)) => Ok([edge(a)?.from as usize, edge(b)?.to as usize]),
            _ => Err(EvalError::Pipeline("empty span".into())),
        }
    };
    Ok(PredictedRepair {
        ip: edge(&h.ip_edge)?.from as usize,
        rd: span(&h.candidate.pre_edge_ids)?,
        rs: span(&h.candidate.post_edge_ids)?,
    })
}

/// Scores every trigger on held-out turns and calibrates the acceptance
/// threshold against their gold repairs.
pub fn calibrate_model_theta(
    model: &RepairModel,
    lex: &Lexicon,
    lattices: &[WordLattice],
    gold: &[AnnotatedTurn],
    config: &PipelineConfig,
) -> Result<(f64, Metrics), EvalError> {
    let mut scored: BTreeMap<String, Vec<(PredictedRepair, f64)>> = BTreeMap::new();
    for lattice in lattices {
        let entry = scored.entry(lattice.turn_id.clone()).or_default();
        let results = score_triggers(lattice, model, lex, config).map_err(|e| EvalError::Pipeline(e.to_string()))?;
        for (_, best) in results {
            if let Some(h) = best {
                entry.push((hypothesis_prediction(lattice, &h)?, h.score));
            }
        }
    }
    calibrate_theta(gold, &scored)
}

/// Plain-text table: one row per labelled run.
pub fn format_table(rows: &[(&str, Metrics)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let _ = writeln!(s, "{:label_w$} | {:^21} | {:^21}", "", "Detection", "Correct scope");
    let _ = writeln!(
        s,
        "{:label_w$} | {:>9} {:>11} | {:>9} {:>11}",
        "", "Recall", "Precision", "Recall", "Precision"
    );
    let _ = writeln!(s, "{}-+-{}-+-{}", "-".repeat(label_w), "-".repeat(21), "-".repeat(21));
    for (label, m) in rows {
        let _ = writeln!(
            s,
            "{label:label_w$} | {:>8.1}% {:>10.1}% | {:>8.1}% {:>10.1}%",
            m.detection_recall, m.detection_precision, m.scope_recall, m.scope_precision
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::RepairAnnotation;

    fn gold_turn(id: &str, repairs: &[(Span, Span)]) -> AnnotatedTurn {
        AnnotatedTurn {
            turn_id: id.into(),
            tokens: (0..20).map(|i| format!("w{i}")).collect(),
            repairs: repairs
                .iter()
                .map(|&(rd, rs)| RepairAnnotation {
                    rd,
                    et: None,
                    rs,
                    links: (1..=rd[1] - rd[0]).map(|j| [j, 0]).collect(),
                })
                .collect(),
        }
    }

    fn pred(rd: Span, rs: Span) -> PredictedRepair {
        PredictedRepair { ip: rd[1] - 1, rd, rs }
    }

    #[test]
    fn perfect_predictions() {
        let gold: Vec<_> = (0..10)
            .map(|i| gold_turn(&format!("t{i}"), &[([2, 4], [4, 6])]))
            .collect();
        let preds = gold
            .iter()
            .map(|t| (t.turn_id.clone(), vec![pred([2, 4], [4, 6])]))
            .collect();
        let m = evaluate(&gold, &preds).unwrap();
        assert_eq!(
            (m.detection_recall, m.detection_precision, m.scope_recall, m.scope_precision),
            (100.0, 100.0, 100.0, 100.0)
        );
    }

    #[test]
    fn half_right() {
        let gold = vec![gold_turn("a", &[([2, 4], [4, 6]), ([10, 11], [11, 12])])];
        let preds = BTreeMap::from([(
            "a".to_string(),
            vec![pred([2, 4], [4, 6]), pred([7, 8], [8, 9])],
        )]);
        let m = evaluate(&gold, &preds).unwrap();
        assert_eq!((m.detection_recall, m.detection_precision), (50.0, 50.0));
        assert_eq!((m.scope_recall, m.scope_precision), (50.0, 50.0));
    }

    #[test]
    fn detection_without_scope() {
        let gold = vec![gold_turn("a", &[([2, 4], [4, 6])])];
        let preds = BTreeMap::from([("a".to_string(), vec![pred([3, 4], [4, 5])])]);
        let m = evaluate(&gold, &preds).unwrap();
        assert_eq!((m.detection_hits, m.scope_hits), (1, 0));
    }

    #[test]
    fn unknown_turn_is_an_error() {
        let gold = vec![gold_turn("a", &[])];
        let preds = BTreeMap::from([("b".to_string(), vec![])]);
        assert_eq!(evaluate(&gold, &preds).unwrap_err(), EvalError::UnknownTurn("b".into()));
    }

    #[test]
    fn table_layout() {
        let m = Metrics {
            detection_recall: 71.0,
            detection_precision: 85.0,
            scope_recall: 62.0,
            scope_precision: 83.0,
            gold: 0,
            predicted: 0,
            detection_hits: 0,
            scope_hits: 0,
        };
        let t = format_table(&[("Test 2", m)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("Detection") && lines[0].contains("Correct scope"));
        assert!(lines[3].starts_with("Test 2"));
        assert!(lines[3].contains("71.0%") && lines[3].contains("83.0%"));
        let bar = lines[0].find('|').unwrap();
        assert!(lines.iter().all(|l| l.as_bytes()[bar] == b'|' || l.as_bytes()[bar] == b'+'));
    }

    #[test]
    fn calibration_prefers_f1() {
        let gold = vec![gold_turn("a", &[([2, 4], [4, 6])]), gold_turn("b", &[])];
        let scored = BTreeMap::from([
            ("a".to_string(), vec![(pred([2, 4], [4, 6]), -1.0)]),
            ("b".to_string(), vec![(pred([7, 8], [8, 9]), -3.0)]),
        ]);
        let (theta, m) = calibrate_theta(&gold, &scored).unwrap();
        assert_eq!(theta, -1.0);
        assert_eq!((m.scope_recall, m.scope_precision), (100.0, 100.0));
    }

    fn lm() -> TrigramLM {
        TrigramLM::train(&[vec!["i", "can", "meet"], vec!["i", "can", "go"], vec!["we", "meet"]], 0.5).unwrap()
    }

    #[test]
    fn linear_lattice_has_one_path() {
        let l = crate::lattice::linear_lattice(&["i", "can", "meet"], "t").unwrap();
        let best = select_best_path(&l, &lm()).unwrap();
        assert_eq!(best.edge_ids, vec![0, 1, 2]);
        assert_eq!(best.score, path_score(&l, &[0, 1, 2], &lm()));
    }

    #[test]
    fn diamond_picks_the_higher_branch() {
        use crate::lattice::WordEdge;
        let lm = lm();
        let edges = vec![
            WordEdge::new(0, 0, 1, "i"),
            WordEdge::new(1, 1, 2, "can").with_acoustic(-2.0),
            WordEdge::new(2, 1, 2, "zebra").with_acoustic(-0.5),
            WordEdge::new(3, 2, 3, "meet"),
        ];
        let l = WordLattice::new("d", 0..=3, 0, 3, edges).unwrap();
        let via_can = path_score(&l, &[0, 1, 3], &lm);
        let via_zebra = path_score(&l, &[0, 2, 3], &lm);
        let best = select_best_path(&l, &lm).unwrap();
        let want = if via_can >= via_zebra { vec![0, 1, 3] } else { vec![0, 2, 3] };
        assert_eq!(best.edge_ids, want);
        assert_eq!(best.score, via_can.max(via_zebra));
    }

    #[test]
    fn exact_ties_go_to_smaller_edge_ids() {
        use crate::lattice::WordEdge;
        let edges = vec![
            WordEdge::new(5, 0, 1, "can"),
            WordEdge::new(2, 0, 1, "can"),
            WordEdge::new(7, 1, 2, "meet"),
        ];
        let l = WordLattice::new("tie", 0..=2, 0, 2, edges).unwrap();
        assert_eq!(select_best_path(&l, &lm()).unwrap().edge_ids, vec![2, 7]);
    }
}

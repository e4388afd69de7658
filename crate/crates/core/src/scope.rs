//! The scope model: scores a (reparans, reparandum) pair as a translation
//! pair and picks the most probable segmentation around an interruption point.
//!
//! `P(RD | RS) = P(m | l) * prod_j sum_{i=0..l} P(i | j, m, l) * r(RD_j, RS_i)`
//! where `RS_0` is the empty (NULL) word and `r` interpolates word, semantic
//! class and POS replacement probabilities. Because every factor of the joint
//! depends on a single alignment position, the sum over all `(l+1)^m`
//! alignment vectors collapses to this product of sums.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::EdgeId;
use crate::lexicon::Triple;
use crate::smoothing::CondTable;
use crate::tag_lattice::{PartialPath, PostContext};

/// Context key used for the NULL reparans word (alignment position 0).
pub const NULL_CONTEXT: &str = "<null>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScopeError {
    #[error("reparandum length {m} / reparans length {l} outside window {window}")]
    OutOfWindow { m: usize, l: usize, window: usize },
    #[error("invalid scope model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.2,
        }
    }
}

impl Weights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ScopeError> {
        let w = Weights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ScopeError> {
        let Weights { alpha, beta, gamma } = *self;
        if alpha < 0.0 || beta < 0.0 || gamma < 0.0 || ((alpha + beta + gamma) - 1.0).abs() > 1e-12 {
            return Err(ScopeError::Invalid(format!(
                "weights ({alpha}, {beta}, {gamma}) must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }
}

/// A replacement distribution `P(rd symbol | rs symbol or NULL)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplacementTable {
    /// Event that out-of-vocabulary reparandum symbols map to.
    pub unknown: String,
    pub table: CondTable<String, String>,
}

impl ReplacementTable {
    pub fn prob(&self, rd: &str, rs: Option<&str>) -> f64 {
        let event = if self.table.contains_event(rd) {
            rd
        } else {
            self.unknown.as_str()
        };
        self.table.prob(event, rs.unwrap_or(NULL_CONTEXT))
    }

    fn max_row_error(&self) -> f64 {
        self.table
            .rows
            .keys()
            .map(String::as_str)
            .chain([NULL_CONTEXT, "<never-seen-context>"])
            .map(|ctx| (self.table.row_sum(ctx) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopeModelParams {
    pub window: usize,
    pub weights: Weights,
    /// Acceptance threshold on the per-reparandum-word log-probability.
    pub theta: f64,
    /// `length[l-1][m-1] = P(m | l)`.
    pub length: Vec<Vec<f64>>,
    /// `alignment[l-1][m-1][j-1][i] = P(a_j = i | j, m, l)`, `i in 0..=l`.
    pub alignment: Vec<Vec<Vec<Vec<f64>>>>,
    pub word_repl: ReplacementTable,
    pub pos_repl: ReplacementTable,
    pub sem_repl: ReplacementTable,
}

impl ScopeModelParams {
    pub fn length_prob(&self, m: usize, l: usize) -> f64 {
        self.length[l - 1][m - 1]
    }

    pub fn alignment_prob(&self, i: usize, j: usize, m: usize, l: usize) -> f64 {
        self.alignment[l - 1][m - 1][j - 1][i]
    }

    /// Checks table shapes and every normalization invariant. Returns the
    /// worst replacement-row deviation on success.
    pub fn validate(&self) -> Result<f64, ScopeError> {
        self.weights.validate()?;
        let w = self.window;
        if w == 0 || self.length.len() != w || self.alignment.len() != w {
            return Err(ScopeError::Invalid(format!("tables do not match window {w}")));
        }
        if !self.theta.is_finite() && self.theta != f64::INFINITY && self.theta != f64::NEG_INFINITY {
            return Err(ScopeError::Invalid("theta is NaN".into()));
        }
        for l in 1..=w {
            let row = &self.length[l - 1];
            if row.len() != w || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(p > 0.0)) {
                return Err(ScopeError::Invalid(format!("length row l={l} is not a distribution")));
            }
            if self.alignment[l - 1].len() != w {
                return Err(ScopeError::Invalid(format!("alignment block l={l} has wrong shape")));
            }
            for m in 1..=w {
                let block = &self.alignment[l - 1][m - 1];
                if block.len() != m {
                    return Err(ScopeError::Invalid(format!("alignment block (m={m}, l={l}) has wrong shape")));
                }
                for (j, dist) in block.iter().enumerate() {
                    if dist.len() != l + 1
                        || (dist.iter().sum::<f64>() - 1.0).abs() > 1e-9
                        || dist.iter().any(|&p| !(p > 0.0))
                    {
                        return Err(ScopeError::Invalid(format!(
                            "alignment row (j={}, m={m}, l={l}) is not a distribution",
                            j + 1
                        )));
                    }
                }
            }
        }
        let mut worst: f64 = 0.0;
        for (name, t) in [("word", &self.word_repl), ("pos", &self.pos_repl), ("sem", &self.sem_repl)] {
            if !t.table.contains_event(t.unknown.as_str()) {
                return Err(ScopeError::Invalid(format!("{name} table lacks its unknown event")));
            }
            let err = t.max_row_error();
            if err > 1e-6 {
                return Err(ScopeError::Invalid(format!("{name} replacement row off by {err}")));
            }
            worst = worst.max(err);
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }
}

/// Interpolated replacement probability; `rs = None` is the NULL word.
pub fn replacement_prob(params: &ScopeModelParams, rd: &Triple, rs: Option<&Triple>) -> f64 {
    let Weights { alpha, beta, gamma } = params.weights;
    alpha * params.word_repl.prob(&rd.word, rs.map(|t| t.word.as_str()))
        + beta * params.sem_repl.prob(&rd.sem, rs.map(|t| t.sem.as_str()))
        + gamma * params.pos_repl.prob(&rd.pos, rs.map(|t| t.pos.as_str()))
}

/// `P(RD | RS)` marginalized over alignments.
pub fn pair_prob(params: &ScopeModelParams, rd: &[Triple], rs: &[Triple]) -> Result<f64, ScopeError> {
    let (m, l, window) = (rd.len(), rs.len(), params.window);
    if m == 0 || l == 0 || m > window || l > window {
        return Err(ScopeError::OutOfWindow { m, l, window });
    }
    let mut p = params.length_prob(m, l);
    for (j, rd_j) in rd.iter().enumerate() {
        let dist = &params.alignment[l - 1][m - 1][j];
        let mut inner = dist[0] * replacement_prob(params, rd_j, None);
        for (i, rs_i) in rs.iter().enumerate() {
            inner += dist[i + 1] * replacement_prob(params, rd_j, Some(rs_i));
        }
        p *= inner;
    }
    Ok(p)
}

/// A reparandum / editing term / reparans segmentation around one IP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub reparandum: Vec<Triple>,
    pub editing_len: usize,
    pub editing_words: Vec<String>,
    pub reparans: Vec<Triple>,
    /// Word edges of the reparandum, in path order.
    pub pre_edge_ids: Vec<EdgeId>,
    pub editing_edge_ids: Vec<EdgeId>,
    /// Word edges of the reparans, in path order.
    pub post_edge_ids: Vec<EdgeId>,
}

impl Candidate {
    pub fn m(&self) -> usize {
        self.reparandum.len()
    }

    pub fn l(&self) -> usize {
        self.reparans.len()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.pre_edge_ids
            .iter()
            .chain(&self.editing_edge_ids)
            .chain(&self.post_edge_ids)
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairHypothesis {
    pub candidate: Candidate,
    /// `ln P(RD | RS) / m`.
    pub score: f64,
    pub ip_edge: EdgeId,
}

/// Every (m, l) split: reparandum = last `m` of `pre`, reparans = first `l`
/// of the post context. Ordered by m, then l.
pub fn enumerate_candidates(pre: &PartialPath, post: &PostContext, window: usize) -> Vec<Candidate> {
    let max_m = window.min(pre.triples.len());
    let max_l = window.min(post.path.triples.len());
    let mut out = Vec::with_capacity(max_m * max_l);
    for m in 1..=max_m {
        let start = pre.triples.len() - m;
        for l in 1..=max_l {
            out.push(Candidate {
                reparandum: pre.triples[start..].to_vec(),
                editing_len: post.editing_len,
                editing_words: post.editing_words.clone(),
                reparans: post.path.triples[..l].to_vec(),
                pre_edge_ids: pre.edge_ids[start..].to_vec(),
                editing_edge_ids: post.editing_edge_ids.clone(),
                post_edge_ids: post.path.edge_ids[..l].to_vec(),
            });
        }
    }
    out
}

/// Per-reparandum-word log-probability of a candidate.
pub fn candidate_score(params: &ScopeModelParams, c: &Candidate) -> Result<f64, ScopeError> {
    Ok(pair_prob(params, &c.reparandum, &c.reparans)?.ln() / c.m() as f64)
}

/// The argmax candidate regardless of threshold. Ties go to smaller m, then
/// smaller l, then the earlier candidate.
pub fn best_scored(
    params: &ScopeModelParams,
    candidates: &[Candidate],
    ip_edge: EdgeId,
) -> Result<Option<RepairHypothesis>, ScopeError> {
    let mut best: Option<(f64, usize)> = None;
    for (idx, c) in candidates.iter().enumerate() {
        let score = candidate_score(params, c)?;
        let better = match best {
            None => true,
            Some((s, b)) => {
                let prev = &candidates[b];
                score > s || (score == s && (c.m(), c.l()) < (prev.m(), prev.l()))
            }
        };
        if better {
            best = Some((score, idx));
        }
    }
    Ok(best.map(|(score, idx)| RepairHypothesis {
        candidate: candidates[idx].clone(),
        score,
        ip_edge,
    }))
}

/// The argmax candidate if its score reaches `params.theta`.
pub fn best_segmentation(
    params: &ScopeModelParams,
    candidates: &[Candidate],
    ip_edge: EdgeId,
) -> Result<Option<RepairHypothesis>, ScopeError> {
    best_segmentation_with(params, candidates, ip_edge, params.theta)
}

pub fn best_segmentation_with(
    params: &ScopeModelParams,
    candidates: &[Candidate],
    ip_edge: EdgeId,
    theta: f64,
) -> Result<Option<RepairHypothesis>, ScopeError> {
    Ok(best_scored(params, candidates, ip_edge)?.filter(|h| h.score >= theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::Lexicon;
    use crate::tag_lattice::{PartialPath, PostContext};
    use crate::training::{collect_counts, estimate_scope_model, AnnotatedTurn, RepairAnnotation, TrainConfig};

    fn lex() -> Lexicon {
        Lexicon::from_json(
            r#"{"pos_table":{"i":{"PRON":1.0},"we":{"PRON":1.0},"can":{"AUX":1.0},"cannot":{"AUX":1.0},
                "on":{"PREP":1.0},"monday":{"NOUN":1.0},"tuesday":{"NOUN":1.0},"meet":{"VERB":1.0}},
                "sem_table":{"i":"PERSON","we":"PERSON","monday":"DAY","tuesday":"DAY"}}"#,
        )
        .unwrap()
    }

    fn params() -> ScopeModelParams {
        let turns = [
            ("i cannot no i can meet", [0, 2], Some([2, 3]), [3, 5], vec![[1, 1], [2, 2]]),
            ("we meet on monday on tuesday", [2, 4], None, [4, 6], vec![[1, 1], [2, 2]]),
            ("i can meet on uh meet", [3, 4], Some([4, 5]), [5, 6], vec![[1, 0]]),
            ("we we can meet", [0, 1], None, [1, 2], vec![[1, 1]]),
        ];
        let corpus: Vec<AnnotatedTurn> = turns
            .into_iter()
            .enumerate()
            .map(|(k, (text, rd, et, rs, links))| AnnotatedTurn {
                turn_id: format!("t{k}"),
                tokens: text.split_whitespace().map(String::from).collect(),
                repairs: vec![RepairAnnotation { rd, et, rs, links }],
            })
            .collect();
        let counts = collect_counts(&corpus, &lex()).unwrap();
        estimate_scope_model(&counts, &TrainConfig::default(), "UNK", "UNK_SEM").unwrap()
    }

    fn triples(text: &str) -> Vec<Triple> {
        let lex = lex();
        text.split_whitespace().map(|w| lex.best_triple(w)).collect()
    }

    /// Sums the joint over every alignment vector explicitly.
    fn brute_force(p: &ScopeModelParams, rd: &[Triple], rs: &[Triple]) -> f64 {
        let (m, l) = (rd.len(), rs.len());
        let mut total = 0.0;
        for code in 0..(l + 1).pow(m as u32) {
            let mut rest = code;
            let mut joint = p.length_prob(m, l);
            for (j, rd_j) in rd.iter().enumerate() {
                let i = rest % (l + 1);
                rest /= l + 1;
                let rs_i = if i == 0 { None } else { Some(&rs[i - 1]) };
                joint *= p.alignment_prob(i, j + 1, m, l) * replacement_prob(p, rd_j, rs_i);
            }
            total += joint;
        }
        total
    }

    #[test]
    fn marginal_matches_brute_force() {
        let p = params();
        let words = ["i", "cannot", "monday", "on", "zebra"];
        for m in 1..=4 {
            for l in 1..=4 {
                let rd: Vec<Triple> = (0..m).map(|k| lex().best_triple(words[k % 5])).collect();
                let rs: Vec<Triple> = (0..l).map(|k| lex().best_triple(words[(k + 2) % 5])).collect();
                let fast = pair_prob(&p, &rd, &rs).unwrap();
                let slow = brute_force(&p, &rd, &rs);
                assert!(((fast - slow) / slow).abs() < 1e-12, "m={m} l={l}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn trained_pair_outscores_mismatch() {
        let p = params();
        let good = pair_prob(&p, &triples("i cannot"), &triples("i can")).unwrap();
        let bad = pair_prob(&p, &triples("i cannot"), &triples("meet on")).unwrap();
        assert!(good > bad);
    }

    #[test]
    fn out_of_window_is_rejected() {
        let p = params();
        let five = triples("i can meet on monday");
        assert_eq!(
            pair_prob(&p, &five, &triples("i")),
            Err(ScopeError::OutOfWindow { m: 5, l: 1, window: 4 })
        );
        assert!(pair_prob(&p, &[], &triples("i")).is_err());
    }

    #[test]
    fn trained_params_validate() {
        let p = params();
        assert!(p.validate().unwrap() < 1e-12);
        let mut broken = p.clone();
        broken.length[0][0] += 0.1;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(Weights::new(0.5, 0.3, 0.2).is_ok());
        assert!(Weights::new(0.5, 0.5, 0.2).is_err());
        assert!(Weights::new(1.2, -0.1, -0.1).is_err());
    }

    fn path(text: &str, first_id: EdgeId) -> PartialPath {
        let t = triples(text);
        PartialPath {
            edge_ids: (first_id..first_id + t.len() as EdgeId).collect(),
            triples: t,
            pos_score: 0.0,
        }
    }

    #[test]
    fn sixteen_candidates_ordered_by_m_then_l() {
        let pre = path("we can meet on", 0);
        let post = PostContext {
            editing_len: 0,
            editing_words: vec![],
            editing_edge_ids: vec![],
            path: path("on tuesday i can", 4),
        };
        let c = enumerate_candidates(&pre, &post, 4);
        assert_eq!(c.len(), 16);
        let order: Vec<(usize, usize)> = c.iter().map(|c| (c.m(), c.l())).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        assert_eq!(c[0].pre_edge_ids, vec![3]);
        assert_eq!(c[15].post_edge_ids, vec![4, 5, 6, 7]);
        let short = PostContext {
            path: path("on", 4),
            ..post
        };
        assert_eq!(enumerate_candidates(&pre, &short, 4).len(), 4);
    }

    #[test]
    fn worked_example_picks_two_by_two() {
        let p = params();
        let pre = path("i cannot", 0);
        let post = PostContext {
            editing_len: 1,
            editing_words: vec!["no".into()],
            editing_edge_ids: vec![2],
            path: path("i can meet", 3),
        };
        let c = enumerate_candidates(&pre, &post, 4);
        let best = best_scored(&p, &c, 1).unwrap().unwrap();
        assert_eq!((best.candidate.m(), best.candidate.l()), (2, 2));
        assert_eq!(best.ip_edge, 1);
        let gated = best_segmentation_with(&p, &c, 1, best.score + 1e-9).unwrap();
        assert!(gated.is_none());
        assert!(best_segmentation_with(&p, &c, 1, best.score).unwrap().is_some());
    }

    #[test]
    fn ties_prefer_shorter_reparandum() {
        let p = params();
        let pre = path("zebra zebra", 0);
        let post = PostContext {
            editing_len: 0,
            editing_words: vec![],
            editing_edge_ids: vec![],
            path: path("zebra", 2),
        };
        let mut c = enumerate_candidates(&pre, &post, 4);
        let mut flat = p.clone();
        for row in &mut flat.length {
            row.iter_mut().for_each(|v| *v = 1.0);
        }
        // With P(m|l) = 1 and identical words, m = 1 and m = 2 tie exactly.
        assert_eq!(candidate_score(&flat, &c[0]).unwrap(), candidate_score(&flat, &c[1]).unwrap());
        c.reverse();
        let best = best_scored(&flat, &c, 1).unwrap().unwrap();
        assert_eq!(best.candidate.m(), 1);
    }
}

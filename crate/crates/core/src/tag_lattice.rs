//! POS tag lattice built from a word lattice, and the windowed partial-path
//! expansions the scope model runs on.
//!
//! Every (word edge, tag) pair lands on the tag edge for `(from, to, tag)`;
//! edges sharing a span and tag are merged by summing their `P(tag | word)`
//! and keeping each contributing word alongside its triple.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::lattice::{EdgeId, NodeId, WordEdge, WordLattice};
use crate::lexicon::{Lexicon, Triple};
use crate::ngram::TrigramLM;

#[derive(Debug, Clone, PartialEq)]
pub struct TagWord {
    pub triple: Triple,
    pub acoustic: f64,
    pub edge_id: EdgeId,
    pub ip_prob: f64,
    pub fragment: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub pos: String,
    /// Merged mass; a score, may exceed 1.
    pub prob: f64,
    pub words: Vec<TagWord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagLattice<'a> {
    pub source: &'a WordLattice,
    pub tag_edges: Vec<TagEdge>,
    incoming: HashMap<NodeId, Vec<usize>>,
    /// word edge id -> (tag edge, position in its word list)
    by_word_edge: HashMap<EdgeId, Vec<(usize, usize)>>,
}

/// A materialized path: one word choice and one tag per position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialPath {
    pub triples: Vec<Triple>,
    pub edge_ids: Vec<EdgeId>,
    pub pos_score: f64,
}

impl PartialPath {
    fn rank_key(&self) -> (Vec<EdgeId>, Vec<&str>) {
        (self.edge_ids.clone(), self.triples.iter().map(|t| t.pos.as_str()).collect())
    }
}

/// Right-hand context of an IP: the skipped editing term and the candidate
/// reparans material that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostContext {
    pub editing_len: usize,
    pub editing_words: Vec<String>,
    pub editing_edge_ids: Vec<EdgeId>,
    pub path: PartialPath,
}

pub fn build_tag_lattice<'a>(lattice: &'a WordLattice, lex: &Lexicon) -> TagLattice<'a> {
    let mut tag_edges: Vec<TagEdge> = Vec::new();
    let mut slot: HashMap<(NodeId, NodeId, String), usize> = HashMap::new();
    let mut by_word_edge: HashMap<EdgeId, Vec<(usize, usize)>> = HashMap::new();
    for edge in lattice.edges_in_order() {
        for (tag, p) in lex.pos_distribution(&edge.word) {
            let idx = *slot
                .entry((edge.from, edge.to, tag.clone()))
                .or_insert_with(|| {
                    tag_edges.push(TagEdge {
                        from: edge.from,
                        to: edge.to,
                        pos: tag.clone(),
                        prob: 0.0,
                        words: Vec::new(),
                    });
                    tag_edges.len() - 1
                });
            let te = &mut tag_edges[idx];
            te.prob += p;
            te.words.push(tag_word(edge, lex.triple(&edge.word, tag)));
            by_word_edge
                .entry(edge.id)
                .or_default()
                .push((idx, te.words.len() - 1));
        }
    }
    let mut incoming: HashMap<NodeId, Vec<usize>> = HashMap::new();
    for (i, te) in tag_edges.iter().enumerate() {
        incoming.entry(te.to).or_default().push(i);
    }
    TagLattice {
        source: lattice,
        tag_edges,
        incoming,
        by_word_edge,
    }
}

fn tag_word(edge: &WordEdge, triple: Triple) -> TagWord {
    TagWord {
        triple,
        acoustic: edge.acoustic,
        edge_id: edge.id,
        ip_prob: edge.ip_prob,
        fragment: edge.fragment,
    }
}

/// POS-trigram log-probability of a tag sequence from a sentence-start history.
pub fn score_pos_path<S: AsRef<str>>(trigram: &TrigramLM, tags: &[S]) -> f64 {
    trigram.score(tags)
}

fn rank(mut paths: Vec<PartialPath>, beam: usize) -> Vec<PartialPath> {
    paths.sort_by(|a, b| {
        b.pos_score
            .total_cmp(&a.pos_score)
            .then_with(|| a.rank_key().cmp(&b.rank_key()))
    });
    paths.truncate(beam);
    paths
}

fn finish(trigram: &TrigramLM, triples: Vec<Triple>, edge_ids: Vec<EdgeId>) -> PartialPath {
    let pos_score = score_pos_path(trigram, &triples.iter().map(|t| t.pos.as_str()).collect::<Vec<_>>());
    PartialPath {
        triples,
        edge_ids,
        pos_score,
    }
}

impl<'a> TagLattice<'a> {
    /// Tag edges (and word slots) a word edge contributed to.
    pub fn slots_of(&self, edge: EdgeId) -> &[(usize, usize)] {
        self.by_word_edge.get(&edge).map_or(&[], Vec::as_slice)
    }

    /// Paths of `window` words ending with the IP word (shorter only when
    /// the lattice start cuts them off), ranked by POS score, best `beam`.
    pub fn expand_pre_context(
        &self,
        ip_edge: EdgeId,
        window: usize,
        beam: usize,
        trigram: &TrigramLM,
    ) -> Vec<PartialPath> {
        let mut complete = Vec::new();
        // Stack of reversed partial paths: (tag edge, word slot) from the IP backwards.
        let mut stack: Vec<Vec<(usize, usize)>> = self
            .slots_of(ip_edge)
            .iter()
            .map(|&s| vec![s])
            .collect();
        while let Some(rev) = stack.pop() {
            let head = &self.tag_edges[rev.last().expect("non-empty").0];
            let preds = self.incoming.get(&head.from);
            if rev.len() == window || head.from == self.source.start || preds.is_none() {
                let (triples, edge_ids) = rev
                    .iter()
                    .rev()
                    .map(|&(te, w)| {
                        let word = &self.tag_edges[te].words[w];
                        (word.triple.clone(), word.edge_id)
                    })
                    .unzip();
                complete.push(finish(trigram, triples, edge_ids));
                continue;
            }
            for &te in preds.into_iter().flatten() {
                for w in 0..self.tag_edges[te].words.len() {
                    let mut next = rev.clone();
                    next.push((te, w));
                    stack.push(next);
                }
            }
        }
        rank(complete, beam)
    }

    /// For every continuation after the IP word: skip the longest editing
    /// term, then take up to `window` words as reparans context. Ranked by
    /// the POS score of the non-skipped part, best `beam`.
    pub fn expand_post_context(
        &self,
        ip_edge: EdgeId,
        window: usize,
        beam: usize,
        trigram: &TrigramLM,
        lex: &Lexicon,
    ) -> Vec<PostContext> {
        let lattice = self.source;
        let Some(ip) = lattice.edge(ip_edge) else {
            return Vec::new();
        };
        let horizon = lex.max_editing_term_len() + window;
        let mut outgoing: HashMap<NodeId, Vec<&WordEdge>> = HashMap::new();
        for e in &lattice.edges {
            outgoing.entry(e.from).or_default().push(e);
        }

        let mut word_paths: Vec<Vec<&WordEdge>> = Vec::new();
        let mut stack: Vec<(NodeId, Vec<&WordEdge>)> = vec![(ip.to, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            let next = outgoing.get(&node).filter(|_| path.len() < horizon);
            match next {
                Some(edges) => {
                    for &e in edges {
                        let mut p = path.clone();
                        p.push(e);
                        stack.push((e.to, p));
                    }
                }
                None => word_paths.push(path),
            }
        }

        let mut seen = BTreeSet::new();
        let mut out: Vec<PostContext> = Vec::new();
        for path in word_paths {
            let words: Vec<&str> = path.iter().map(|e| e.word.as_str()).collect();
            let k = lex.match_editing_term(&words);
            let reparans = &path[k..path.len().min(k + window)];
            if reparans.is_empty() {
                continue;
            }
            let editing_edge_ids: Vec<EdgeId> = path[..k].iter().map(|e| e.id).collect();
            for triples in self.tag_choices(reparans) {
                let edge_ids: Vec<EdgeId> = reparans.iter().map(|e| e.id).collect();
                let key = (
                    editing_edge_ids.clone(),
                    edge_ids.clone(),
                    triples.iter().map(|t| t.pos.clone()).collect::<Vec<_>>(),
                );
                if !seen.insert(key) {
                    continue;
                }
                out.push(PostContext {
                    editing_len: k,
                    editing_words: words[..k].iter().map(|w| w.to_string()).collect(),
                    editing_edge_ids: editing_edge_ids.clone(),
                    path: finish(trigram, triples, edge_ids),
                });
            }
        }
        out.sort_by(|a, b| {
            b.path
                .pos_score
                .total_cmp(&a.path.pos_score)
                .then_with(|| a.editing_edge_ids.cmp(&b.editing_edge_ids))
                .then_with(|| a.path.rank_key().cmp(&b.path.rank_key()))
        });
        out.truncate(beam);
        out
    }

    /// Cartesian product of the tag readings of each word edge.
    fn tag_choices(&self, edges: &[&WordEdge]) -> Vec<Vec<Triple>> {
        let mut acc: Vec<Vec<Triple>> = vec![Vec::new()];
        for e in edges {
            let readings: Vec<&Triple> = self
                .slots_of(e.id)
                .iter()
                .map(|&(te, w)| &self.tag_edges[te].words[w].triple)
                .collect();
            acc = acc
                .into_iter()
                .flat_map(|prefix| {
                    readings.iter().map(move |t| {
                        let mut p = prefix.clone();
                        p.push((*t).clone());
                        p
                    })
                })
                .collect();
        }
        acc
    }
}

//! Word lattices: data model, validation, ordering and the line-oriented
//! record format.
//!
//! A lattice is a DAG over opaque integer nodes. Each edge carries a word,
//! a natural-log acoustic score and the two trigger annotations (the
//! probability that an interruption point follows the word, and a
//! word-fragment flag). Edges inserted by the repair pipeline additionally
//! carry a [`DeletedSegment`] so the original word sequence can be rebuilt.

use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;
pub type EdgeId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("line {line}: malformed lattice record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: malformed token {token:?}: {message}")]
    Token {
        line: usize,
        token: String,
        message: String,
    },
    #[error("lattice {turn_id}: {message}")]
    Invalid { turn_id: String, message: String },
    #[error("lattice {turn_id}: cycle through node {node}")]
    Cycle { turn_id: String, node: NodeId },
    #[error("empty token list for turn {0}")]
    EmptyTurn(String),
}

/// Words and edges removed from a repair path, kept on the first reparans
/// word so the disfluent original stays recoverable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeletedSegment {
    pub reparandum_words: Vec<String>,
    pub editing_term_words: Vec<String>,
    pub original_edge_ids: Vec<EdgeId>,
    /// Log-probability already folded into the carrier's acoustic score.
    pub score_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordEdge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub word: String,
    /// Natural-log acoustic score, `<= 0`.
    pub acoustic: f64,
    pub ip_prob: f64,
    pub fragment: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_slot: Option<DeletedSegment>,
}

impl WordEdge {
    pub fn new(id: EdgeId, from: NodeId, to: NodeId, word: impl Into<String>) -> Self {
        WordEdge {
            id,
            from,
            to,
            word: word.into(),
            acoustic: 0.0,
            ip_prob: 0.0,
            fragment: false,
            repair_slot: None,
        }
    }

    pub fn with_acoustic(mut self, acoustic: f64) -> Self {
        self.acoustic = acoustic;
        self
    }

    pub fn with_ip_prob(mut self, ip_prob: f64) -> Self {
        self.ip_prob = ip_prob;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordLattice {
    pub turn_id: String,
    pub nodes: Vec<NodeId>,
    pub start: NodeId,
    pub end: NodeId,
    pub edges: Vec<WordEdge>,
}

impl WordLattice {
    /// Builds and validates a lattice. `nodes` is normalised to ascending order.
    pub fn new(
        turn_id: impl Into<String>,
        nodes: impl IntoIterator<Item = NodeId>,
        start: NodeId,
        end: NodeId,
        edges: Vec<WordEdge>,
    ) -> Result<Self, LatticeError> {
        let mut nodes: Vec<NodeId> = nodes.into_iter().collect();
        nodes.sort_unstable();
        let lattice = WordLattice {
            turn_id: turn_id.into(),
            nodes,
            start,
            end,
            edges,
        };
        lattice.validate()?;
        Ok(lattice)
    }

    fn invalid(&self, message: impl Into<String>) -> LatticeError {
        LatticeError::Invalid {
            turn_id: self.turn_id.clone(),
            message: message.into(),
        }
    }

    pub fn edge(&self, id: EdgeId) -> Option<&WordEdge> {
        self.edges.iter().find(|e| e.id == id)
    }

    pub fn edge_index(&self) -> HashMap<EdgeId, usize> {
        self.edges.iter().enumerate().map(|(i, e)| (e.id, i)).collect()
    }

    pub fn incoming(&self, node: NodeId) -> impl Iterator<Item = &WordEdge> {
        self.edges.iter().filter(move |e| e.to == node)
    }

    pub fn outgoing(&self, node: NodeId) -> impl Iterator<Item = &WordEdge> {
        self.edges.iter().filter(move |e| e.from == node)
    }

    pub fn next_node_id(&self) -> NodeId {
        self.nodes.iter().max().map_or(0, |n| n + 1)
    }

    pub fn next_edge_id(&self) -> EdgeId {
        self.edges.iter().map(|e| e.id).max().map_or(0, |n| n + 1)
    }

    /// Checks every structural and annotation invariant.
    pub fn validate(&self) -> Result<(), LatticeError> {
        if self.edges.is_empty() {
            return Err(self.invalid("lattice has no edges"));
        }
        let node_set: HashSet<NodeId> = self.nodes.iter().copied().collect();
        if node_set.len() != self.nodes.len() {
            return Err(self.invalid("duplicate node ids"));
        }
        for (name, node) in [("start", self.start), ("end", self.end)] {
            if !node_set.contains(&node) {
                return Err(self.invalid(format!("{name} node {node} is not declared")));
            }
        }
        if self.start == self.end {
            return Err(self.invalid("start and end node coincide"));
        }
        let mut ids = HashSet::new();
        for e in &self.edges {
            if !ids.insert(e.id) {
                return Err(self.invalid(format!("duplicate edge id {}", e.id)));
            }
            if e.from == e.to {
                return Err(self.invalid(format!("edge {} is a self-loop on node {}", e.id, e.from)));
            }
            for node in [e.from, e.to] {
                if !node_set.contains(&node) {
                    return Err(self.invalid(format!(
                        "edge {} references undeclared node {node}",
                        e.id
                    )));
                }
            }
            if !(0.0..=1.0).contains(&e.ip_prob) {
                return Err(self.invalid(format!("edge {} has ip_prob {} outside [0,1]", e.id, e.ip_prob)));
            }
            if !(e.acoustic <= 0.0) || !e.acoustic.is_finite() {
                return Err(self.invalid(format!(
                    "edge {} has acoustic score {} (must be finite and <= 0)",
                    e.id, e.acoustic
                )));
            }
            if e.word.is_empty() {
                return Err(self.invalid(format!("edge {} has an empty word", e.id)));
            }
            if let Some(slot) = &e.repair_slot {
                if slot.reparandum_words.is_empty() || slot.original_edge_ids.is_empty() {
                    return Err(self.invalid(format!("edge {} has an empty repair slot", e.id)));
                }
            }
        }
        self.topological_order()?;

        let forward = self.reachable(self.start, true);
        let backward = self.reachable(self.end, false);
        for &n in &self.nodes {
            if !forward.contains(&n) {
                return Err(self.invalid(format!("node {n} is not reachable from start")));
            }
            if !backward.contains(&n) {
                return Err(self.invalid(format!("node {n} does not reach the end node")));
            }
        }
        Ok(())
    }

    fn reachable(&self, from: NodeId, forward: bool) -> HashSet<NodeId> {
        let mut adjacency: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for e in &self.edges {
            let (a, b) = if forward { (e.from, e.to) } else { (e.to, e.from) };
            adjacency.entry(a).or_default().push(b);
        }
        let mut seen = HashSet::from([from]);
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            for &m in adjacency.get(&n).into_iter().flatten() {
                if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        seen
    }

    /// Kahn's algorithm; ties go to the smallest node id.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, LatticeError> {
        let mut indegree: HashMap<NodeId, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        let mut successors: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for e in &self.edges {
            *indegree.entry(e.to).or_default() += 1;
            indegree.entry(e.from).or_default();
            successors.entry(e.from).or_default().push(e.to);
        }
        let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| Reverse(n))
            .collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(Reverse(n)) = ready.pop() {
            order.push(n);
            for &m in successors.get(&n).into_iter().flatten() {
                let d = indegree.get_mut(&m).expect("successor registered");
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(m));
                }
            }
        }
        if order.len() != indegree.len() {
            let done: BTreeSet<NodeId> = order.iter().copied().collect();
            let node = indegree
                .keys()
                .copied()
                .filter(|n| !done.contains(n))
                .min()
                .unwrap_or_default();
            return Err(LatticeError::Cycle {
                turn_id: self.turn_id.clone(),
                node,
            });
        }
        Ok(order)
    }

    /// Edges sorted by the topological position of their source node, then id.
    pub fn edges_in_order(&self) -> Vec<&WordEdge> {
        let position: HashMap<NodeId, usize> = self
            .topological_order()
            .expect("validated lattice")
            .into_iter()
            .enumerate()
            .map(|(i, n)| (n, i))
            .collect();
        let mut edges: Vec<&WordEdge> = self.edges.iter().collect();
        edges.sort_by_key(|e| (position[&e.from], position[&e.to], e.id));
        edges
    }
}

/// Parses one lattice record (a single JSON object) and validates it.
pub fn parse_lattice(text: &str) -> Result<WordLattice, LatticeError> {
    parse_lattice_line(text, 1)
}

pub fn parse_lattice_line(text: &str, line: usize) -> Result<WordLattice, LatticeError> {
    let lattice: WordLattice = serde_json::from_str(text).map_err(|e| LatticeError::Parse {
        line,
        message: e.to_string(),
    })?;
    lattice.validate()?;
    Ok(lattice)
}

/// Renders a lattice as one record line (no trailing newline).
pub fn serialize_lattice(lattice: &WordLattice) -> Result<String, LatticeError> {
    lattice.validate()?;
    Ok(serde_json::to_string(lattice).expect("lattice serializes"))
}

/// Reads a lattice file: one record per non-blank line.
pub fn parse_lattice_file(text: &str) -> Result<Vec<WordLattice>, LatticeError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_lattice_line(l, i + 1))
        .collect()
}

/// A whitespace token with its optional `|ip=<p>` and `|frag` annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedToken {
    pub word: String,
    pub ip_prob: f64,
    pub fragment: bool,
}

pub fn parse_token(raw: &str, line: usize) -> Result<AnnotatedToken, LatticeError> {
    let err = |message: String| LatticeError::Token {
        line,
        token: raw.to_string(),
        message,
    };
    let mut parts = raw.split('|');
    let word = parts.next().unwrap_or_default().to_lowercase();
    if word.is_empty() {
        return Err(err("empty word".into()));
    }
    let mut token = AnnotatedToken {
        word,
        ip_prob: 0.0,
        fragment: false,
    };
    for annotation in parts {
        if annotation == "frag" {
            token.fragment = true;
        } else if let Some(value) = annotation.strip_prefix("ip=") {
            let p: f64 = value
                .parse()
                .map_err(|_| err(format!("bad ip probability {value:?}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(err(format!("ip probability {p} outside [0,1]")));
            }
            token.ip_prob = p;
        } else {
            return Err(err(format!("unknown annotation {annotation:?}")));
        }
    }
    Ok(token)
}

/// Builds a chain lattice over `tokens`; node `i` precedes token `i`, and
/// edge `i` carries token `i`. Annotation suffixes are honoured.
pub fn linear_lattice<S: AsRef<str>>(tokens: &[S], turn_id: &str) -> Result<WordLattice, LatticeError> {
    let parsed = tokens
        .iter()
        .map(|t| parse_token(t.as_ref(), 1))
        .collect::<Result<Vec<_>, _>>()?;
    lattice_from_tokens(&parsed, turn_id)
}

pub fn lattice_from_tokens(tokens: &[AnnotatedToken], turn_id: &str) -> Result<WordLattice, LatticeError> {
    if tokens.is_empty() {
        return Err(LatticeError::EmptyTurn(turn_id.to_string()));
    }
    let edges = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| WordEdge {
            id: i as EdgeId,
            from: i as NodeId,
            to: i as NodeId + 1,
            word: t.word.clone(),
            acoustic: 0.0,
            ip_prob: t.ip_prob,
            fragment: t.fragment,
            repair_slot: None,
        })
        .collect();
    WordLattice::new(turn_id, 0..=tokens.len() as NodeId, 0, tokens.len() as NodeId, edges)
}

/// One line of a transliteration file: `turn_id<TAB>tokens` or bare tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TransliteratedTurn {
    pub turn_id: String,
    pub tokens: Vec<AnnotatedToken>,
}

impl TransliteratedTurn {
    pub fn to_lattice(&self) -> Result<WordLattice, LatticeError> {
        lattice_from_tokens(&self.tokens, &self.turn_id)
    }

    pub fn to_line(&self) -> String {
        let tokens: Vec<String> = self
            .tokens
            .iter()
            .map(|t| {
                let mut s = t.word.clone();
                if t.ip_prob > 0.0 {
                    s.push_str(&format!("|ip={}", t.ip_prob));
                }
                if t.fragment {
                    s.push_str("|frag");
                }
                s
            })
            .collect();
        format!("{}\t{}", self.turn_id, tokens.join(" "))
    }
}

/// Parses a transliteration file. Turns without an explicit id get
/// `line-<n>` (1-based line number).
pub fn parse_transliterations(text: &str) -> Result<Vec<TransliteratedTurn>, LatticeError> {
    let mut turns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (turn_id, body) = match line.split_once('\t') {
            Some((id, body)) => (id.trim().to_string(), body),
            None => (format!("line-{line_no}"), line),
        };
        let tokens = body
            .split_whitespace()
            .map(|t| parse_token(t, line_no))
            .collect::<Result<Vec<_>, _>>()?;
        if tokens.is_empty() {
            return Err(LatticeError::EmptyTurn(turn_id));
        }
        turns.push(TransliteratedTurn { turn_id, tokens });
    }
    Ok(turns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diamond() -> WordLattice {
        WordLattice::new(
            "d",
            [0, 1, 2],
            0,
            2,
            vec![
                WordEdge::new(0, 0, 1, "i").with_acoustic(-0.5),
                WordEdge::new(1, 1, 2, "can").with_acoustic(-1.0),
                WordEdge::new(2, 1, 2, "cannot").with_acoustic(-1.5).with_ip_prob(0.9),
                WordEdge::new(3, 0, 1, "eye").with_acoustic(-2.25),
            ],
        )
        .unwrap()
    }

    #[test]
    fn minimal_record() {
        let text = r#"{"turn_id":"t","nodes":[0,1],"start":0,"end":1,"edges":[{"id":0,"from":0,"to":1,"word":"hello","acoustic":-1.0,"ip_prob":0.0,"fragment":false}]}"#;
        let l = parse_lattice(text).unwrap();
        assert_eq!(l.nodes.len(), 2);
        assert_eq!(l.edges.len(), 1);
        assert_eq!(serialize_lattice(&l).unwrap(), text);
    }

    #[test]
    fn self_loop_rejected() {
        let text = r#"{"turn_id":"t","nodes":[0,1],"start":0,"end":1,"edges":[{"id":0,"from":0,"to":0,"word":"x","acoustic":0.0,"ip_prob":0.0,"fragment":false},{"id":1,"from":0,"to":1,"word":"y","acoustic":0.0,"ip_prob":0.0,"fragment":false}]}"#;
        let err = parse_lattice(text).unwrap_err();
        assert!(err.to_string().contains("self-loop"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let text = r#"{"turn_id":"t","nodes":[0,1],"start":0,"end":1,"edges":[{"id":0,"from":0,"to":1,"word":"x","acoustic":0.0,"ip_prob":0.0,"fragment":false,"time":3}]}"#;
        assert!(matches!(parse_lattice(text), Err(LatticeError::Parse { line: 1, .. })));
    }

    #[test]
    fn cycle_and_dangling_rejected() {
        let cyc = WordLattice::new(
            "c",
            [0, 1, 2],
            0,
            2,
            vec![
                WordEdge::new(0, 0, 1, "a"),
                WordEdge::new(1, 1, 0, "b"),
                WordEdge::new(2, 1, 2, "c"),
            ],
        );
        assert!(matches!(cyc, Err(LatticeError::Cycle { .. })));
        let dangling = WordLattice::new("x", [0, 1, 2], 0, 1, vec![WordEdge::new(0, 0, 1, "a")]);
        assert!(dangling.unwrap_err().to_string().contains("node 2"));
    }

    #[test]
    fn empty_lattice_cannot_be_serialized() {
        let l = WordLattice {
            turn_id: "e".into(),
            nodes: vec![0, 1],
            start: 0,
            end: 1,
            edges: vec![],
        };
        assert!(serialize_lattice(&l).is_err());
    }

    #[test]
    fn diamond_round_trip() {
        let l = diamond();
        assert_eq!(l.nodes.len(), 3);
        assert_eq!(l.edges.len(), 4);
        let back = parse_lattice(&serialize_lattice(&l).unwrap()).unwrap();
        assert_eq!(back, l);
        assert_eq!(l.topological_order().unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn topological_order_uses_reachability() {
        let l = WordLattice::new(
            "n",
            [9, 0, 5],
            0,
            9,
            vec![WordEdge::new(0, 5, 9, "b"), WordEdge::new(1, 0, 5, "a")],
        )
        .unwrap();
        assert_eq!(l.topological_order().unwrap(), vec![0, 5, 9]);
        let chain = linear_lattice(&["a", "b"], "c").unwrap();
        assert_eq!(chain.topological_order().unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn linear_lattice_shapes() {
        let l = linear_lattice(&["I", "cannot", "no", "i", "can"], "t").unwrap();
        assert_eq!(l.nodes.len(), 6);
        assert_eq!(l.edges.len(), 5);
        assert_eq!(l.edges[0].word, "i");
        let one = linear_lattice(&["hello"], "t").unwrap();
        assert_eq!((one.nodes.len(), one.edges.len()), (2, 1));
        assert!(matches!(linear_lattice::<&str>(&[], "t"), Err(LatticeError::EmptyTurn(_))));
    }

    #[test]
    fn annotation_suffixes() {
        let l = linear_lattice(&["thurs-|frag", "uh", "thursday|ip=0.83"], "t").unwrap();
        assert!(l.edges[0].fragment);
        assert_eq!(l.edges[0].word, "thurs-");
        assert!(!l.edges[1].fragment);
        assert_eq!(l.edges[2].ip_prob, 0.83);
        assert!(linear_lattice(&["a|ip=1.5"], "t").is_err());
        assert!(linear_lattice(&["a|loud"], "t").is_err());
    }

    #[test]
    fn transliteration_file() {
        let text = "t1\ti cannot|ip=0.9 no i can\n\nhello world\n";
        let turns = parse_transliterations(text).unwrap();
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[0].turn_id, "t1");
        assert_eq!(turns[1].turn_id, "line-3");
        assert_eq!(turns[0].tokens[1].ip_prob, 0.9);
        let again = parse_transliterations(&turns[0].to_line()).unwrap();
        assert_eq!(again[0], turns[0]);
    }
}

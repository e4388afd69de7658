//! Estimating the scope model and both trigram models from a corpus of
//! turns whose repairs are annotated with reparandum → reparans word links.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::Lexicon;
use crate::ngram::{count_trigrams, NgramError, SymbolTrigrams, TrigramLM, UNK};
use crate::scope::{ReplacementTable, ScopeError, ScopeModelParams, Weights, NULL_CONTEXT};
use crate::smoothing::{check_discount, katz_backoff, SmoothingError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("turn {turn_id}: {message}")]
    BadAnnotation { turn_id: String, message: String },
    #[error("the corpus contains no repairs inside the {0}-word window; nothing to train")]
    NoRepairs(usize),
    #[error("window must be at least 1")]
    Window,
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Ngram(#[from] NgramError),
    #[error(transparent)]
    Scope(#[from] ScopeError),
}

/// Half-open token range `[begin, end)`.
pub type Span = [usize; 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepairAnnotation {
    pub rd: Span,
    #[serde(default)]
    pub et: Option<Span>,
    pub rs: Span,
    /// `[j, i]`: reparandum word `j` (1-based) links to reparans word `i`
    /// (1-based), or `i = 0` when unlinked.
    pub links: Vec<[usize; 2]>,
}

impl RepairAnnotation {
    pub fn m(&self) -> usize {
        self.rd[1] - self.rd[0]
    }

    pub fn l(&self) -> usize {
        self.rs[1] - self.rs[0]
    }

    /// Token index of the last reparandum word.
    pub fn ip(&self) -> usize {
        self.rd[1] - 1
    }

    pub fn editing_span(&self) -> Option<Span> {
        self.et.filter(|s| s[1] > s[0])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedTurn {
    pub turn_id: String,
    pub tokens: Vec<String>,
    pub repairs: Vec<RepairAnnotation>,
}

impl AnnotatedTurn {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |message: String| TrainError::BadAnnotation {
            turn_id: self.turn_id.clone(),
            message,
        };
        let n = self.tokens.len();
        let mut last_end = 0;
        for (k, r) in self.repairs.iter().enumerate() {
            let [rd_b, rd_e] = r.rd;
            let [rs_b, rs_e] = r.rs;
            if rd_b >= rd_e || rs_b >= rs_e || rs_e > n {
                return Err(bad(format!("repair {k}: empty or out-of-range span")));
            }
            let mut cursor = rd_e;
            if let Some([et_b, et_e]) = r.et {
                if et_b < rd_e || et_e < et_b {
                    return Err(bad(format!("repair {k}: editing term out of order")));
                }
                cursor = et_e;
            }
            if rs_b < cursor {
                return Err(bad(format!("repair {k}: reparans overlaps earlier segments")));
            }
            if rd_b < last_end {
                return Err(bad(format!("repair {k}: overlaps the previous repair")));
            }
            last_end = rs_e;
            let mut linked = vec![false; r.m()];
            for &[j, i] in &r.links {
                if j == 0 || j > r.m() {
                    return Err(bad(format!("repair {k}: link source {j} outside reparandum 1..={}", r.m())));
                }
                if i > r.l() {
                    return Err(bad(format!("repair {k}: link target {i} outside reparans 0..={}", r.l())));
                }
                if std::mem::replace(&mut linked[j - 1], true) {
                    return Err(bad(format!("repair {k}: reparandum word {j} linked twice")));
                }
            }
            if let Some(j) = linked.iter().position(|&l| !l) {
                return Err(bad(format!("repair {k}: reparandum word {} has no link", j + 1)));
            }
        }
        Ok(())
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotatedTurn>, TrainError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let turn: AnnotatedTurn =
                serde_json::from_str(line).map_err(|e| TrainError::BadAnnotation {
                    turn_id: format!("line {}", i + 1),
                    message: e.to_string(),
                })?;
            turn.validate()?;
            Ok(turn)
        })
        .collect()
}

pub fn annotations_to_jsonl(turns: &[AnnotatedTurn]) -> String {
    turns
        .iter()
        .map(|t| serde_json::to_string(t).expect("annotation serializes") + "\n")
        .collect()
}

pub type ReplacementCounts = BTreeMap<String, BTreeMap<String, u64>>;

/// Raw event counts. Adding the tables of two corpora gives the tables of
/// their concatenation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountTables {
    pub repairs: u64,
    /// `(m, l)`
    pub length: BTreeMap<(usize, usize), u64>,
    /// `(i, j, m, l)`
    pub alignment: BTreeMap<(usize, usize, usize, usize), u64>,
    /// context (reparans symbol or [`NULL_CONTEXT`]) -> reparandum symbol -> count
    pub word_repl: ReplacementCounts,
    pub pos_repl: ReplacementCounts,
    pub sem_repl: ReplacementCounts,
    pub word_trigrams: SymbolTrigrams,
    pub pos_trigrams: SymbolTrigrams,
    pub word_vocab: BTreeSet<String>,
    pub pos_vocab: BTreeSet<String>,
    pub sem_vocab: BTreeSet<String>,
}

impl AddAssign<&CountTables> for CountTables {
    fn add_assign(&mut self, other: &CountTables) {
        fn merge<K: Ord + Clone>(a: &mut BTreeMap<K, u64>, b: &BTreeMap<K, u64>) {
            for (k, &v) in b {
                *a.entry(k.clone()).or_default() += v;
            }
        }
        self.repairs += other.repairs;
        merge(&mut self.length, &other.length);
        merge(&mut self.alignment, &other.alignment);
        for (a, b) in [
            (&mut self.word_repl, &other.word_repl),
            (&mut self.pos_repl, &other.pos_repl),
            (&mut self.sem_repl, &other.sem_repl),
        ] {
            for (ctx, row) in b {
                merge(a.entry(ctx.clone()).or_default(), row);
            }
        }
        merge(&mut self.word_trigrams, &other.word_trigrams);
        merge(&mut self.pos_trigrams, &other.pos_trigrams);
        self.word_vocab.extend(other.word_vocab.iter().cloned());
        self.pos_vocab.extend(other.pos_vocab.iter().cloned());
        self.sem_vocab.extend(other.sem_vocab.iter().cloned());
    }
}

fn bump(table: &mut ReplacementCounts, ctx: Option<&str>, event: &str) {
    *table
        .entry(ctx.unwrap_or(NULL_CONTEXT).to_string())
        .or_default()
        .entry(event.to_string())
        .or_default() += 1;
}

/// Counts every event the scope model and the two trigrams are estimated from.
pub fn collect_counts(corpus: &[AnnotatedTurn], lex: &Lexicon) -> Result<CountTables, TrainError> {
    let mut c = CountTables::default();
    c.pos_vocab.extend(lex.tags().into_iter().map(str::to_string));
    c.sem_vocab.extend(lex.sem_classes().into_iter().map(str::to_string));
    c.word_vocab.extend(lex.words().into_iter().map(str::to_string));

    let mut word_seqs = Vec::with_capacity(corpus.len());
    let mut pos_seqs = Vec::with_capacity(corpus.len());
    for turn in corpus {
        turn.validate()?;
        let tokens: Vec<String> = turn.tokens.iter().map(|t| t.to_lowercase()).collect();
        let triples: Vec<_> = tokens.iter().map(|t| lex.best_triple(t)).collect();
        for t in &triples {
            c.word_vocab.insert(t.word.clone());
            c.pos_vocab.insert(t.pos.clone());
            c.sem_vocab.insert(t.sem.clone());
        }
        for r in &turn.repairs {
            let (m, l) = (r.m(), r.l());
            c.repairs += 1;
            *c.length.entry((m, l)).or_default() += 1;
            for &[j, i] in &r.links {
                *c.alignment.entry((i, j, m, l)).or_default() += 1;
                let rd = &triples[r.rd[0] + j - 1];
                let rs = (i > 0).then(|| &triples[r.rs[0] + i - 1]);
                bump(&mut c.word_repl, rs.map(|t| t.word.as_str()), &rd.word);
                bump(&mut c.pos_repl, rs.map(|t| t.pos.as_str()), &rd.pos);
                bump(&mut c.sem_repl, rs.map(|t| t.sem.as_str()), &rd.sem);
            }
        }
        pos_seqs.push(triples.iter().map(|t| t.pos.clone()).collect::<Vec<_>>());
        word_seqs.push(tokens);
    }
    c.word_trigrams = count_trigrams(&word_seqs);
    c.pos_trigrams = count_trigrams(&pos_seqs);
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: Weights,
    pub theta: f64,
    pub window: usize,
    pub discount: f64,
}

/// Scope-F1 optimum on 500 held-out synthetic turns (default generator,
/// seeds 1 and 2) with false-alarm and missed IP triggers present.
pub const DEFAULT_THETA: f64 = -1.27;
pub const DEFAULT_WINDOW: usize = 4;
pub const DEFAULT_DISCOUNT: f64 = 0.5;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: Weights::default(),
            theta: DEFAULT_THETA,
            window: DEFAULT_WINDOW,
            discount: DEFAULT_DISCOUNT,
        }
    }
}

fn replacement_table(
    counts: &ReplacementCounts,
    vocab: &BTreeSet<String>,
    unknown: &str,
    discount: f64,
) -> Result<ReplacementTable, SmoothingError> {
    let mut vocab = vocab.clone();
    vocab.insert(unknown.to_string());
    Ok(ReplacementTable {
        unknown: unknown.to_string(),
        table: katz_backoff(counts, &vocab, discount)?,
    })
}

/// Smoothed scope-model tables from counts. Repairs longer than the window
/// on either side do not enter the length and alignment tables.
pub fn estimate_scope_model(
    counts: &CountTables,
    config: &TrainConfig,
    unknown_pos: &str,
    unknown_sem: &str,
) -> Result<ScopeModelParams, TrainError> {
    let TrainConfig {
        weights,
        theta,
        window,
        discount,
    } = *config;
    if window == 0 {
        return Err(TrainError::Window);
    }
    check_discount(discount)?;
    weights.validate()?;
    let in_window = |m: usize, l: usize| (1..=window).contains(&m) && (1..=window).contains(&l);
    if !counts.length.iter().any(|(&(m, l), &n)| n > 0 && in_window(m, l)) {
        return Err(TrainError::NoRepairs(window));
    }

    let mut length_counts: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
    for (&(m, l), &n) in &counts.length {
        if in_window(m, l) {
            *length_counts.entry(l).or_default().entry(m).or_default() += n;
        }
    }
    let lengths: BTreeSet<usize> = (1..=window).collect();
    let length_table = katz_backoff(&length_counts, &lengths, discount)?;
    let length = (1..=window)
        .map(|l| (1..=window).map(|m| length_table.prob(&m, &l)).collect())
        .collect();

    let mut align_counts: BTreeMap<(usize, usize, usize), BTreeMap<usize, u64>> = BTreeMap::new();
    for (&(i, j, m, l), &n) in &counts.alignment {
        if in_window(m, l) {
            *align_counts.entry((j, m, l)).or_default().entry(i).or_default() += n;
        }
    }
    let mut alignment = Vec::with_capacity(window);
    for l in 1..=window {
        let targets: BTreeSet<usize> = (0..=l).collect();
        let uniform = crate::smoothing::uniform(&targets);
        let mut by_m = Vec::with_capacity(window);
        for m in 1..=window {
            let mut rows = Vec::with_capacity(m);
            for j in 1..=m {
                let row = match align_counts.get(&(j, m, l)) {
                    Some(c) => crate::smoothing::katz_row(c, &uniform, discount)?,
                    None => crate::smoothing::KatzRow {
                        seen: BTreeMap::new(),
                        alpha: 1.0,
                    },
                };
                rows.push((0..=l).map(|i| row.prob(&i, uniform[&i])).collect());
            }
            by_m.push(rows);
        }
        alignment.push(by_m);
    }

    let mut word_vocab = counts.word_vocab.clone();
    word_vocab.remove(NULL_CONTEXT);
    let params = ScopeModelParams {
        window,
        weights,
        theta,
        length,
        alignment,
        word_repl: replacement_table(&counts.word_repl, &word_vocab, UNK, discount)?,
        pos_repl: replacement_table(&counts.pos_repl, &counts.pos_vocab, unknown_pos, discount)?,
        sem_repl: replacement_table(&counts.sem_repl, &counts.sem_vocab, unknown_sem, discount)?,
    };
    params.validate()?;
    Ok(params)
}

pub fn train_trigram<S: AsRef<str>>(sequences: &[Vec<S>], discount: f64) -> Result<TrigramLM, TrainError> {
    Ok(TrigramLM::train(sequences, discount)?)
}

//! Browser demo. [`DemoCore`] holds the logic and runs natively; [`Demo`] is
//! its wasm-bindgen face.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use lattice_repair::eval::select_best_path;
use lattice_repair::lattice::{parse_transliterations, WordLattice};
use lattice_repair::lexicon::Triple;
use lattice_repair::model::{RepairModel, TrainSummary};
use lattice_repair::pipeline::{process_turn, score_triggers, PipelineConfig, TurnEdits};
use lattice_repair::scope::{pair_prob, replacement_prob, Weights};
use lattice_repair::synth::{generate_synthetic, SynthSpec};
use lattice_repair::training::TrainConfig;
use lattice_repair::Lexicon;

pub struct DemoCore {
    model: RepairModel,
    lexicon: Lexicon,
    spec: SynthSpec,
    summary: TrainSummary,
    samples: Vec<String>,
}

#[derive(Serialize)]
struct ScoredTrigger {
    edge_id: u32,
    kind: String,
    rd: Vec<String>,
    et: Vec<String>,
    rs: Vec<String>,
    score: Option<f64>,
    accepted: bool,
}

#[derive(Serialize)]
struct ProcessView<'a> {
    input: &'a WordLattice,
    lattice: &'a WordLattice,
    edits: TurnEdits,
    triggers: Vec<ScoredTrigger>,
    best_path: Vec<String>,
    best_edge_ids: Vec<u32>,
    theta: f64,
}

#[derive(Serialize)]
struct WordRow {
    rd: String,
    null: f64,
    replacement: Vec<f64>,
    alignment: Vec<f64>,
    inner: f64,
}

#[derive(Serialize)]
struct PairView {
    m: usize,
    l: usize,
    length_prob: f64,
    prob: f64,
    score: f64,
    rows: Vec<WordRow>,
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

impl DemoCore {
    /// Trains on `n_turns` synthetic turns of the built-in scheduling domain.
    pub fn train(seed: u64, n_turns: usize) -> Result<Self, String> {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::default()
        };
        let (turns, gold) = generate_synthetic(&spec, n_turns).map_err(|e| e.to_string())?;
        let lexicon = spec.lexicon().map_err(|e| e.to_string())?;
        let (model, summary) =
            RepairModel::train(&gold, &lexicon, &TrainConfig::default()).map_err(|e| e.to_string())?;
        let samples = turns
            .iter()
            .zip(&gold)
            .filter(|(_, g)| !g.repairs.is_empty())
            .take(50)
            .map(|(t, _)| t.to_line().split_once('\t').map(|(_, b)| b.to_string()).unwrap_or_default())
            .collect();
        Ok(DemoCore {
            model,
            lexicon,
            spec,
            summary,
            samples,
        })
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string(&self.summary).expect("summary serializes")
    }

    pub fn sample(&self, index: usize) -> String {
        if self.samples.is_empty() {
            return String::new();
        }
        self.samples[index % self.samples.len()].clone()
    }

    /// Runs the cascade on one annotated token line (`word|ip=0.9 ...`).
    pub fn process(&self, line: &str, tau_ip: f64, theta: f64) -> Result<String, String> {
        let turn = parse_transliterations(&format!("demo\t{line}"))
            .map_err(|e| e.to_string())?
            .pop()
            .ok_or("empty input")?;
        let input = turn.to_lattice().map_err(|e| e.to_string())?;
        let config = PipelineConfig {
            tau_ip,
            theta: Some(theta),
            ..PipelineConfig::default()
        };
        let out = process_turn(&input, &self.model, &self.lexicon, &config).map_err(|e| e.to_string())?;
        let scored = score_triggers(&input, &self.model, &self.lexicon, &config).map_err(|e| e.to_string())?;
        let triggers = scored
            .into_iter()
            .map(|(t, h)| {
                let word_list = |ts: &[Triple]| ts.iter().map(|t| t.word.clone()).collect::<Vec<_>>();
                ScoredTrigger {
                    edge_id: t.edge_id,
                    kind: format!("{:?}", t.kind).to_lowercase(),
                    rd: h.as_ref().map(|h| word_list(&h.candidate.reparandum)).unwrap_or_default(),
                    et: h.as_ref().map(|h| h.candidate.editing_words.clone()).unwrap_or_default(),
                    rs: h.as_ref().map(|h| word_list(&h.candidate.reparans)).unwrap_or_default(),
                    score: h.as_ref().map(|h| h.score),
                    accepted: out.edits.iter().any(|e| e.hypothesis.ip_edge == t.edge_id),
                }
            })
            .collect();
        let best = select_best_path(&out.lattice, &self.model.word_lm).map_err(|e| e.to_string())?;
        let view = ProcessView {
            input: &input,
            lattice: &out.lattice,
            edits: TurnEdits::from_output(&out).map_err(|e| e.to_string())?,
            triggers,
            best_path: best.words,
            best_edge_ids: best.edge_ids,
            theta,
        };
        Ok(serde_json::to_string(&view).expect("view serializes"))
    }

    /// Scores one reparandum / reparans pair under the given interpolation
    /// weights, with the per-word alignment sums.
    pub fn pair(&self, reparandum: &str, reparans: &str, alpha: f64, beta: f64, gamma: f64) -> Result<String, String> {
        let mut params = self.model.scope.clone();
        params.weights = Weights::new(alpha, beta, gamma).map_err(|e| e.to_string())?;
        let rd: Vec<Triple> = words(reparandum).iter().map(|w| self.lexicon.best_triple(w)).collect();
        let rs: Vec<Triple> = words(reparans).iter().map(|w| self.lexicon.best_triple(w)).collect();
        let prob = pair_prob(&params, &rd, &rs).map_err(|e| e.to_string())?;
        let (m, l) = (rd.len(), rs.len());
        let rows = rd
            .iter()
            .enumerate()
            .map(|(j, rd_j)| {
                let alignment = params.alignment[l - 1][m - 1][j].clone();
                let null = replacement_prob(&params, rd_j, None);
                let replacement: Vec<f64> = rs.iter().map(|rs_i| replacement_prob(&params, rd_j, Some(rs_i))).collect();
                let inner = alignment[0] * null + replacement.iter().zip(&alignment[1..]).map(|(r, a)| r * a).sum::<f64>();
                WordRow {
                    rd: rd_j.word.clone(),
                    null,
                    replacement,
                    alignment,
                    inner,
                }
            })
            .collect();
        let view = PairView {
            m,
            l,
            length_prob: params.length_prob(m, l),
            prob,
            score: prob.ln() / m as f64,
            rows,
        };
        Ok(serde_json::to_string(&view).expect("view serializes"))
    }

    pub fn default_theta(&self) -> f64 {
        self.model.scope.theta
    }

    pub fn vocabulary(&self) -> String {
        let words: Vec<&str> = self.spec.vocabulary.iter().map(|v| v.word.as_str()).collect();
        words.join(" ")
    }
}

#[wasm_bindgen]
pub struct Demo {
    core: DemoCore,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_turns: u32) -> Result<Demo, JsError> {
        DemoCore::train(seed as u64, n_turns as usize)
            .map(|core| Demo { core })
            .map_err(|e| JsError::new(&e))
    }

    pub fn summary(&self) -> String {
        self.core.summary_json()
    }

    pub fn sample(&self, index: u32) -> String {
        self.core.sample(index as usize)
    }

    #[wasm_bindgen(js_name = defaultTheta)]
    pub fn default_theta(&self) -> f64 {
        self.core.default_theta()
    }

    pub fn vocabulary(&self) -> String {
        self.core.vocabulary()
    }

    pub fn process(&self, line: &str, tau_ip: f64, theta: f64) -> Result<String, JsError> {
        self.core.process(line, tau_ip, theta).map_err(|e| JsError::new(&e))
    }

    pub fn pair(&self, reparandum: &str, reparans: &str, alpha: f64, beta: f64, gamma: f64) -> Result<String, JsError> {
        self.core
            .pair(reparandum, reparans, alpha, beta, gamma)
            .map_err(|e| JsError::new(&e))
    }
}

//! Subcommand implementations. Each `cmd_*` function works on in-memory
//! text so runs can be compared byte for byte; `main` only does file I/O.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use lattice_repair::eval::{calibrate_model_theta, evaluate, format_table, predictions_from_edits, Metrics};
use lattice_repair::lattice::{parse_lattice_file, parse_transliterations, serialize_lattice, WordLattice};
use lattice_repair::model::{RepairModel, TrainSummary};
use lattice_repair::pipeline::{process_turn, PipelineConfig, TurnEdits};
use lattice_repair::scope::Weights;
use lattice_repair::synth::{generate_synthetic, SynthSpec};
use lattice_repair::training::{annotations_to_jsonl, parse_annotations, TrainConfig, DEFAULT_THETA};
use lattice_repair::Lexicon;

#[derive(Debug, Parser)]
#[command(name = "lattice-repair", version, about = "Speech repair detection and correction on word lattices")]
pub struct Cli {
    /// TOML file with default values for any flag; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a model from annotated turns.
    Train(TrainArgs),
    /// Detect repairs and splice corrections into lattices.
    Process(ProcessArgs),
    /// Score an edits file against gold annotations.
    Eval(EvalArgs),
    /// Generate a synthetic disfluent corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Annotated turns, one JSON object per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out gold annotations for threshold calibration.
    #[arg(long, requires = "heldout_turns")]
    pub heldout_gold: Option<PathBuf>,
    /// Held-out transliterations or lattices matching `--heldout-gold`.
    #[arg(long, requires = "heldout_gold")]
    pub heldout_turns: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct ProcessArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Transliterations (`id<TAB>tokens`) or lattice JSON lines.
    #[arg(long)]
    pub input: PathBuf,
    /// Output lattices, one JSON object per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Edits sidecar, one JSON object per turn.
    #[arg(long)]
    pub edits: PathBuf,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub edits: PathBuf,
    /// Row label in the table.
    #[arg(long, default_value = "run")]
    pub label: String,
    /// Also write the metrics as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub n: usize,
    /// Generator spec as JSON; defaults to the built-in scheduling domain.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub repair_rate: Option<f64>,
    /// Put IP probability 1.0 on every planted IP and nowhere else.
    #[arg(long)]
    pub oracle_ip: bool,
    #[arg(long)]
    pub out_turns: PathBuf,
    #[arg(long)]
    pub out_gold: PathBuf,
    #[arg(long)]
    pub out_lexicon: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub discount: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub tau_ip: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub budget_ms: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Contents of `--config`. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub window: Option<usize>,
    pub beam: Option<usize>,
    pub tau_ip: Option<f64>,
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub discount: Option<f64>,
    pub budget_ms: Option<u64>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid config file")
    }
}

/// Flags merged over the config file over built-in defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub window: usize,
    pub beam: usize,
    pub tau_ip: f64,
    pub theta: Option<f64>,
    pub weights: Weights,
    pub discount: f64,
    pub budget: Duration,
    pub jobs: usize,
    pub seed: u64,
}

impl Settings {
    pub fn resolve(file: &FileConfig, model: &ModelFlags, run: &RunFlags) -> Result<Self> {
        let defaults = TrainConfig::default();
        let pipeline = PipelineConfig::default();
        let alpha = model.alpha.or(file.alpha).unwrap_or(defaults.weights.alpha);
        let beta = model.beta.or(file.beta).unwrap_or(defaults.weights.beta);
        let gamma = model.gamma.or(file.gamma).unwrap_or(defaults.weights.gamma);
        let settings = Settings {
            window: run.window.or(file.window).unwrap_or(defaults.window),
            beam: run.beam.or(file.beam).unwrap_or(pipeline.beam),
            tau_ip: run.tau_ip.or(file.tau_ip).unwrap_or(pipeline.tau_ip),
            theta: run.theta.or(file.theta),
            weights: Weights::new(alpha, beta, gamma)?,
            discount: model.discount.or(file.discount).unwrap_or(defaults.discount),
            budget: Duration::from_millis(run.budget_ms.or(file.budget_ms).unwrap_or(pipeline.budget.as_millis() as u64)),
            jobs: run.jobs.or(file.jobs).unwrap_or(0),
            seed: run.seed.or(file.seed).unwrap_or(42),
        };
        settings.pipeline().validate()?;
        if !(settings.discount > 0.0 && settings.discount < 1.0) {
            bail!("--discount {} must lie in (0, 1)", settings.discount);
        }
        Ok(settings)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            tau_ip: self.tau_ip,
            enable_fragment_trigger: true,
            window: self.window,
            beam: self.beam,
            theta: self.theta,
            budget: self.budget,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            weights: self.weights,
            theta: self.theta.unwrap_or(DEFAULT_THETA),
            window: self.window,
            discount: self.discount,
        }
    }
}

impl Default for Settings {
    fn default() -> Self {
        Settings::resolve(&FileConfig::default(), &ModelFlags::default(), &RunFlags::default())
            .expect("defaults are valid")
    }
}

/// Reads turns from transliterations or lattice JSON lines.
pub fn parse_turns(text: &str) -> Result<Vec<WordLattice>> {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.trim_start().starts_with('{') {
        Ok(parse_lattice_file(text)?)
    } else {
        parse_transliterations(text)?
            .iter()
            .map(|t| t.to_lattice().map_err(Into::into))
            .collect()
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot start worker threads")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub summary: TrainSummary,
    pub theta: f64,
    pub calibration: Option<Metrics>,
}

/// Returns the model JSON. When held-out data is given, the calibrated
/// threshold is stored in the model; an explicit `--theta` wins.
pub fn cmd_train(
    corpus: &str,
    lexicon: &str,
    heldout: Option<(&str, &str)>,
    settings: &Settings,
) -> Result<(String, TrainReport)> {
    let lex = Lexicon::from_json(lexicon)?;
    let turns = parse_annotations(corpus)?;
    let (mut model, summary) = RepairModel::train(&turns, &lex, &settings.train())?;
    let mut calibration = None;
    if let (Some((gold, turns_text)), None) = (heldout, settings.theta) {
        let gold = parse_annotations(gold)?;
        let lattices = parse_turns(turns_text)?;
        let config = PipelineConfig {
            theta: None,
            ..settings.pipeline()
        };
        let (theta, metrics) = calibrate_model_theta(&model, &lex, &lattices, &gold, &config)?;
        if theta.is_finite() {
            model.scope.theta = theta;
        }
        calibration = Some(metrics);
    }
    let report = TrainReport {
        summary,
        theta: model.scope.theta,
        calibration,
    };
    Ok((model.to_json(), report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutput {
    pub lattices: String,
    pub edits: String,
    pub turns: usize,
    pub repairs: usize,
    pub truncated: usize,
    pub elapsed: Duration,
}

pub fn cmd_process(model: &str, lexicon: &str, input: &str, settings: &Settings) -> Result<ProcessOutput> {
    let model = RepairModel::from_json(model)?;
    let lex = Lexicon::from_json(lexicon)?;
    let lattices = parse_turns(input)?;
    let config = settings.pipeline();
    let started = Instant::now();
    let results: Vec<Result<(String, String, usize, bool)>> = pool(settings.jobs)?.install(|| {
        lattices
            .par_iter()
            .map(|l| {
                let out = process_turn(l, &model, &lex, &config)
                    .with_context(|| format!("turn {}", l.turn_id))?;
                let edits = TurnEdits::from_output(&out)?;
                Ok((
                    serialize_lattice(&out.lattice)?,
                    serde_json::to_string(&edits)?,
                    out.edits.len(),
                    out.truncated,
                ))
            })
            .collect()
    });
    let elapsed = started.elapsed();
    let mut output = ProcessOutput {
        lattices: String::new(),
        edits: String::new(),
        turns: lattices.len(),
        repairs: 0,
        truncated: 0,
        elapsed,
    };
    for r in results {
        let (lattice, edits, n, truncated) = r?;
        output.lattices.push_str(&lattice);
        output.lattices.push('\n');
        output.edits.push_str(&edits);
        output.edits.push('\n');
        output.repairs += n;
        output.truncated += truncated as usize;
    }
    info!(
        "processed {} turns in {:.3}s ({:.2} ms/turn), {} repairs, {} truncated",
        output.turns,
        elapsed.as_secs_f64(),
        1e3 * elapsed.as_secs_f64() / output.turns.max(1) as f64,
        output.repairs,
        output.truncated
    );
    Ok(output)
}

pub fn parse_edits(text: &str) -> Result<Vec<TurnEdits>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("edits line {}", i + 1)))
        .collect()
}

/// Returns the metrics and the formatted table.
pub fn cmd_eval(gold: &str, edits: &str, label: &str) -> Result<(Metrics, String)> {
    let gold = parse_annotations(gold)?;
    let edits = parse_edits(edits)?;
    let mut predicted = predictions_from_edits(&edits);
    if predicted.len() != edits.len() {
        bail!("edits file repeats a turn id");
    }
    for t in &gold {
        predicted.entry(t.turn_id.clone()).or_default();
    }
    let metrics = evaluate(&gold, &predicted)?;
    Ok((metrics, format_table(&[(label, metrics)])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub turns: String,
    pub gold: String,
    pub lexicon: String,
}

pub fn cmd_synth(spec: &SynthSpec, n: usize) -> Result<SynthOutput> {
    let (turns, gold) = generate_synthetic(spec, n)?;
    let mut text = String::new();
    for t in &turns {
        text.push_str(&t.to_line());
        text.push('\n');
    }
    let lexicon = serde_json::to_string_pretty(&spec.lexicon()?.to_file())?;
    Ok(SynthOutput {
        turns: text,
        gold: annotations_to_jsonl(&gold),
        lexicon,
    })
}

/// Applies the command-line overrides to a generator spec.
pub fn synth_spec(base: SynthSpec, args: &SynthArgs, settings: &Settings) -> SynthSpec {
    let mut spec = SynthSpec {
        seed: settings.seed,
        max_span: settings.window.min(base.max_span),
        ..base
    };
    if let Some(rate) = args.repair_rate {
        spec.repair_rate = rate;
    }
    if args.oracle_ip {
        spec.ip_high = 1.0;
        spec.ip_miss_rate = 0.0;
        spec.false_alarm_rate = 0.0;
        spec.ip_background = spec.ip_background.min(settings.tau_ip);
    }
    spec
}

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clap::Parser;
use log::info;

use lattice_repair::synth::SynthSpec;
use lattice_repair_cli::*;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::parse(&read(p)?)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Train(args) => {
            let settings = Settings::resolve(&file, &args.model, &args.run)?;
            let heldout = match (&args.heldout_gold, &args.heldout_turns) {
                (Some(g), Some(t)) => Some((read(g)?, read(t)?)),
                _ => None,
            };
            let (model, report) = cmd_train(
                &read(&args.corpus)?,
                &read(&args.lexicon)?,
                heldout.as_ref().map(|(g, t)| (g.as_str(), t.as_str())),
                &settings,
            )?;
            write(&args.out, &model)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Process(args) => {
            let settings = Settings::resolve(&file, &ModelFlags::default(), &args.run)?;
            let out = cmd_process(&read(&args.model)?, &read(&args.lexicon)?, &read(&args.input)?, &settings)?;
            write(&args.out, &out.lattices)?;
            write(&args.edits, &out.edits)?;
            println!(
                "{} turns, {} repairs, {} truncated, {:.2} ms/turn",
                out.turns,
                out.repairs,
                out.truncated,
                1e3 * out.elapsed.as_secs_f64() / out.turns.max(1) as f64
            );
        }
        Command::Eval(args) => {
            let (metrics, table) = cmd_eval(&read(&args.gold)?, &read(&args.edits)?, &args.label)?;
            print!("{table}");
            if let Some(path) = &args.report {
                write(path, &serde_json::to_string_pretty(&metrics)?)?;
            }
        }
        Command::Synth(args) => {
            let settings = Settings::resolve(&file, &ModelFlags::default(), &args.run)?;
            let base = match &args.spec {
                Some(p) => serde_json::from_str(&read(p)?).context("invalid generator spec")?,
                None => SynthSpec::default(),
            };
            let spec = synth_spec(base, &args, &settings);
            let out = cmd_synth(&spec, args.n)?;
            write(&args.out_turns, &out.turns)?;
            write(&args.out_gold, &out.gold)?;
            if let Some(p) = &args.out_lexicon {
                write(p, &out.lexicon)?;
            }
            info!("wrote {} turns with seed {}", args.n, spec.seed);
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

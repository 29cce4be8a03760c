use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use driftplace::experiment::{self, demo, deploy, report, validate, RunConfig, Scale};
use driftplace::ocean;
use driftplace::Error;

#[derive(Parser)]
#[command(name = "driftplace", version, about = "Drifter placement experiments")]
struct Cli {
    /// JSON run configuration; defaults to the preset selected by --scale.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the base seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Compare every configured policy over all fields and runs.
    Run,
    /// Sample-count ablation at the configured decision times.
    AblateJ,
    /// Look-ahead horizon ablation.
    AblateHorizon,
    /// Constructed instance where the myopic choice is worse than the look-ahead.
    DemoProp1,
    /// Write a synthetic ground-truth field as CSV.
    GenField {
        #[arg(long, default_value_t = 0)]
        field: usize,
    },
    /// Check the fast numerical paths against dense oracles.
    Validate {
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => RunConfig::preset(match cli.scale {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }),
    };
    if let Some(s) = cli.seed {
        c.base_seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    report::write_text(&path, body)?;
    Ok(path)
}

fn execute(cli: &Cli) -> Result<serde_json::Value, Error> {
    let out = &cli.out_dir;
    match &cli.command {
        Command::Run => {
            let c = load_config(cli)?;
            let results = experiment::run_all(&c, cli.workers)?;
            let summary = experiment::summarize(&c, &results)?;
            let files = report::write_run_outputs(out, &c, &results, &summary)?;
            Ok(serde_json::json!({ "runs": summary.runs, "files": files.len(), "out_dir": out }))
        }
        Command::AblateJ => {
            let c = load_config(cli)?;
            let a = experiment::ablation_j(&c, cli.workers)?;
            let csv = write(out, "ablation_j.csv", &report::ablation_csv(&a))?;
            report::write_json(&out.join("ablation_j.json"), &a)?;
            let first: Vec<_> = a.times.iter().map(|t| (t.decision_time, t.first_below(1.0))).collect();
            Ok(serde_json::json!({ "csv": csv, "first_j_below_1_percent": first }))
        }
        Command::AblateHorizon => {
            let c = load_config(cli)?;
            let h = experiment::ablation_horizon(&c, cli.workers)?;
            let csv = write(out, "ablation_horizon.csv", &report::horizon_csv(&h))?;
            report::write_json(&out.join("ablation_horizon.json"), &h)?;
            let means: Vec<_> = h.horizons.iter().map(|x| (x.duration, x.averaged.mean)).collect();
            Ok(serde_json::json!({ "csv": csv, "mean_mc_gap_percent": means }))
        }
        Command::DemoProp1 => {
            let seed = cli.seed.unwrap_or(7);
            let r = demo::demo_instance(seed)?.run(seed)?;
            std::fs::create_dir_all(out)?;
            report::write_json(&out.join("demo_prop1.json"), &r)?;
            if r.eig_lagrangian_utility >= r.ballast_lagrangian_utility {
                return Err(Error::Config(format!(
                    "seed {seed}: the look-ahead choice is not strictly better ({} vs {})",
                    r.ballast_lagrangian_utility, r.eig_lagrangian_utility
                )));
            }
            Ok(serde_json::to_value(&r)?)
        }
        Command::GenField { field } => {
            let c = load_config(cli)?;
            let f = deploy::ground_truth(&c, *field)?;
            std::fs::create_dir_all(out)?;
            let path = out.join(format!("field{field}.csv"));
            ocean::write_field_csv(&f, &path)?;
            Ok(serde_json::json!({ "path": path, "cells": f.grid.len(), "times": f.times.len }))
        }
        Command::Validate { cases } => {
            if cli.config.is_some() {
                load_config(cli)?;
            }
            let rep = validate::run(cli.seed.unwrap_or(0), *cases)?;
            if !rep.passed() {
                return Err(Error::Config(serde_json::to_string(&rep)?));
            }
            Ok(serde_json::to_value(&rep)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "kind": e.kind(), "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}

//! Result tables: one CSV per `(policy, field, run)` and a JSON summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ablation::{AblationResult, HorizonResult};
use super::config::RunConfig;
use super::deploy::{RunId, RunResult};
use super::metrics::{iso_performance, policy_rank, MeanSe};
use crate::error::{Error, Result};
use crate::policies::PolicyKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    /// Per deployment index.
    pub l2_error: Vec<MeanSe>,
    pub rank: Vec<MeanSe>,
    /// Extra baseline deployments needed to match this policy.
    pub iso_performance: Option<Vec<MeanSe>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub runs: usize,
    pub deployments: usize,
    pub baseline: Option<PolicyKind>,
    pub policies: Vec<PolicySummary>,
}

impl RunSummary {
    pub fn policy(&self, p: PolicyKind) -> Option<&PolicySummary> {
        self.policies.iter().find(|s| s.policy == p)
    }
}

/// `errors[p][r][m]` in the configured policy order and sorted run order.
pub fn error_table(config: &RunConfig, results: &[RunResult]) -> Result<(Vec<RunId>, Vec<Vec<Vec<f64>>>)> {
    let mut ids: Vec<RunId> = results.iter().map(|r| r.id).collect();
    ids.sort();
    ids.dedup();
    let mut table = Vec::with_capacity(config.policies.len());
    for p in &config.policies {
        let mut rows = Vec::with_capacity(ids.len());
        for id in &ids {
            let r = results
                .iter()
                .find(|r| r.policy == *p && r.id == *id)
                .ok_or_else(|| Error::Shape(format!("missing run {} for field {} run {}", p.name(), id.field, id.run)))?;
            rows.push(r.errors());
        }
        table.push(rows);
    }
    Ok((ids, table))
}

/// Mean errors, ranks and iso-performance against UNIF when it was run.
pub fn summarize(config: &RunConfig, results: &[RunResult]) -> Result<RunSummary> {
    let (ids, table) = error_table(config, results)?;
    let ranks = policy_rank(&table)?;
    let baseline = config.policies.iter().position(|p| *p == PolicyKind::Uniform);
    let iso = baseline.map(|b| iso_performance(&table, b)).transpose()?;
    let steps = table[0][0].len();
    let policies = config
        .policies
        .iter()
        .enumerate()
        .map(|(i, p)| PolicySummary {
            policy: *p,
            l2_error: (0..steps).map(|m| MeanSe::of(&table[i].iter().map(|r| r[m]).collect::<Vec<_>>())).collect(),
            rank: ranks[i].clone(),
            iso_performance: iso.as_ref().map(|v| v[i].clone()),
        })
        .collect();
    Ok(RunSummary {
        config_hash: config.hash(),
        runs: ids.len(),
        deployments: config.deployments.count,
        baseline: baseline.map(|b| config.policies[b]),
        policies,
    })
}

/// CSV body for one run.
pub fn run_csv(r: &RunResult) -> String {
    let mut s = String::from("index,time,cell,observations,l2_error,optimizer_converged\n");
    for x in &r.records {
        let conv = x.optimizer_converged.map_or(String::new(), |c| c.to_string());
        writeln!(s, "{},{},{},{},{},{}", x.index, x.time, x.cell, x.observations, x.l2_error, conv).unwrap();
    }
    s
}

pub fn run_file_name(r: &RunResult) -> String {
    format!("{}_field{}_run{}.csv", r.policy.name(), r.id.field, r.id.run)
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, body)?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result serializes");
    s.push('\n');
    s
}

/// Writes `runs/*.csv`, `summary.json` and `config.json`; returns the paths.
pub fn write_run_outputs(dir: &Path, config: &RunConfig, results: &[RunResult], summary: &RunSummary) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for r in results {
        let p = dir.join("runs").join(run_file_name(r));
        write(&p, &run_csv(r))?;
        paths.push(p);
    }
    for (name, body) in [("summary.json", to_json(summary)), ("config.json", to_json(config))] {
        let p = dir.join(name);
        write(&p, &body)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Writes one JSON document.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &to_json(value))
}

/// Writes a plot-ready CSV with one row per curve point.
pub fn write_text(path: &Path, body: &str) -> Result<()> {
    write(path, body)
}

/// One row per `(decision time, J)` of the sample-count ablation.
pub fn ablation_csv(a: &AblationResult) -> String {
    let mut s = String::from("decision_time,samples,mc_percent,mc_percent_se,full_percent,full_percent_se,utility,utility_se\n");
    for t in &a.times {
        let c = &t.ballast;
        for j in 0..c.mc_percent.len() {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                t.decision_time,
                j + 1,
                c.mc_percent[j].mean,
                c.mc_percent[j].se,
                c.full_percent[j].mean,
                c.full_percent[j].se,
                c.utility[j].mean,
                c.utility[j].se
            )
            .unwrap();
        }
    }
    s
}

/// One row per `(horizon, J)` of the horizon ablation.
pub fn horizon_csv(h: &HorizonResult) -> String {
    let mut s = String::from("horizon_end,duration,samples,mc_percent,mc_percent_se,full_percent,full_percent_se\n");
    for c in &h.horizons {
        for j in 0..c.curve.mc_percent.len() {
            let (m, f) = (c.curve.mc_percent[j], c.curve.full_percent[j]);
            writeln!(s, "{},{},{},{},{},{},{}", c.horizon_end, c.duration, j + 1, m.mean, m.se, f.mean, f.se).unwrap();
        }
    }
    s
}

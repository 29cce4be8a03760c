//! Look-ahead sample-count and horizon ablations.
//!
//! Each replication draws a synthetic truth, places drifters uniformly every
//! deployment interval before the decision time, and tabulates the
//! information-gain utility `U[j][c]` of every cell under `J_ref` posterior
//! field samples. `B(c; J)` is the mean of the first `J` rows, so all sample
//! counts share one set of rollouts. The full-sample mean stands in for the
//! exact expected utility; the true field gives the realized utility.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{GroundTruth, RunConfig};
use super::deploy::{revealed, Deployed};
use super::metrics::MeanSe;
use crate::error::{Error, Result};
use crate::gp::InfoGainFactor;
use crate::ocean::{self, VectorFieldSeries};
use crate::policies::{self, DecisionContext, DrifterState, FieldSampler, PolicyKind};
use crate::rng::{self, derive_seed, tag};

const CHUNK: usize = 16;

/// Utilities of one replication at one decision time.
#[derive(Clone, Debug)]
pub struct AblationInstance {
    pub replication: usize,
    pub decision_time: f64,
    /// `U[j][c]` over the full horizon, `j < J_ref`.
    pub reference: Vec<Vec<f64>>,
    /// Utility of each cell when the true field is the only sample.
    pub realized: Vec<f64>,
    pub eig_choice: usize,
    /// `(horizon end, U[j][c])` for the limited-horizon decisions.
    pub horizon_tables: Vec<(f64, Vec<Vec<f64>>)>,
}

fn synthetic_seed(config: &RunConfig) -> Result<u64> {
    match config.ground_truth {
        GroundTruth::Synthetic { seed } => Ok(seed),
        GroundTruth::Csv { .. } => Err(Error::Config("ablations need synthetic ground truth".into())),
    }
}

/// Truth field of ablation replication `rep`.
pub fn ablation_truth(config: &RunConfig, rep: usize) -> Result<VectorFieldSeries> {
    let seed = synthetic_seed(config)?;
    let mut r = rng::stream(seed, &[tag("ablation-truth"), rep as u64]);
    ocean::sample_ground_truth(&config.params, &config.spatial_grid()?, &config.time_grid()?, &mut r)
}

/// Tabulate one replication. `horizon_ends` are absolute end times; their
/// tables use the first `horizon_samples` rollouts.
pub fn ablation_instance(
    config: &RunConfig,
    truth: &VectorFieldSeries,
    rep: usize,
    decision_time: f64,
    horizon_ends: &[f64],
) -> Result<AblationInstance> {
    let a = &config.ablation;
    let grid = &truth.grid;
    let times = truth.times;
    let rep_seed = derive_seed(config.base_seed, &[tag("ablation"), rep as u64]);
    let interval = config.deployments.interval;
    let count = ((decision_time / interval) - 1e-9).ceil().max(0.0) as usize;
    let mut placer = rng::stream(rep_seed, &[tag("placements")]);
    let mut fleet = Vec::with_capacity(count);
    for i in 0..count {
        let cell = placer.random_range(0..grid.len());
        fleet.push(Deployed::release(truth, config, cell, i as f64 * interval, rep_seed, i)?);
    }
    let data = revealed(&fleet, decision_time);
    let drifters: Vec<DrifterState> = fleet.iter().map(|d| d.state_at(decision_time, times.dt)).collect();
    let ctx = DecisionContext {
        dataset: &data,
        decision_time,
        grid,
        times,
        schedule: config.schedule,
        params: config.params,
        drifters: &drifters,
    };
    let cfg = config.ballast_config(PolicyKind::BallastTrue);
    let end = times.end();
    let factor = InfoGainFactor::new(&config.params, &data.points)?;
    let step = times.index_of(decision_time)?;
    let sampler = FieldSampler::new(&ctx, &config.params, end, cfg.sample_stride, derive_seed(rep_seed, &[tag("lookahead-fields"), step as u64]))?;

    let mut reference = Vec::with_capacity(a.reference_samples);
    let mut horizon_tables: Vec<(f64, Vec<Vec<f64>>)> = horizon_ends.iter().map(|h| (*h, Vec::new())).collect();
    let mut j = 0;
    while j < a.reference_samples {
        let hi = (j + CHUNK).min(a.reference_samples);
        let fields = sampler.sample(j..hi)?;
        reference.extend(policies::ballast_utility_table(&ctx, &factor, &fields, end, &cfg)?);
        if j < a.horizon_samples {
            let k = (a.horizon_samples - j).min(fields.len());
            for (h, table) in horizon_tables.iter_mut() {
                table.extend(policies::ballast_utility_table(&ctx, &factor, &fields[..k], *h, &cfg)?);
            }
        }
        j = hi;
    }
    let realized = policies::lagrangian_utilities(&ctx, &config.params, truth, end, &cfg)?;
    let eig_choice = policies::choose_eig(&ctx)?;
    Ok(AblationInstance { replication: rep, decision_time, reference, realized, eig_choice, horizon_tables })
}

/// All replications at one decision time, run on `workers` threads.
pub fn ablation_instances(config: &RunConfig, decision_time: f64, horizon_ends: &[f64], workers: usize) -> Result<Vec<AblationInstance>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..config.ablation.replications)
            .into_par_iter()
            .map(|rep| ablation_instance(config, &ablation_truth(config, rep)?, rep, decision_time, horizon_ends))
            .collect()
    })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Decisions `s*_J` for `J = 1..=rows`, from running prefix means.
pub fn prefix_decisions(table: &[Vec<f64>]) -> Vec<usize> {
    let n = table.first().map_or(0, |r| r.len());
    let mut sums = vec![0.0; n];
    table
        .iter()
        .map(|row| {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
            argmax(&sums)
        })
        .collect()
}

/// Gaps of one decision under the expected and the realized utility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaps {
    pub mc: f64,
    pub mc_percent: f64,
    pub full: f64,
    pub full_percent: f64,
    /// Expected utility `B(s; J_ref)` of the decision.
    pub utility: f64,
}

impl AblationInstance {
    pub fn expected(&self) -> Vec<f64> {
        policies::mean_utilities(&self.reference)
    }

    fn gaps_of(&self, expected: &[f64], weights: &[(usize, f64)]) -> Gaps {
        let best = expected[argmax(expected)];
        let best_true = self.realized[argmax(&self.realized)];
        let utility: f64 = weights.iter().map(|(c, w)| w * expected[*c]).sum();
        let realized: f64 = weights.iter().map(|(c, w)| w * self.realized[*c]).sum();
        let mc = best - utility;
        let full = best_true - realized;
        Gaps { mc, mc_percent: 100.0 * mc / best, full, full_percent: 100.0 * full / best_true, utility }
    }

    /// Gaps of the decision at each sample count `J = 1..=J_ref`.
    pub fn ballast_gaps(&self) -> Vec<Gaps> {
        let expected = self.expected();
        prefix_decisions(&self.reference).into_iter().map(|c| self.gaps_of(&expected, &[(c, 1.0)])).collect()
    }

    /// Expected gaps of a uniformly random cell.
    pub fn uniform_gaps(&self) -> Gaps {
        let n = self.realized.len();
        let w: Vec<(usize, f64)> = (0..n).map(|c| (c, 1.0 / n as f64)).collect();
        self.gaps_of(&self.expected(), &w)
    }

    pub fn eig_gaps(&self) -> Gaps {
        self.gaps_of(&self.expected(), &[(self.eig_choice, 1.0)])
    }

    /// Gaps of horizon-limited decisions, per horizon and sample count.
    pub fn horizon_gaps(&self) -> Vec<(f64, Vec<Gaps>)> {
        let expected = self.expected();
        self.horizon_tables
            .iter()
            .map(|(h, t)| (*h, prefix_decisions(t).into_iter().map(|c| self.gaps_of(&expected, &[(c, 1.0)])).collect()))
            .collect()
    }
}

/// Mean curves over replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCurve {
    pub mc_percent: Vec<MeanSe>,
    pub full_percent: Vec<MeanSe>,
    pub utility: Vec<MeanSe>,
}

impl GapCurve {
    fn from_rows(rows: &[Vec<Gaps>]) -> Self {
        let len = rows.iter().map(|r| r.len()).min().unwrap_or(0);
        let col = |f: &dyn Fn(&Gaps) -> f64| -> Vec<MeanSe> {
            (0..len).map(|j| MeanSe::of(&rows.iter().map(|r| f(&r[j])).collect::<Vec<_>>())).collect()
        };
        GapCurve { mc_percent: col(&|g| g.mc_percent), full_percent: col(&|g| g.full_percent), utility: col(&|g| g.utility) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineGaps {
    pub mc_percent: MeanSe,
    pub full_percent: MeanSe,
    pub utility: MeanSe,
}

impl BaselineGaps {
    fn of(g: &[Gaps]) -> Self {
        let f = |h: &dyn Fn(&Gaps) -> f64| MeanSe::of(&g.iter().map(h).collect::<Vec<_>>());
        BaselineGaps { mc_percent: f(&|x| x.mc_percent), full_percent: f(&|x| x.full_percent), utility: f(&|x| x.utility) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTimeAblation {
    pub decision_time: f64,
    /// Entry `J − 1` belongs to sample count `J`.
    pub ballast: GapCurve,
    pub uniform: BaselineGaps,
    pub eig: BaselineGaps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub reference_samples: usize,
    pub replications: usize,
    pub times: Vec<DecisionTimeAblation>,
}

impl DecisionTimeAblation {
    /// Smallest `J` whose mean MC percentage gap is below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.ballast.mc_percent.iter().position(|g| g.mean < threshold).map(|i| i + 1)
    }
}

pub fn summarize_decision_time(instances: &[AblationInstance]) -> DecisionTimeAblation {
    let rows: Vec<Vec<Gaps>> = instances.iter().map(|i| i.ballast_gaps()).collect();
    DecisionTimeAblation {
        decision_time: instances.first().map_or(f64::NAN, |i| i.decision_time),
        ballast: GapCurve::from_rows(&rows),
        uniform: BaselineGaps::of(&instances.iter().map(|i| i.uniform_gaps()).collect::<Vec<_>>()),
        eig: BaselineGaps::of(&instances.iter().map(|i| i.eig_gaps()).collect::<Vec<_>>()),
    }
}

/// Sample-count ablation at every configured decision time.
pub fn ablation_j(config: &RunConfig, workers: usize) -> Result<AblationResult> {
    let mut times = Vec::new();
    for t in &config.ablation.decision_times {
        times.push(summarize_decision_time(&ablation_instances(config, *t, &[], workers)?));
    }
    Ok(AblationResult { reference_samples: config.ablation.reference_samples, replications: config.ablation.replications, times })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonCurve {
    pub horizon_end: f64,
    /// Look-ahead duration after the decision time.
    pub duration: f64,
    /// Entry `J − 1` belongs to sample count `J`.
    pub curve: GapCurve,
    /// Per replication: MC percentage gap averaged over `J = 1..=J_h`.
    pub per_replication: Vec<f64>,
    pub averaged: MeanSe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonResult {
    pub decision_time: f64,
    pub samples: usize,
    pub replications: usize,
    /// Configured horizons in increasing order, then the terminal time.
    pub horizons: Vec<HorizonCurve>,
}

/// Absolute horizon ends for the horizon study, without the terminal time.
pub fn horizon_ends(config: &RunConfig) -> Vec<f64> {
    let t = config.ablation.horizon_decision_time;
    let mut d = config.ablation.horizons.clone();
    d.sort_by(f64::total_cmp);
    d.into_iter().map(|h| t + h).collect()
}

pub fn summarize_horizons(config: &RunConfig, instances: &[AblationInstance]) -> Result<HorizonResult> {
    let t = config.ablation.horizon_decision_time;
    let js = config.ablation.horizon_samples;
    let end = config.time.end;
    let mut per_h: Vec<(f64, Vec<Vec<Gaps>>)> = horizon_ends(config).into_iter().map(|h| (h, Vec::new())).collect();
    per_h.push((end, Vec::new()));
    for inst in instances {
        let hg = inst.horizon_gaps();
        if hg.len() + 1 != per_h.len() {
            return Err(Error::Shape("instance lacks the configured horizon tables".into()));
        }
        for (slot, (_, g)) in per_h.iter_mut().zip(hg) {
            slot.1.push(g);
        }
        let full: Vec<Gaps> = inst.ballast_gaps().into_iter().take(js).collect();
        per_h.last_mut().unwrap().1.push(full);
    }
    let horizons = per_h
        .into_iter()
        .map(|(h, rows)| {
            let per_replication: Vec<f64> =
                rows.iter().map(|r| r.iter().map(|g| g.mc_percent).sum::<f64>() / r.len() as f64).collect();
            HorizonCurve {
                horizon_end: h,
                duration: h - t,
                curve: GapCurve::from_rows(&rows),
                averaged: MeanSe::of(&per_replication),
                per_replication,
            }
        })
        .collect();
    Ok(HorizonResult { decision_time: t, samples: js, replications: instances.len(), horizons })
}

/// Horizon ablation at the configured decision time.
pub fn ablation_horizon(config: &RunConfig, workers: usize) -> Result<HorizonResult> {
    let t = config.ablation.horizon_decision_time;
    let instances = ablation_instances(config, t, &horizon_ends(config), workers)?;
    summarize_horizons(config, &instances)
}

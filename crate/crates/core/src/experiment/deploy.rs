//! The sequential deployment loop and replicated runs.

use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{GroundTruth, MetricTimes, RunConfig};
use super::metrics::posterior_l2;
use crate::error::{Error, Result};
use crate::gp::{Dataset, HyperBounds};
use crate::kernels::TemporalHelmholtzParams;
use crate::ocean::{self, SpatialGrid, TimeGrid, Trajectory, VectorFieldSeries};
use crate::policies::{self, DecisionContext, DrifterState, HyperMode, PolicyKind};
use crate::rng::{self, derive_seed, tag};
use crate::sobol::SobolState;

/// Identifies one replication: a ground-truth field and a run on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunId {
    pub field: usize,
    pub run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub index: usize,
    pub time: f64,
    pub cell: usize,
    /// Observations revealed so far, including the new drifter's first.
    pub observations: usize,
    pub l2_error: f64,
    /// Only set for BALLAST-opt decisions.
    pub optimizer_converged: Option<bool>,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub policy: PolicyKind,
    pub id: RunId,
    pub seed: u64,
    pub config_hash: String,
    /// One record per placement, `M + 1` in total.
    pub records: Vec<DeploymentRecord>,
}

impl RunResult {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.l2_error).collect()
    }
}

/// Seed of a replication; shared by every policy on it.
pub fn run_seed(config: &RunConfig, id: RunId) -> u64 {
    derive_seed(config.base_seed, &[tag("run"), id.field as u64, id.run as u64])
}

/// Ground-truth field number `field`.
pub fn ground_truth(config: &RunConfig, field: usize) -> Result<VectorFieldSeries> {
    let grid = config.spatial_grid()?;
    let times = config.time_grid()?;
    match &config.ground_truth {
        GroundTruth::Synthetic { seed } => {
            let mut r = rng::stream(*seed, &[tag("truth"), field as u64]);
            ocean::sample_ground_truth(&config.params, &grid, &times, &mut r)
        }
        GroundTruth::Csv { path } => {
            let f = ocean::load_field_csv(path)?;
            if f.grid != grid || f.times.len != times.len || (f.times.dt - times.dt).abs() > 1e-12 || f.times.start != 0.0 {
                return Err(Error::Config(format!("{} does not match the configured grid and time axis", path.display())));
            }
            Ok(f)
        }
    }
}

/// Time steps at which the L2 metric is evaluated.
pub fn eval_steps(config: &RunConfig, times: &TimeGrid) -> Result<Vec<usize>> {
    let deploy: Vec<usize> = config.deployment_times().iter().map(|t| times.index_of(*t)).collect::<Result<_>>()?;
    Ok(match config.metric_times {
        MetricTimes::Deployments => deploy,
        MetricTimes::Fine => (0..=*deploy.last().unwrap()).step_by(config.fine_stride).collect(),
    })
}

/// A drifter released into the true field, with its full future path and
/// readings; readings become visible as time passes.
#[derive(Clone, Debug)]
pub struct Deployed {
    pub placed_at: f64,
    pub trajectory: Trajectory,
    pub readings: Dataset,
}

impl Deployed {
    pub fn release(truth: &VectorFieldSeries, config: &RunConfig, cell: usize, t: f64, seed: u64, index: usize) -> Result<Self> {
        let trajectory = ocean::simulate_trajectory(truth, truth.grid.centers()[cell], t, truth.times.end())?;
        let mut r = rng::stream(seed, &[tag("obs"), index as u64]);
        let readings = ocean::observe(&trajectory, truth, &config.schedule, &mut r)?;
        Ok(Deployed { placed_at: t, trajectory, readings })
    }

    /// Position at `t`, inactive once the drifter has left the domain.
    pub fn state_at(&self, t: f64, dt: f64) -> DrifterState {
        let k = ((t - self.placed_at) / dt).round() as usize;
        match self.trajectory.samples.get(k) {
            Some((s, _)) => DrifterState { position: *s, active: true },
            None => DrifterState { position: self.trajectory.samples.last().unwrap().0, active: false },
        }
    }
}

/// Readings with time `≤ t` from every drifter, in deployment order.
pub fn revealed(fleet: &[Deployed], t: f64) -> Dataset {
    let mut d = Dataset::default();
    for f in fleet {
        for (x, y) in f.readings.points.iter().zip(&f.readings.values) {
            if x.t <= t + 1e-9 {
                d.push(*x, *y);
            }
        }
    }
    d
}

/// Geometric midpoint of the bounds; BALLAST-opt's first starting point.
pub fn bounds_midpoint(b: &HyperBounds) -> TemporalHelmholtzParams {
    let v: [f64; 7] = std::array::from_fn(|i| (b.lo[i] * b.hi[i]).sqrt());
    TemporalHelmholtzParams::from_vec(&v)
}

struct PolicyState {
    sobol: SobolState,
    /// Warm start for hyperparameter optimization.
    params: TemporalHelmholtzParams,
}

fn decide(
    config: &RunConfig,
    policy: PolicyKind,
    ctx: &DecisionContext,
    state: &mut PolicyState,
    seed: u64,
    m: usize,
) -> Result<(usize, Option<bool>)> {
    let decision_seed = derive_seed(seed, &[tag(policy.name()), m as u64]);
    let field_seed = derive_seed(seed, &[tag("lookahead-fields"), m as u64]);
    match policy {
        PolicyKind::Uniform => Ok((policies::choose_uniform(ctx, &mut rng::stream(decision_seed, &[])), None)),
        PolicyKind::Sobol => Ok((policies::choose_sobol(&mut state.sobol, ctx.grid), None)),
        PolicyKind::Eig => Ok((policies::choose_eig(ctx)?, None)),
        PolicyKind::DistSep => {
            let cfg = config.ballast_config(PolicyKind::BallastTrue);
            let fields = policies::ballast_sample_fields(ctx, &ctx.params, &cfg, field_seed)?;
            Ok((policies::choose_dist_sep(ctx, &fields, ctx.times.end())?, None))
        }
        PolicyKind::BallastTrue => Ok((policies::choose_ballast(ctx, &config.ballast_config(policy), field_seed)?.cell, None)),
        PolicyKind::BallastOpt => {
            let mut cfg = config.ballast_config(policy);
            if let HyperMode::Optimize { options, .. } = &mut cfg.hyper_mode {
                options.seed = decision_seed;
            }
            let warm = DecisionContext { params: state.params, ..ctx.clone() };
            let d = policies::choose_ballast(&warm, &cfg, field_seed)?;
            state.params = d.params;
            Ok((d.cell, d.optimizer_converged))
        }
    }
}

/// One deployment sequence: uniform initial placement at 0, then `M`
/// policy-chosen placements, each followed by the L2 metric.
pub fn run_deployment(config: &RunConfig, truth: &VectorFieldSeries, policy: PolicyKind, id: RunId) -> Result<RunResult> {
    let grid: &SpatialGrid = &truth.grid;
    let times = truth.times;
    let seed = run_seed(config, id);
    let steps = eval_steps(config, &times)?;
    let mut state = PolicyState {
        sobol: SobolState::scrambled(&mut rng::stream(seed, &[tag("SOBOL")])),
        params: config.hyper_bounds.clamp(&bounds_midpoint(&config.hyper_bounds)),
    };
    let mut fleet: Vec<Deployed> = Vec::new();
    let mut records = Vec::with_capacity(config.deployments.count + 1);
    for (m, t) in config.deployment_times().into_iter().enumerate() {
        let start = Instant::now();
        let (cell, converged) = if m == 0 {
            (rng::stream(seed, &[tag("initial")]).random_range(0..grid.len()), None)
        } else {
            let data = revealed(&fleet, t);
            let drifters: Vec<DrifterState> = fleet.iter().map(|d| d.state_at(t, times.dt)).collect();
            let ctx = DecisionContext {
                dataset: &data,
                decision_time: t,
                grid,
                times,
                schedule: config.schedule,
                params: config.params,
                drifters: &drifters,
            };
            decide(config, policy, &ctx, &mut state, seed, m)?
        };
        fleet.push(Deployed::release(truth, config, cell, t, seed, m)?);
        let data = revealed(&fleet, t);
        let l2_error = posterior_l2(&config.params, &data, truth, &steps)?;
        records.push(DeploymentRecord {
            index: m,
            time: t,
            cell,
            observations: data.len(),
            l2_error,
            optimizer_converged: converged,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok(RunResult { policy, id, seed, config_hash: config.hash(), records })
}

/// Every `(field, run, policy)` combination, ordered by field, run, then the
/// configured policy order. Runs execute on `workers` threads; the output
/// does not depend on the worker count.
pub fn run_all(config: &RunConfig, workers: usize) -> Result<Vec<RunResult>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let truths: Vec<VectorFieldSeries> =
            (0..config.fields).into_par_iter().map(|f| ground_truth(config, f)).collect::<Result<_>>()?;
        let jobs: Vec<(RunId, PolicyKind)> = (0..config.fields)
            .flat_map(|field| (0..config.runs_per_field).map(move |run| RunId { field, run }))
            .flat_map(|id| config.policies.iter().map(move |p| (id, *p)))
            .collect();
        jobs.par_iter().map(|(id, p)| run_deployment(config, &truths[id.field], *p, *id)).collect()
    })
}

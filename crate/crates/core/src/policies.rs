//! Placement policies: UNIF, SOBOL, DIST-SEP, EIG, BALLAST-opt, BALLAST-true.
//!
//! Every policy maps a [`DecisionContext`] to a grid cell. Ties always go to
//! the lowest cell index.

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{self, Dataset, HyperBounds, InfoGainFactor, OptimizeOptions};
use crate::kernels::{Point2, SpaceTimePoint, TemporalHelmholtzParams};
use crate::linalg;
use crate::ocean::{self, ObservationSchedule, SpatialGrid, TimeGrid, Trajectory, VectorFieldSeries};
use crate::rng::{self, Rng};
use crate::sobol::{self, SobolState};
use crate::spde;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "UNIF")]
    Uniform,
    #[serde(rename = "SOBOL")]
    Sobol,
    #[serde(rename = "DIST-SEP")]
    DistSep,
    #[serde(rename = "EIG")]
    Eig,
    #[serde(rename = "BALLAST-opt")]
    BallastOpt,
    #[serde(rename = "BALLAST-true")]
    BallastTrue,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Uniform,
        PolicyKind::Sobol,
        PolicyKind::DistSep,
        PolicyKind::Eig,
        PolicyKind::BallastOpt,
        PolicyKind::BallastTrue,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Uniform => "UNIF",
            PolicyKind::Sobol => "SOBOL",
            PolicyKind::DistSep => "DIST-SEP",
            PolicyKind::Eig => "EIG",
            PolicyKind::BallastOpt => "BALLAST-opt",
            PolicyKind::BallastTrue => "BALLAST-true",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }
}

/// Where an already deployed drifter is now.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrifterState {
    pub position: Point2,
    pub active: bool,
}

/// Everything a policy may look at when deciding at time `t_n`.
#[derive(Clone, Debug)]
pub struct DecisionContext<'a> {
    pub dataset: &'a Dataset,
    pub decision_time: f64,
    pub grid: &'a SpatialGrid,
    /// Advection time grid, ending at the terminal time.
    pub times: TimeGrid,
    pub schedule: ObservationSchedule,
    /// Surrogate hyperparameters (the starting point when optimizing).
    pub params: TemporalHelmholtzParams,
    pub drifters: &'a [DrifterState],
}

impl DecisionContext<'_> {
    pub fn validate(&self) -> Result<()> {
        self.times.index_of(self.decision_time)?;
        if self.grid.is_empty() {
            return Err(Error::InvalidParam("empty grid".into()));
        }
        if let Some(d) = self.drifters.iter().find(|d| d.active && !self.grid.contains(d.position)) {
            return Err(Error::InvalidParam(format!("active drifter at {:?} is outside the grid", d.position)));
        }
        Ok(())
    }

    fn observation_stride(&self) -> Result<usize> {
        self.schedule.stride(self.times.dt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HyperMode {
    /// Use the context's hyperparameters as they are.
    True,
    /// Maximize the marginal likelihood inside the bounds first.
    Optimize { bounds: HyperBounds, options: OptimizeOptions },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallastConfig {
    /// Number of sampled fields `J`.
    pub samples: usize,
    /// Look-ahead end time; `None` means the terminal time.
    pub horizon_end: Option<f64>,
    pub hyper_mode: HyperMode,
    /// Hypothetical observation points are kept every `utility_stride`
    /// observation intervals (1 keeps the full schedule).
    pub utility_stride: usize,
    /// Fields are sampled every `sample_stride` advection steps and held
    /// constant in between (1 samples every step).
    pub sample_stride: usize,
    /// Upper bound on flattened candidate columns per batched product.
    pub max_batch_cols: usize,
}

impl Default for BallastConfig {
    fn default() -> Self {
        BallastConfig {
            samples: 20,
            horizon_end: None,
            hyper_mode: HyperMode::True,
            utility_stride: 1,
            sample_stride: 1,
            max_batch_cols: 4096,
        }
    }
}

impl BallastConfig {
    pub fn validate(&self, times: &TimeGrid) -> Result<()> {
        if self.samples == 0 || self.utility_stride == 0 || self.sample_stride == 0 || self.max_batch_cols == 0 {
            return Err(Error::Config("look-ahead sample count and strides must be positive".into()));
        }
        if let Some(h) = self.horizon_end {
            if h > times.end() + 1e-9 {
                return Err(Error::Config(format!("horizon end {h} exceeds the terminal time {}", times.end())));
            }
            times.index_of(h)?;
        }
        if let HyperMode::Optimize { bounds, .. } = &self.hyper_mode {
            bounds.validate()?;
        }
        Ok(())
    }

    fn horizon(&self, times: &TimeGrid) -> f64 {
        self.horizon_end.unwrap_or(times.end())
    }
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

/// A uniformly random cell.
pub fn choose_uniform(ctx: &DecisionContext, rng: &mut Rng) -> usize {
    rng.random_range(0..ctx.grid.len())
}

/// Next point of the Sobol stream, scaled to the grid and floored.
pub fn choose_sobol(state: &mut SobolState, grid: &SpatialGrid) -> usize {
    sobol::unit_to_cell(state.next_point(), grid.nx(), grid.ny())
}

fn point_at(ctx: &DecisionContext, cell: usize) -> SpaceTimePoint {
    SpaceTimePoint::new(ctx.grid.centers()[cell], ctx.decision_time)
}

/// Information-gain utility of observing each cell center at `t_n`.
pub fn eig_utilities(ctx: &DecisionContext, params: &TemporalHelmholtzParams) -> Result<Vec<f64>> {
    ctx.validate()?;
    let factor = InfoGainFactor::new(params, &ctx.dataset.points)?;
    let groups: Vec<Vec<SpaceTimePoint>> = (0..ctx.grid.len()).map(|c| vec![point_at(ctx, c)]).collect();
    factor.logdet_with_each(&groups, 4096)
}

/// Myopic information-gain placement at the decision instant.
pub fn choose_eig(ctx: &DecisionContext) -> Result<usize> {
    Ok(argmax(&eig_utilities(ctx, &ctx.params)?))
}

/// Observation points of a hypothetical drifter released at `start` at
/// `t_start`, every `stride` advection steps up to `t_end` or exit.
pub fn projected_points(
    field: &VectorFieldSeries,
    start: Point2,
    t_start: f64,
    t_end: f64,
    stride: usize,
    skip_first: bool,
) -> Result<(Vec<SpaceTimePoint>, Trajectory)> {
    let traj = ocean::simulate_trajectory(field, start, t_start, t_end)?;
    Ok((ocean::observation_points(&traj, stride, skip_first), traj))
}

/// Draws `J` posterior fields over `[t_n, horizon]`: joint state at `t_n`
/// from the extended GP, then state-space propagation. Sample `j` uses the
/// stream `(seed, j)` for both its initial state and its noise.
pub struct FieldSampler<'a> {
    grid: &'a SpatialGrid,
    ssm: spde::SpatioTemporalSsm,
    mean: DVector<f64>,
    root: nalgebra::DMatrix<f64>,
    t_start: f64,
    fine: TimeGrid,
    stride: usize,
    coarse_steps: usize,
    seed: u64,
}

const SAMPLE_BATCH: usize = 16;

impl<'a> FieldSampler<'a> {
    pub fn new(ctx: &DecisionContext<'a>, params: &TemporalHelmholtzParams, horizon_end: f64, sample_stride: usize, seed: u64) -> Result<Self> {
        ctx.validate()?;
        let k0 = ctx.times.index_of(ctx.decision_time)?;
        let k1 = ctx.times.index_of(horizon_end)?;
        if k1 < k0 {
            return Err(Error::InvalidParam(format!("horizon {horizon_end} precedes the decision time {}", ctx.decision_time)));
        }
        let fine_steps = k1 - k0;
        let stride = sample_stride.max(1);
        let coarse_steps = fine_steps.div_ceil(stride);
        let fine = TimeGrid::new(ctx.decision_time, ctx.times.dt, fine_steps + 1)?;
        let ssm = spde::SpatioTemporalSsm::new(params, ctx.grid, ctx.times.dt * stride as f64)?;
        let (mean, cov) = spde::initial_state_posterior(params, ctx.dataset, ctx.grid, ctx.decision_time)?;
        let root = linalg::psd_sqrt(&cov)?;
        Ok(FieldSampler { grid: ctx.grid, ssm, mean, root, t_start: ctx.decision_time, fine, stride, coarse_steps, seed })
    }

    /// Fields `range.start .. range.end`.
    pub fn sample(&self, range: std::ops::Range<usize>) -> Result<Vec<VectorFieldSeries>> {
        let mut out = Vec::with_capacity(range.len());
        let mut j = range.start;
        while j < range.end {
            let end = (j + SAMPLE_BATCH).min(range.end);
            let mut rngs: Vec<Rng> = (j..end).map(|i| rng::stream(self.seed, &[i as u64])).collect();
            let inits: Vec<DVector<f64>> = rngs
                .iter_mut()
                .map(|r| {
                    let z = DVector::from_fn(self.mean.len(), |_, _| r.sample::<f64, _>(StandardNormal));
                    &self.mean + &self.root * z
                })
                .collect();
            let (fields, _) = spde::propagate_batch(&inits, &self.ssm, self.grid, self.t_start, self.coarse_steps, &mut rngs)?;
            for f in fields {
                out.push(if self.stride == 1 { f } else { hold_expand(&f, self.fine, self.stride) });
            }
            j = end;
        }
        Ok(out)
    }
}

/// Zero-order hold from a coarse series onto a finer grid with the same start.
fn hold_expand(coarse: &VectorFieldSeries, fine: TimeGrid, stride: usize) -> VectorFieldSeries {
    let mut out = VectorFieldSeries::zeros(coarse.grid.clone(), fine);
    for k in 0..fine.len {
        out.set_slice(k, coarse.slice(k / stride));
    }
    out
}

/// `J` posterior field samples for a BALLAST-style look-ahead.
pub fn ballast_sample_fields(
    ctx: &DecisionContext,
    params: &TemporalHelmholtzParams,
    cfg: &BallastConfig,
    seed: u64,
) -> Result<Vec<VectorFieldSeries>> {
    cfg.validate(&ctx.times)?;
    FieldSampler::new(ctx, params, cfg.horizon(&ctx.times), cfg.sample_stride, seed)?.sample(0..cfg.samples)
}

/// Per-field, per-candidate information gains `U[j][c] = log det(I + σ⁻²K(X_n ∪ P_j(c)))`.
///
/// `P_j(c)` holds the candidate drifter's projected points from `t_n` and the
/// active drifters' projected points after `t_n`, under field `j`.
pub fn ballast_utility_table(
    ctx: &DecisionContext,
    factor: &InfoGainFactor,
    fields: &[VectorFieldSeries],
    horizon_end: f64,
    cfg: &BallastConfig,
) -> Result<Vec<Vec<f64>>> {
    let stride = ctx.observation_stride()? * cfg.utility_stride;
    fields
        .par_iter()
        .map(|field| {
            let mut existing = Vec::new();
            for d in ctx.drifters.iter().filter(|d| d.active) {
                let (pts, _) = projected_points(field, d.position, ctx.decision_time, horizon_end, stride, true)?;
                existing.extend(pts);
            }
            let extended = factor.extend(&existing)?;
            let groups = (0..ctx.grid.len())
                .map(|c| projected_points(field, ctx.grid.centers()[c], ctx.decision_time, horizon_end, stride, false).map(|r| r.0))
                .collect::<Result<Vec<_>>>()?;
            extended.logdet_with_each(&groups, cfg.max_batch_cols)
        })
        .collect()
}

/// Column means of a utility table.
pub fn mean_utilities(table: &[Vec<f64>]) -> Vec<f64> {
    let n = table.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; n];
    for row in table {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= table.len() as f64);
    out
}

/// Monte-Carlo look-ahead utility of one candidate cell.
pub fn ballast_utility(
    ctx: &DecisionContext,
    params: &TemporalHelmholtzParams,
    fields: &[VectorFieldSeries],
    cell: usize,
    cfg: &BallastConfig,
) -> Result<f64> {
    if cell >= ctx.grid.len() {
        return Err(Error::InvalidParam(format!("cell {cell} is outside the grid")));
    }
    let factor = InfoGainFactor::new(params, &ctx.dataset.points)?;
    let horizon = cfg.horizon(&ctx.times);
    let stride = ctx.observation_stride()? * cfg.utility_stride;
    let mut total = 0.0;
    for field in fields {
        let mut pts = Vec::new();
        for d in ctx.drifters.iter().filter(|d| d.active) {
            pts.extend(projected_points(field, d.position, ctx.decision_time, horizon, stride, true)?.0);
        }
        pts.extend(projected_points(field, ctx.grid.centers()[cell], ctx.decision_time, horizon, stride, false)?.0);
        total += factor.logdet_with(&pts)?;
    }
    Ok(total / fields.len() as f64)
}

/// Outcome of a BALLAST decision.
#[derive(Clone, Debug)]
pub struct BallastDecision {
    pub cell: usize,
    pub utilities: Vec<f64>,
    /// Hyperparameters the surrogate used.
    pub params: TemporalHelmholtzParams,
    pub optimizer_converged: Option<bool>,
}

/// Surrogate hyperparameters for a decision under `mode`.
pub fn surrogate_params(ctx: &DecisionContext, mode: &HyperMode) -> Result<(TemporalHelmholtzParams, Option<bool>)> {
    match mode {
        HyperMode::True => Ok((ctx.params, None)),
        HyperMode::Optimize { bounds, options } => {
            if ctx.dataset.is_empty() {
                return Ok((bounds.clamp(&ctx.params), None));
            }
            let r = gp::optimize_hyperparameters(ctx.dataset, bounds, &bounds.clamp(&ctx.params), options)?;
            Ok((r.params, Some(r.converged)))
        }
    }
}

/// BALLAST: sample `J` posterior fields, project the candidate and the active
/// drifters through each, and maximize the averaged information gain.
pub fn choose_ballast(ctx: &DecisionContext, cfg: &BallastConfig, seed: u64) -> Result<BallastDecision> {
    cfg.validate(&ctx.times)?;
    ctx.validate()?;
    let (params, converged) = surrogate_params(ctx, &cfg.hyper_mode)?;
    if ctx.grid.len() == 1 {
        return Ok(BallastDecision { cell: 0, utilities: vec![0.0], params, optimizer_converged: converged });
    }
    let fields = ballast_sample_fields(ctx, &params, cfg, seed)?;
    let factor = InfoGainFactor::new(&params, &ctx.dataset.points)?;
    let table = ballast_utility_table(ctx, &factor, &fields, cfg.horizon(&ctx.times), cfg)?;
    let utilities = mean_utilities(&table);
    Ok(BallastDecision { cell: argmax(&utilities), utilities, params, optimizer_converged: converged })
}

/// Ranks `1..=n` of `values` ascending, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// DIST-SEP criteria per cell: mean trajectory arc length over `fields`, and
/// negative distance from the cell center to the nearest past observation.
pub fn dist_sep_criteria(ctx: &DecisionContext, fields: &[VectorFieldSeries], horizon_end: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = ctx.grid.len();
    let mut travel = vec![0.0; n];
    for field in fields {
        for (c, t) in travel.iter_mut().enumerate() {
            let traj = ocean::simulate_trajectory(field, ctx.grid.centers()[c], ctx.decision_time, horizon_end)?;
            *t += traj.arc_length() / fields.len() as f64;
        }
    }
    let separation = ctx
        .grid
        .centers()
        .iter()
        .map(|s| {
            ctx.dataset
                .points
                .iter()
                .map(|x| ((x.s[0] - s[0]).powi(2) + (x.s[1] - s[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .map(|d| if d.is_finite() { -d } else { 0.0 })
        .collect();
    Ok((travel, separation))
}

/// Cell maximizing the average of the two criteria's ranks. Travel ranks
/// ascending; the separation criterion is a negative distance, so it ranks
/// descending and far cells score high.
pub fn dist_sep_choice(travel: &[f64], separation: &[f64]) -> usize {
    let r1 = average_ranks(travel);
    let far: Vec<f64> = separation.iter().map(|v| -v).collect();
    let r2 = average_ranks(&far);
    let score: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| 0.5 * (a + b)).collect();
    argmax(&score)
}

/// DIST-SEP: prefer cells whose drifters travel far and that sit far from
/// existing observations.
pub fn choose_dist_sep(ctx: &DecisionContext, fields: &[VectorFieldSeries], horizon_end: f64) -> Result<usize> {
    ctx.validate()?;
    let (travel, sep) = dist_sep_criteria(ctx, fields, horizon_end)?;
    Ok(dist_sep_choice(&travel, &sep))
}

/// Lagrangian utility of each cell under one known field (the true field for
/// evaluation): the look-ahead utility with that field as the only sample.
pub fn lagrangian_utilities(
    ctx: &DecisionContext,
    params: &TemporalHelmholtzParams,
    field: &VectorFieldSeries,
    horizon_end: f64,
    cfg: &BallastConfig,
) -> Result<Vec<f64>> {
    let factor = InfoGainFactor::new(params, &ctx.dataset.points)?;
    let mut t = ballast_utility_table(ctx, &factor, std::slice::from_ref(field), horizon_end, cfg)?;
    Ok(t.pop().unwrap())
}

//! Run configuration, presets and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::{HyperBounds, OptimizeOptions};
use crate::kernels::TemporalHelmholtzParams;
use crate::ocean::{ObservationSchedule, SpatialGrid, TimeGrid};
use crate::policies::{BallastConfig, HyperMode, PolicyKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundTruth {
    /// Fresh prior draws from `RunConfig::params`, one per field index.
    Synthetic { seed: u64 },
    /// A single field read from the gridded CSV format.
    Csv { path: PathBuf },
}

/// Largest accepted spatial grid.
pub const MAX_CELLS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// `[a1, b1, a2, b2]`.
    pub bounds: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    /// Terminal time `T`; the grid starts at 0.
    pub end: f64,
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSpec {
    /// Placements after the initial one (`M`).
    pub count: usize,
    pub interval: f64,
}

/// Look-ahead settings shared by BALLAST-true, BALLAST-opt and DIST-SEP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookaheadSpec {
    pub samples: usize,
    pub utility_stride: usize,
    pub sample_stride: usize,
    pub max_batch_cols: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricTimes {
    /// Deployment instants only.
    Deployments,
    /// Every `fine_stride`-th advection step from 0 to the last deployment.
    Fine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub decision_times: Vec<f64>,
    /// `J_ref`, the sample count standing in for the exact expectation.
    pub reference_samples: usize,
    pub replications: usize,
    /// Look-ahead durations after the horizon-study decision time.
    pub horizons: Vec<f64>,
    pub horizon_decision_time: f64,
    /// Sample count used for the horizon-limited decisions.
    pub horizon_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ground_truth: GroundTruth,
    /// Generating hyperparameters (synthetic) and the "true" surrogate
    /// hyperparameters handed to EIG, DIST-SEP and BALLAST-true.
    pub params: TemporalHelmholtzParams,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub deployments: DeploymentSpec,
    pub schedule: ObservationSchedule,
    pub policies: Vec<PolicyKind>,
    pub lookahead: LookaheadSpec,
    pub hyper_bounds: HyperBounds,
    pub optimizer: OptimizeOptions,
    pub base_seed: u64,
    /// Ground-truth fields; must be 1 for CSV input.
    pub fields: usize,
    pub runs_per_field: usize,
    pub metric_times: MetricTimes,
    pub fine_stride: usize,
    pub ablation: AblationSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl RunConfig {
    /// 15×15 grid, 10 further deployments, 10 fields × 1 run, coarsened
    /// look-ahead.
    pub fn desk() -> Self {
        RunConfig {
            ground_truth: GroundTruth::Synthetic { seed: 1 },
            params: TemporalHelmholtzParams::synthetic_default(),
            grid: GridSpec { nx: 15, ny: 15, bounds: [-2.0, 2.0, -2.0, 2.0] },
            time: TimeSpec { end: 10.0, dt: 0.01 },
            deployments: DeploymentSpec { count: 10, interval: 0.5 },
            schedule: ObservationSchedule::default(),
            policies: PolicyKind::ALL.to_vec(),
            lookahead: LookaheadSpec { samples: 20, utility_stride: 10, sample_stride: 5, max_batch_cols: 4096 },
            hyper_bounds: HyperBounds::synthetic_default(),
            optimizer: OptimizeOptions { restarts: 0, max_iters: 40, seed: 0 },
            base_seed: 0,
            fields: 10,
            runs_per_field: 1,
            metric_times: MetricTimes::Deployments,
            fine_stride: 5,
            ablation: AblationSpec {
                decision_times: vec![3.0, 5.0, 7.0],
                reference_samples: 200,
                replications: 20,
                horizons: vec![0.1, 0.5, 1.0, 2.0, 3.0],
                horizon_decision_time: 5.0,
                horizon_samples: 20,
            },
        }
    }

    /// 25×25 grid, 19 further deployments, 10 fields × 10 runs, exact
    /// look-ahead resolution.
    pub fn paper() -> Self {
        RunConfig {
            grid: GridSpec { nx: 25, ny: 25, bounds: [-2.0, 2.0, -2.0, 2.0] },
            deployments: DeploymentSpec { count: 19, interval: 0.5 },
            lookahead: LookaheadSpec { samples: 20, utility_stride: 1, sample_stride: 1, max_batch_cols: 4096 },
            optimizer: OptimizeOptions { restarts: 4, max_iters: 100, seed: 0 },
            fields: 10,
            runs_per_field: 10,
            ablation: AblationSpec { replications: 100, ..Self::desk().ablation },
            ..Self::desk()
        }
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Paper => Self::paper(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn spatial_grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::regular(self.grid.nx, self.grid.ny, self.grid.bounds)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::spanning(0.0, self.time.end, self.time.dt)
    }

    /// Placement instants `0, Δ, …, MΔ`.
    pub fn deployment_times(&self) -> Vec<f64> {
        (0..=self.deployments.count).map(|m| m as f64 * self.deployments.interval).collect()
    }

    /// Look-ahead configuration for a policy.
    pub fn ballast_config(&self, policy: PolicyKind) -> BallastConfig {
        let hyper_mode = match policy {
            PolicyKind::BallastOpt => HyperMode::Optimize { bounds: self.hyper_bounds, options: self.optimizer },
            _ => HyperMode::True,
        };
        BallastConfig {
            samples: self.lookahead.samples,
            horizon_end: None,
            hyper_mode,
            utility_stride: self.lookahead.utility_stride,
            sample_stride: self.lookahead.sample_stride,
            max_batch_cols: self.lookahead.max_batch_cols,
        }
    }

    pub fn run_count(&self) -> usize {
        self.fields * self.runs_per_field
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let times = self.time_grid()?;
        if self.grid.nx.checked_mul(self.grid.ny).is_none_or(|n| n > MAX_CELLS) {
            return Err(Error::Config(format!("grid {}×{} exceeds {MAX_CELLS} cells", self.grid.nx, self.grid.ny)));
        }
        self.spatial_grid()?;
        if self.deployments.count as f64 * self.deployments.interval > times.end() + 1e-9 {
            return Err(Error::Config("deployments extend past the terminal time".into()));
        }
        self.schedule.stride(self.time.dt)?;
        if self.deployments.count == 0 {
            return Err(Error::Config("at least one further deployment is required".into()));
        }
        if !(self.deployments.interval > 0.0) {
            return Err(Error::Config("deployment interval must be positive".into()));
        }
        for t in self.deployment_times() {
            if t > times.end() + 1e-9 {
                return Err(Error::Config(format!("deployment time {t} is after the terminal time {}", times.end())));
            }
            times.index_of(t).map_err(|_| Error::Config(format!("deployment time {t} is not on the time grid")))?;
        }
        if self.policies.is_empty() {
            return Err(Error::Config("no policies selected".into()));
        }
        let mut sorted = self.policies.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.policies.len() {
            return Err(Error::Config("policies are listed more than once".into()));
        }
        for p in &self.policies {
            self.ballast_config(*p).validate(&times)?;
        }
        self.hyper_bounds.validate()?;
        if self.fields == 0 || self.runs_per_field == 0 {
            return Err(Error::Config("fields and runs per field must be positive".into()));
        }
        if matches!(self.ground_truth, GroundTruth::Csv { .. }) && self.fields != 1 {
            return Err(Error::Config("CSV ground truth provides exactly one field".into()));
        }
        if self.fine_stride == 0 {
            return Err(Error::Config("fine metric stride must be positive".into()));
        }
        self.validate_ablation(&times)
    }

    fn validate_ablation(&self, times: &TimeGrid) -> Result<()> {
        let a = &self.ablation;
        if a.reference_samples == 0 || a.replications == 0 || a.horizon_samples == 0 {
            return Err(Error::Config("ablation sample and replication counts must be positive".into()));
        }
        if a.horizon_samples > a.reference_samples {
            return Err(Error::Config("horizon sample count exceeds the reference count".into()));
        }
        let on_grid = |t: f64, what: &str| -> Result<()> {
            if !(t >= 0.0) || t > times.end() + 1e-9 {
                return Err(Error::Config(format!("{what} {t} is outside [0, {}]", times.end())));
            }
            times.index_of(t).map(|_| ()).map_err(|_| Error::Config(format!("{what} {t} is not on the time grid")))
        };
        for t in &a.decision_times {
            on_grid(*t, "ablation decision time")?;
        }
        on_grid(a.horizon_decision_time, "horizon decision time")?;
        for h in &a.horizons {
            if !(*h > 0.0) {
                return Err(Error::Config(format!("horizon {h} must be positive")));
            }
            on_grid(a.horizon_decision_time + h, "horizon end")?;
        }
        Ok(())
    }
}

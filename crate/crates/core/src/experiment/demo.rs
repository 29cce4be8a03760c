//! A hand-built instance where myopic information gain picks a cell whose
//! drifter leaves the domain at once, while the look-ahead picks one whose
//! drifter keeps circulating.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gp::{Dataset, InfoGainFactor};
use crate::kernels::{Point2, SpaceTimePoint, TemporalHelmholtzParams};
use crate::ocean::{self, ObservationSchedule, SpatialGrid, TimeGrid, VectorFieldSeries};
use crate::policies::{self, BallastConfig, DecisionContext};
use crate::rng;

#[derive(Clone, Debug)]
pub struct DemoInstance {
    pub grid: SpatialGrid,
    pub times: TimeGrid,
    pub truth: VectorFieldSeries,
    pub data: Dataset,
    pub decision_time: f64,
    pub params: TemporalHelmholtzParams,
    pub schedule: ObservationSchedule,
    pub ballast: BallastConfig,
}

/// Outcome of the comparison under the true field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub eig_cell: usize,
    pub ballast_cell: usize,
    pub eig_position: Point2,
    pub ballast_position: Point2,
    /// Information gain of the realized observations, over the existing data.
    pub eig_lagrangian_utility: f64,
    pub ballast_lagrangian_utility: f64,
    pub eig_exit_time: Option<f64>,
    pub ballast_exit_time: Option<f64>,
    pub eig_observations: usize,
    pub ballast_observations: usize,
}

/// Outward flow on the border ring, a solid-body vortex inside it.
pub fn demo_velocity(s: Point2, half_width: f64) -> [f64; 2] {
    let (x, y) = (s[0], s[1]);
    if x.abs().max(y.abs()) > half_width {
        let r = (x * x + y * y).sqrt();
        [2.0 * x / r, 2.0 * y / r]
    } else {
        [-1.5 * y, 1.5 * x]
    }
}

/// 7×7 cells of width 0.5 on `[-1.75, 1.75]²`, horizon `[0, 2]`, decision
/// at 1. Every cell is observed at time 0; interior cells again at
/// 0.5, 0.75 and 1, so the border is the least certain region at the
/// decision time.
pub fn demo_instance(seed: u64) -> Result<DemoInstance> {
    let grid = SpatialGrid::regular(7, 7, [-1.75, 1.75, -1.75, 1.75])?;
    let times = TimeGrid::spanning(0.0, 2.0, 0.01)?;
    let truth = VectorFieldSeries::from_fn(grid.clone(), times, |s, _| demo_velocity(s, 1.25));
    let params = TemporalHelmholtzParams::synthetic_default();
    let schedule = ObservationSchedule::default();
    let noise = Normal::new(0.0, schedule.noise_sd).expect("valid sd");
    let mut r = rng::stream(seed, &[rng::tag("demo-observations")]);
    let mut data = Dataset::default();
    let mut observe = |s: Point2, t: f64| {
        let v = demo_velocity(s, 1.25);
        data.push(SpaceTimePoint::new(s, t), [v[0] + noise.sample(&mut r), v[1] + noise.sample(&mut r)]);
    };
    for s in grid.centers() {
        observe(*s, 0.0);
    }
    for t in [0.5, 0.75, 1.0] {
        for s in grid.centers().iter().filter(|s| s[0].abs().max(s[1].abs()) < 1.25) {
            observe(*s, t);
        }
    }
    let ballast = BallastConfig { samples: 20, utility_stride: 2, ..BallastConfig::default() };
    Ok(DemoInstance { grid, times, truth, data, decision_time: 1.0, params, schedule, ballast })
}

impl DemoInstance {
    pub fn context(&self) -> DecisionContext<'_> {
        DecisionContext {
            dataset: &self.data,
            decision_time: self.decision_time,
            grid: &self.grid,
            times: self.times,
            schedule: self.schedule,
            params: self.params,
            drifters: &[],
        }
    }

    /// Lagrangian utility of every cell: information gain over the existing
    /// data of the observations a drifter released there would make under
    /// the true field, at the full observation schedule.
    pub fn lagrangian_utilities(&self) -> Result<Vec<f64>> {
        let ctx = self.context();
        let cfg = BallastConfig { utility_stride: 1, ..self.ballast };
        let base = InfoGainFactor::new(&self.params, &self.data.points)?.logdet();
        let u = policies::lagrangian_utilities(&ctx, &self.params, &self.truth, self.times.end(), &cfg)?;
        Ok(u.into_iter().map(|v| v - base).collect())
    }

    pub fn run(&self, seed: u64) -> Result<DemoReport> {
        let ctx = self.context();
        let eig_cell = policies::choose_eig(&ctx)?;
        let ballast_cell = policies::choose_ballast(&ctx, &self.ballast, seed)?.cell;
        let lu = self.lagrangian_utilities()?;
        let path = |c: usize| ocean::simulate_trajectory(&self.truth, self.grid.centers()[c], self.decision_time, self.times.end());
        let (pe, pb) = (path(eig_cell)?, path(ballast_cell)?);
        let stride = self.schedule.stride(self.times.dt)?;
        Ok(DemoReport {
            eig_cell,
            ballast_cell,
            eig_position: self.grid.centers()[eig_cell],
            ballast_position: self.grid.centers()[ballast_cell],
            eig_lagrangian_utility: lu[eig_cell],
            ballast_lagrangian_utility: lu[ballast_cell],
            eig_exit_time: pe.exit_time,
            ballast_exit_time: pb.exit_time,
            eig_observations: ocean::observation_points(&pe, stride, false).len(),
            ballast_observations: ocean::observation_points(&pb, stride, false).len(),
        })
    }
}

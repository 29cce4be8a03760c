//! Quick self-check of the fast paths against the dense oracles.

use nalgebra::DVector;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gp::InfoGainFactor;
use crate::kernels::{self, SpaceTimePoint, TemporalHelmholtzParams};
use crate::ocean::SpatialGrid;
use crate::oracle;
use crate::rng::{self, tag, Rng};
use crate::spde::{self, GridObservation, SpatioTemporalSsm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, cases: usize, max_error: f64, tolerance: f64) -> Check {
    Check { name: name.into(), cases, max_error, tolerance, passed: max_error < tolerance }
}

fn params(r: &mut Rng) -> TemporalHelmholtzParams {
    let v: [f64; 7] = std::array::from_fn(|i| if i == 6 { r.random_range(0.05..0.5) } else { r.random_range(0.3..1.5) });
    TemporalHelmholtzParams::from_vec(&v)
}

fn point(r: &mut Rng) -> SpaceTimePoint {
    SpaceTimePoint::new([r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)], r.random_range(0.0..3.0))
}

fn kernel_check(r: &mut Rng, cases: usize) -> Check {
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < cases {
        let p = params(r);
        let (x, x2) = (point(r), point(r));
        if (x.t - x2.t).abs() < 0.05 {
            continue;
        }
        done += 1;
        let e = kernels::extended_block(&p, &x, &x2);
        let fd = oracle::extended_block_fd(&p, &x, &x2, 1e-4);
        worst = worst.max((e - fd).norm() / fd.norm().max(1e-12));
    }
    check("kernel derivative blocks vs finite differences", cases, worst, 1e-5)
}

fn smoother_check(r: &mut Rng, cases: usize) -> Result<Check> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let p = params(r);
        let grid = SpatialGrid::regular(r.random_range(1..=3), r.random_range(1..=3), [-1.0, 1.0, -1.0, 1.0])?;
        let (n, n_times, dt) = (grid.len(), r.random_range(2..=6usize), r.random_range(0.05..0.6));
        let mut obs: Vec<GridObservation> = Vec::new();
        for _ in 0..r.random_range(1..=30usize.min(n * n_times)) {
            let o = GridObservation {
                time_index: r.random_range(0..n_times),
                cell: r.random_range(0..n),
                value: [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
            };
            if !obs.iter().any(|q| q.time_index == o.time_index && q.cell == o.cell) {
                obs.push(o);
            }
        }
        let ssm = SpatioTemporalSsm::new(&p, &grid, dt)?;
        let smoothed = spde::rts_smoother(&spde::kalman_filter(&ssm, &obs, n_times, p.obs_noise_sd)?, &ssm)?;
        let at = |k: usize, c: usize| SpaceTimePoint::new(grid.centers()[c], k as f64 * dt);
        let pts: Vec<SpaceTimePoint> = obs.iter().map(|o| at(o.time_index, o.cell)).collect();
        let y = DVector::from_iterator(2 * obs.len(), obs.iter().flat_map(|o| o.value));
        let test: Vec<SpaceTimePoint> = (0..n_times).flat_map(|k| (0..n).map(move |c| (k, c))).map(|(k, c)| at(k, c)).collect();
        let (mean, cov) = oracle::gp_posterior_dense(&p, &pts, &y, &test);
        let m = 2 * n;
        for (k, s) in smoothed.iter().enumerate() {
            let dm = mean.rows(k * m, m);
            worst = worst.max((s.m.rows(0, m) - dm).amax() / dm.amax().max(1e-12));
            let dc = cov.view((k * m, k * m), (m, m));
            worst = worst.max((s.p.view((0, 0), (m, m)) - dc).amax() / dc.amax());
        }
    }
    Ok(check("Kalman + RTS smoother vs dense posterior", cases, worst, 1e-6))
}

fn info_gain_check(r: &mut Rng, cases: usize) -> Result<Check> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let p = params(r);
        let x: Vec<SpaceTimePoint> = (0..12).map(|_| point(r)).collect();
        let a: Vec<SpaceTimePoint> = (0..4).map(|_| point(r)).collect();
        let got = InfoGainFactor::new(&p, &x)?.logdet_with(&a)?;
        let mut all = x;
        all.extend(a);
        let want = oracle::info_gain_direct(&p, &all);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    Ok(check("cached log-det updates vs direct factorization", cases, worst, 1e-8))
}

/// Run every check on `cases` random instances each.
pub fn run(seed: u64, cases: usize) -> Result<ValidationReport> {
    let mut r = rng::stream(seed, &[tag("validate")]);
    let checks = vec![kernel_check(&mut r, cases), smoother_check(&mut r, cases)?, info_gain_check(&mut r, cases)?];
    Ok(ValidationReport { seed, checks })
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        let rep = super::run(1, 5).unwrap();
        assert_eq!(rep.checks.len(), 3);
        assert!(rep.passed(), "{rep:?}");
    }
}

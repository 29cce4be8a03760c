#![allow(dead_code)]

use driftplace::gp::Dataset;
use driftplace::kernels::{SpaceTimePoint, TemporalHelmholtzParams};
use driftplace::rng::{self, Rng};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    rng::stream(seed, &[rng::tag("tests")])
}

pub fn random_params(r: &mut Rng) -> TemporalHelmholtzParams {
    let mut v = [0.0; 7];
    for (i, x) in v.iter_mut().enumerate() {
        *x = if i == 6 { r.random_range(0.05..0.5) } else { r.random_range(0.3..1.5) };
    }
    TemporalHelmholtzParams::from_vec(&v)
}

pub fn random_point(r: &mut Rng) -> SpaceTimePoint {
    SpaceTimePoint::new([r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)], r.random_range(0.0..3.0))
}

pub fn random_points(r: &mut Rng, n: usize) -> Vec<SpaceTimePoint> {
    (0..n).map(|_| random_point(r)).collect()
}

pub fn random_dataset(r: &mut Rng, n: usize) -> Dataset {
    let pts = random_points(r, n);
    let vals = (0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
    Dataset::new(pts, vals).unwrap()
}

/// Largest entrywise relative error, scaled by the larger of `|b|` and `floor`.
pub fn max_rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}

/// Random gridded instance solved by Kalman filtering plus RTS smoothing and
/// by dense conditioning; returns the worst relative mean and covariance
/// discrepancies over all time slices (scaled by each slice's largest entry).
pub fn smoother_vs_dense(seed: u64) -> (f64, f64) {
    use driftplace::ocean::SpatialGrid;
    use driftplace::spde::{self, GridObservation, SpatioTemporalSsm};
    use driftplace::oracle;
    use nalgebra::DVector;

    let mut r = rng(seed);
    let p = random_params(&mut r);
    let (nx, ny) = (r.random_range(1..=3usize), r.random_range(1..=3usize));
    let n_times = r.random_range(2..=6usize);
    let dt = r.random_range(0.05..0.6);
    let grid = SpatialGrid::regular(nx, ny, [-1.0, 1.0, -1.0, 1.0]).unwrap();
    let n = grid.len();
    let n_obs = r.random_range(1..=30usize.min(n * n_times));
    let mut obs: Vec<GridObservation> = Vec::new();
    while obs.len() < n_obs {
        let o = GridObservation {
            time_index: r.random_range(0..n_times),
            cell: r.random_range(0..n),
            value: [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
        };
        if !obs.iter().any(|q| q.time_index == o.time_index && q.cell == o.cell) {
            obs.push(o);
        }
    }
    let ssm = SpatioTemporalSsm::new(&p, &grid, dt).unwrap();
    let out = spde::kalman_filter(&ssm, &obs, n_times, p.obs_noise_sd).unwrap();
    let smoothed = spde::rts_smoother(&out, &ssm).unwrap();

    let at = |k: usize, c: usize| SpaceTimePoint::new(grid.centers()[c], k as f64 * dt);
    let obs_pts: Vec<SpaceTimePoint> = obs.iter().map(|o| at(o.time_index, o.cell)).collect();
    let y = DVector::from_iterator(2 * obs.len(), obs.iter().flat_map(|o| o.value));
    let test: Vec<SpaceTimePoint> = (0..n_times).flat_map(|k| (0..n).map(move |c| (k, c))).map(|(k, c)| at(k, c)).collect();
    let (mean, cov) = oracle::gp_posterior_dense(&p, &obs_pts, &y, &test);
    let m = 2 * n;
    let (mut worst_m, mut worst_c) = (0.0f64, 0.0f64);
    for (k, s) in smoothed.iter().enumerate() {
        let dm = mean.rows(k * m, m).into_owned();
        let sm = s.m.rows(0, m).into_owned();
        worst_m = worst_m.max((&sm - &dm).amax() / dm.amax().max(1e-12));
        let dc = cov.view((k * m, k * m), (m, m)).into_owned();
        let sc = s.p.view((0, 0), (m, m)).into_owned();
        worst_c = worst_c.max((&sc - &dc).amax() / dc.amax());
    }
    (worst_m, worst_c)
}

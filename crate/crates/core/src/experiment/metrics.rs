//! Evaluation metrics: field L2 error, policy ranks and iso-performance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Dataset, GpFit};
use crate::kernels::{SpaceTimePoint, TemporalHelmholtzParams};
use crate::ocean::VectorFieldSeries;
use crate::policies::average_ranks;

/// Mean and standard error (sample SD / √n; 0 for a single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanSe { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        if values.len() == 1 {
            return MeanSe { mean, se: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        MeanSe { mean, se: (var / n).sqrt() }
    }
}

/// Mean over `(eval time, cell)` of `‖μ − V_true‖₂`.
///
/// `mean` is time-major: entry `i·N_space + c` belongs to `eval_steps[i]`
/// and cell `c`.
pub fn metric_l2(mean: &[[f64; 2]], truth: &VectorFieldSeries, eval_steps: &[usize]) -> Result<f64> {
    let n = truth.grid.len();
    if mean.len() != n * eval_steps.len() || eval_steps.is_empty() {
        return Err(Error::Shape(format!(
            "{} mean vectors for {} cells × {} times",
            mean.len(),
            n,
            eval_steps.len()
        )));
    }
    let mut total = 0.0;
    for (i, k) in eval_steps.iter().enumerate() {
        if *k >= truth.times.len {
            return Err(Error::Shape(format!("time index {k} outside the field")));
        }
        for c in 0..n {
            let v = truth.velocity(*k, c);
            let m = mean[i * n + c];
            total += ((m[0] - v[0]).powi(2) + (m[1] - v[1]).powi(2)).sqrt();
        }
    }
    Ok(total / mean.len() as f64)
}

/// Posterior-mean L2 error of `data` against `truth` on cell centers × the
/// given time steps.
pub fn posterior_l2(p: &TemporalHelmholtzParams, data: &Dataset, truth: &VectorFieldSeries, eval_steps: &[usize]) -> Result<f64> {
    let fit = GpFit::new(p, data)?;
    let test: Vec<SpaceTimePoint> = eval_steps
        .iter()
        .flat_map(|k| truth.grid.centers().iter().map(move |s| SpaceTimePoint::new(*s, truth.times.time(*k))))
        .collect();
    let mu = fit.mean_at(&test);
    let mean: Vec<[f64; 2]> = (0..test.len()).map(|i| [mu[2 * i], mu[2 * i + 1]]).collect();
    metric_l2(&mean, truth, eval_steps)
}

fn check_table(errors: &[Vec<Vec<f64>>]) -> Result<(usize, usize)> {
    let runs = errors.first().map_or(0, |p| p.len());
    let steps = errors.first().and_then(|p| p.first()).map_or(0, |r| r.len());
    if runs == 0 || steps == 0 {
        return Err(Error::Shape("empty error table".into()));
    }
    for p in errors {
        if p.len() != runs || p.iter().any(|r| r.len() != steps) {
            return Err(Error::Shape("error table is ragged across policies or runs".into()));
        }
    }
    Ok((runs, steps))
}

/// Mean rank (1 = lowest error) per policy and deployment index.
///
/// `errors[p][r][m]` is the error of policy `p` in run `r` after placement
/// `m`; all policies share the same runs. Ties share their average rank.
pub fn policy_rank(errors: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<MeanSe>>> {
    let (runs, steps) = check_table(errors)?;
    let mut ranks = vec![vec![Vec::with_capacity(runs); steps]; errors.len()];
    for r in 0..runs {
        for m in 0..steps {
            let vals: Vec<f64> = errors.iter().map(|p| p[r][m]).collect();
            for (p, rank) in average_ranks(&vals).into_iter().enumerate() {
                ranks[p][m].push(rank);
            }
        }
    }
    Ok(ranks.into_iter().map(|p| p.iter().map(|v| MeanSe::of(v)).collect()).collect())
}

/// Fractional deployment index at which the piecewise-linear `baseline`
/// curve reaches `e`, searched forward from `m` when `e ≤ baseline[m]` and
/// backward otherwise.
///
/// Beyond the last index the curve is extended with its average slope when
/// that slope is negative; otherwise the search saturates at the ends.
pub fn baseline_crossing(baseline: &[f64], m: usize, e: f64) -> f64 {
    let last = baseline.len() - 1;
    if e <= baseline[m] {
        if e == baseline[m] {
            return m as f64;
        }
        for i in m..last {
            let (a, b) = (baseline[i], baseline[i + 1]);
            if b <= e {
                let frac = if a == b { 0.0 } else { (a - e) / (a - b) };
                return i as f64 + frac.clamp(0.0, 1.0);
            }
        }
        let slope = if last == 0 { 0.0 } else { (baseline[last] - baseline[0]) / last as f64 };
        if slope < 0.0 {
            last as f64 + (e - baseline[last]) / slope
        } else {
            last as f64
        }
    } else {
        for i in (0..m).rev() {
            let (a, b) = (baseline[i], baseline[i + 1]);
            if a >= e && e > b {
                return i as f64 + (a - e) / (a - b);
            }
        }
        0.0
    }
}

/// Extra deployments the baseline needs to match each policy, per index.
///
/// Positive values mean the policy saves drifters relative to the baseline.
pub fn iso_performance(errors: &[Vec<Vec<f64>>], baseline: usize) -> Result<Vec<Vec<MeanSe>>> {
    let (runs, steps) = check_table(errors)?;
    if baseline >= errors.len() {
        return Err(Error::InvalidParam(format!("baseline policy {baseline} not present")));
    }
    Ok(errors
        .iter()
        .map(|p| {
            (0..steps)
                .map(|m| {
                    let deltas: Vec<f64> =
                        (0..runs).map(|r| baseline_crossing(&errors[baseline][r], m, p[r][m]) - m as f64).collect();
                    MeanSe::of(&deltas)
                })
                .collect()
        })
        .collect())
}

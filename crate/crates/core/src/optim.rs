//! Bound-constrained quasi-Newton minimization (projected L-BFGS).

use std::collections::VecDeque;

/// Objective with gradient; `None` marks an infeasible point.
pub trait BoxProblem {
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

#[derive(Clone, Debug)]
pub struct BoxResult {
    pub x: Vec<f64>,
    /// Objective at `x`; `None` if the start point could not be evaluated.
    pub value: Option<f64>,
    pub converged: bool,
    pub evaluations: usize,
}

const MEMORY: usize = 8;

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn active(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64], i: usize) -> bool {
    (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)
}

/// Minimize over the box `[lo, hi]` starting from `x0` (projected first).
pub fn minimize_box(problem: &mut impl BoxProblem, x0: &[f64], lo: &[f64], hi: &[f64], max_iters: usize) -> BoxResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut evaluations = 1;
    let Some((mut f, mut g)) = problem.eval(&x) else {
        return BoxResult { x, value: None, converged: false, evaluations };
    };
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;

    for iter in 0..max_iters {
        let pg: Vec<f64> = (0..n).map(|i| if active(&x, &g, lo, hi, i) { 0.0 } else { g[i] }).collect();
        let pg_norm = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if pg_norm <= 1e-6 * (1.0 + f.abs()) {
            converged = true;
            break;
        }

        // two-loop recursion on the free variables
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..n {
                q[i] += (a - b) * s[i];
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| if pg[i] == 0.0 { 0.0 } else { -q[i] }).collect();
        if dot(&d, &g) >= 0.0 {
            mem.clear();
            d = pg.iter().map(|v| -v).collect();
        }

        let mut step = if mem.is_empty() && iter == 0 { (1.0 / pg_norm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + step * d[i]).collect();
            project(&mut xn, lo, hi);
            let dx: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
            if dx.iter().all(|v| *v == 0.0) {
                break;
            }
            evaluations += 1;
            if let Some((fn_, gn)) = problem.eval(&xn) {
                if fn_ <= f + 1e-4 * dot(&g, &dx) {
                    accepted = Some((xn, fn_, gn, dx));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if mem.len() == MEMORY {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        if decrease.abs() <= 1e-11 * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    BoxResult { x, value: Some(f), converged, evaluations }
}

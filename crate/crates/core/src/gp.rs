//! Dense Gaussian-process machinery for the temporal Helmholtz model.
//!
//! Observation vectors are flattened point-major (`[u0, v0, u1, v1, ...]`),
//! matching the Gram layout in [`crate::kernels`].

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, SpaceTimePoint, TemporalHelmholtzParams};
use crate::linalg;
use crate::optim::{self, BoxProblem};
use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Observations `(X_n, y_n)`: locations and 2D velocity readings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub points: Vec<SpaceTimePoint>,
    pub values: Vec<[f64; 2]>,
}

impl Dataset {
    pub fn new(points: Vec<SpaceTimePoint>, values: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        Ok(Dataset { points, values })
    }

    pub fn push(&mut self, x: SpaceTimePoint, y: [f64; 2]) {
        self.points.push(x);
        self.values.push(y);
    }

    pub fn extend(&mut self, other: &Dataset) {
        self.points.extend_from_slice(&other.points);
        self.values.extend_from_slice(&other.values);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Flattened observation vector `y`.
    pub fn y(&self) -> DVector<f64> {
        DVector::from_iterator(2 * self.len(), self.values.iter().flat_map(|v| v.iter().copied()))
    }
}

/// Posterior predictive moments at a list of test points.
#[derive(Clone, Debug)]
pub struct PosteriorPredictive {
    pub test_points: Vec<SpaceTimePoint>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

fn thelm(p: &TemporalHelmholtzParams) -> impl Fn(&SpaceTimePoint, &SpaceTimePoint) -> nalgebra::Matrix2<f64> + '_ {
    move |a, b| kernels::thelm_block(p, a, b)
}

/// `K(X,X) + σ²_obs I`, unjittered.
pub fn noisy_gram(p: &TemporalHelmholtzParams, points: &[SpaceTimePoint]) -> DMatrix<f64> {
    let mut a = kernels::gram_matrix(points, thelm(p));
    let s2 = p.obs_noise_sd * p.obs_noise_sd;
    for i in 0..a.nrows() {
        a[(i, i)] += s2;
    }
    a
}

/// Cholesky of a covariance, trying it as is and then with escalating jitter
/// starting at `1e-8·mean diag`.
pub(crate) fn factor(a: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let base = kernels::default_jitter(a).max(f64::MIN_POSITIVE);
    linalg::cholesky_escalating(a, base, 4)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what} ({}×{})", a.nrows(), a.ncols())))
}

/// A fitted GP: cached factor of `K + σ²I` and `α = (K + σ²I)⁻¹ y`.
#[derive(Clone, Debug)]
pub struct GpFit {
    pub params: TemporalHelmholtzParams,
    pub points: Vec<SpaceTimePoint>,
    pub chol: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub jitter: f64,
}

impl GpFit {
    pub fn new(p: &TemporalHelmholtzParams, d: &Dataset) -> Result<Self> {
        p.validate()?;
        if d.is_empty() {
            return Ok(GpFit {
                params: *p,
                points: Vec::new(),
                chol: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let a = noisy_gram(p, &d.points);
        let (chol, jitter) = factor(&a, "K + σ²I")?;
        let alpha = linalg::chol_solve(&chol, &d.y());
        Ok(GpFit { params: *p, points: d.points.clone(), chol, alpha, jitter })
    }

    /// Posterior mean at `test`, flattened point-major.
    pub fn mean_at(&self, test: &[SpaceTimePoint]) -> DVector<f64> {
        let mut out = DVector::zeros(2 * test.len());
        for (i, x) in test.iter().enumerate() {
            let mut acc = [0.0; 2];
            for (j, xo) in self.points.iter().enumerate() {
                let k = kernels::thelm_block(&self.params, x, xo);
                let (a0, a1) = (self.alpha[2 * j], self.alpha[2 * j + 1]);
                acc[0] += k[(0, 0)] * a0 + k[(0, 1)] * a1;
                acc[1] += k[(1, 0)] * a0 + k[(1, 1)] * a1;
            }
            out[2 * i] = acc[0];
            out[2 * i + 1] = acc[1];
        }
        out
    }

    pub fn predict(&self, test: &[SpaceTimePoint]) -> PosteriorPredictive {
        let kss = kernels::gram_matrix(test, thelm(&self.params));
        if self.points.is_empty() {
            return PosteriorPredictive {
                test_points: test.to_vec(),
                mean: DVector::zeros(2 * test.len()),
                covariance: kss,
            };
        }
        let ks = kernels::cross_gram(&self.points, test, thelm(&self.params));
        let mean = ks.tr_mul(&self.alpha);
        let mut v = ks;
        self.chol.solve_lower_triangular_mut(&mut v);
        let mut cov = kss - v.tr_mul(&v);
        linalg::symmetrize(&mut cov);
        PosteriorPredictive { test_points: test.to_vec(), mean, covariance: cov }
    }
}

/// `log p(y | X, θ)` with the standard `−(N/2)·log 2π` constant.
pub fn log_marginal_likelihood(p: &TemporalHelmholtzParams, d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::InvalidParam("log marginal likelihood needs data".into()));
    }
    let fit = GpFit::new(p, d)?;
    Ok(lml_from_fit(&fit, &d.y()))
}

fn lml_from_fit(fit: &GpFit, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    -0.5 * y.dot(&fit.alpha) - 0.5 * linalg::logdet_from_lower(&fit.chol) - 0.5 * n * LN_2PI
}

/// Log marginal likelihood and its gradient with respect to
/// `[ℓΦ, σ²Φ, ℓΨ, σ²Ψ, ℓ_t, σ²_t, σ_obs]`.
pub fn log_marginal_likelihood_with_grad(p: &TemporalHelmholtzParams, d: &Dataset) -> Result<(f64, [f64; 7])> {
    if d.is_empty() {
        return Err(Error::InvalidParam("log marginal likelihood needs data".into()));
    }
    let fit = GpFit::new(p, d)?;
    let y = d.y();
    let lml = lml_from_fit(&fit, &y);
    // W = ααᵀ − A⁻¹; ∂l/∂θ = ½ tr(W ∂A/∂θ)
    let mut w = linalg::chol_inverse(&fit.chol);
    w.neg_mut();
    w.ger(1.0, &fit.alpha, &fit.alpha, 1.0);
    let mut grad = [0.0; 7];
    let n = d.len();
    for i in 0..n {
        for j in 0..=i {
            let (_, grads) = kernels::thelm_block_with_grads(p, &d.points[i], &d.points[j]);
            let mult = if i == j { 0.5 } else { 1.0 };
            for (g, dk) in grad.iter_mut().zip(grads.iter()) {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        s += w[(2 * i + a, 2 * j + b)] * dk[(a, b)];
                    }
                }
                *g += mult * s;
            }
        }
    }
    grad[6] = p.obs_noise_sd * w.trace();
    Ok((lml, grad))
}

/// Posterior predictive of `f` at `test` given `d`.
pub fn posterior_predictive(p: &TemporalHelmholtzParams, d: &Dataset, test: &[SpaceTimePoint]) -> Result<PosteriorPredictive> {
    if test.is_empty() {
        return Err(Error::InvalidParam("posterior predictive needs test points".into()));
    }
    Ok(GpFit::new(p, d)?.predict(test))
}

/// `count` i.i.d. draws `μ + √Σ ξ`.
pub fn sample_marginal(pp: &PosteriorPredictive, count: usize, rng: &mut Rng) -> Result<Vec<DVector<f64>>> {
    let root = linalg::psd_sqrt(&pp.covariance)?;
    let n = pp.mean.len();
    Ok((0..count)
        .map(|_| {
            let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            &pp.mean + &root * xi
        })
        .collect())
}

/// Closed box for each hyperparameter, in `to_vec` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub lo: [f64; 7],
    pub hi: [f64; 7],
}

impl HyperBounds {
    /// `[0.1, 1]` for everything except the temporal lengthscale, `[0.1, 3]`.
    pub fn synthetic_default() -> Self {
        let mut hi = [1.0; 7];
        hi[4] = 3.0;
        HyperBounds { lo: [0.1; 7], hi }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..7 {
            if !(self.lo[i] > 0.0 && self.lo[i] <= self.hi[i] && self.hi[i].is_finite()) {
                return Err(Error::InvalidParam(format!(
                    "bounds for {} must satisfy 0 < lo <= hi, got [{}, {}]",
                    TemporalHelmholtzParams::PARAM_NAMES[i],
                    self.lo[i],
                    self.hi[i]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &TemporalHelmholtzParams) -> bool {
        p.to_vec().iter().enumerate().all(|(i, v)| *v >= self.lo[i] && *v <= self.hi[i])
    }

    pub fn clamp(&self, p: &TemporalHelmholtzParams) -> TemporalHelmholtzParams {
        let mut v = p.to_vec();
        for i in 0..7 {
            v[i] = v[i].clamp(self.lo[i], self.hi[i]);
        }
        TemporalHelmholtzParams::from_vec(&v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Random restarts in addition to the given initial point.
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { restarts: 4, max_iters: 100, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub params: TemporalHelmholtzParams,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub converged: bool,
    pub evaluations: usize,
}

struct NegLml<'a> {
    data: &'a Dataset,
}

impl BoxProblem for NegLml<'_> {
    fn eval(&mut self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let mut v = [0.0; 7];
        for i in 0..7 {
            v[i] = theta[i].exp();
        }
        let p = TemporalHelmholtzParams::from_vec(&v);
        let (l, g) = log_marginal_likelihood_with_grad(&p, self.data).ok()?;
        if !l.is_finite() {
            return None;
        }
        Some((-l, (0..7).map(|i| -g[i] * v[i]).collect()))
    }
}

/// Maximize the log marginal likelihood inside `bounds`.
///
/// Works in log-parameters with a projected L-BFGS, started from `init` and
/// from `opts.restarts` log-uniform random points. The best final value wins;
/// the result never scores below `init`.
pub fn optimize_hyperparameters(
    d: &Dataset,
    bounds: &HyperBounds,
    init: &TemporalHelmholtzParams,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    if d.is_empty() {
        return Err(Error::InvalidParam("hyperparameter optimization needs data".into()));
    }
    bounds.validate()?;
    if !bounds.contains(init) {
        return Err(Error::InvalidParam("initial hyperparameters lie outside the bounds".into()));
    }
    let init_lml = log_marginal_likelihood(init, d)?;
    if (0..7).all(|i| bounds.lo[i] == bounds.hi[i]) {
        let p = TemporalHelmholtzParams::from_vec(&bounds.lo);
        let l = log_marginal_likelihood(&p, d)?;
        return Ok(OptimizeResult { params: p, log_likelihood: l, initial_log_likelihood: init_lml, converged: true, evaluations: 1 });
    }
    let lo: Vec<f64> = bounds.lo.iter().map(|v| v.ln()).collect();
    let hi: Vec<f64> = bounds.hi.iter().map(|v| v.ln()).collect();
    let mut rng = crate::rng::stream(opts.seed, &[crate::rng::tag("hyper-restarts")]);
    let mut starts = vec![init.to_vec().iter().map(|v| v.ln()).collect::<Vec<f64>>()];
    for _ in 0..opts.restarts {
        starts.push((0..7).map(|i| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>()).collect());
    }

    let mut best = (init.to_vec(), init_lml, false);
    let mut evaluations = 1;
    let mut problem = NegLml { data: d };
    for x0 in starts {
        let r = optim::minimize_box(&mut problem, &x0, &lo, &hi, opts.max_iters);
        evaluations += r.evaluations;
        if let Some(f) = r.value {
            let l = -f;
            if l > best.1 {
                let mut v = [0.0; 7];
                for i in 0..7 {
                    v[i] = r.x[i].exp().clamp(bounds.lo[i], bounds.hi[i]);
                }
                best = (v, l, r.converged);
            } else if l >= best.1 - 1e-9 {
                best.2 |= r.converged;
            }
        }
    }
    let params = TemporalHelmholtzParams::from_vec(&best.0);
    Ok(OptimizeResult {
        params,
        log_likelihood: best.1,
        initial_log_likelihood: init_lml,
        converged: best.2,
        evaluations,
    })
}

fn inv_noise_var(p: &TemporalHelmholtzParams) -> Result<f64> {
    if !(p.obs_noise_sd > 0.0) {
        return Err(Error::InvalidParam("information gain needs a positive observation noise".into()));
    }
    Ok(1.0 / (p.obs_noise_sd * p.obs_noise_sd))
}

/// `I + σ⁻² K(a, b)` restricted to the off-diagonal (no identity).
fn scaled_cross(p: &TemporalHelmholtzParams, a: &[SpaceTimePoint], b: &[SpaceTimePoint], scale: f64) -> DMatrix<f64> {
    let mut m = kernels::cross_gram(a, b, thelm(p));
    m *= scale;
    m
}

fn scaled_gram_plus_identity(p: &TemporalHelmholtzParams, pts: &[SpaceTimePoint], scale: f64) -> DMatrix<f64> {
    let mut m = kernels::gram_matrix(pts, thelm(p));
    m *= scale;
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    m
}

/// Information-gain utility `log det(I + σ⁻² K(X ∪ A))`.
///
/// This is the mutual information between the latent field and noisy
/// observations at `X ∪ A`; the `X`-only part is constant across candidates.
pub fn eig_utility(p: &TemporalHelmholtzParams, existing: &[SpaceTimePoint], added: &[SpaceTimePoint]) -> Result<f64> {
    let mut all = existing.to_vec();
    all.extend_from_slice(added);
    if all.is_empty() {
        return Ok(0.0);
    }
    let scale = inv_noise_var(p)?;
    let m = scaled_gram_plus_identity(p, &all, scale);
    let l = linalg::cholesky_lower(&m)
        .ok_or_else(|| Error::NotPositiveDefinite("I + σ⁻²K".into()))?;
    Ok(linalg::logdet_from_lower(&l))
}

/// `log det [[K_X, K_X*], [K_*X, K_*]]` from the lower factor of `K_X`, via the
/// Schur complement `K_* − VᵀV` with `V = L⁻¹ K_X*`.
pub fn logdet_rank_q_update(chol_of_k_x: &DMatrix<f64>, k_x_xstar: &DMatrix<f64>, k_xstar: &DMatrix<f64>) -> Result<f64> {
    let n = chol_of_k_x.nrows();
    if k_x_xstar.nrows() != n || k_x_xstar.ncols() != k_xstar.nrows() || !k_xstar.is_square() {
        return Err(Error::Shape(format!(
            "factor {n}×{n}, cross {}×{}, new block {}×{}",
            k_x_xstar.nrows(),
            k_x_xstar.ncols(),
            k_xstar.nrows(),
            k_xstar.ncols()
        )));
    }
    let base = linalg::logdet_from_lower(chol_of_k_x);
    if k_xstar.nrows() == 0 {
        return Ok(base);
    }
    let mut v = k_x_xstar.clone();
    chol_of_k_x.solve_lower_triangular_mut(&mut v);
    let schur = k_xstar - v.tr_mul(&v);
    let ls = linalg::cholesky_lower(&schur)
        .ok_or_else(|| Error::NotPositiveDefinite("Schur complement of the rank-q update".into()))?;
    Ok(base + linalg::logdet_from_lower(&ls))
}

/// Cached factor of `B(X) = I + σ⁻² K(X)` for repeated information-gain
/// evaluations against a fixed point set.
#[derive(Clone, Debug)]
pub struct InfoGainFactor {
    params: TemporalHelmholtzParams,
    scale: f64,
    points: Vec<SpaceTimePoint>,
    /// Inverse of the lower factor; cross terms become plain products.
    chol_inv: DMatrix<f64>,
    logdet: f64,
}

impl InfoGainFactor {
    pub fn new(p: &TemporalHelmholtzParams, points: &[SpaceTimePoint]) -> Result<Self> {
        let scale = inv_noise_var(p)?;
        if points.is_empty() {
            return Ok(InfoGainFactor { params: *p, scale, points: Vec::new(), chol_inv: DMatrix::zeros(0, 0), logdet: 0.0 });
        }
        let b = scaled_gram_plus_identity(p, points, scale);
        let l = linalg::cholesky_lower(&b)
            .ok_or_else(|| Error::NotPositiveDefinite("I + σ⁻²K(X)".into()))?;
        Ok(InfoGainFactor {
            params: *p,
            scale,
            points: points.to_vec(),
            logdet: linalg::logdet_from_lower(&l),
            chol_inv: linalg::lower_inverse(&l),
        })
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn points(&self) -> &[SpaceTimePoint] {
        &self.points
    }

    fn schur(&self, added: &[SpaceTimePoint]) -> (DMatrix<f64>, DMatrix<f64>) {
        let b_xa = scaled_cross(&self.params, &self.points, added, self.scale);
        let v = &self.chol_inv * b_xa;
        let s = scaled_gram_plus_identity(&self.params, added, self.scale) - v.tr_mul(&v);
        (v, s)
    }

    /// The factor of `B(X ∪ added)`, by a block Cholesky step.
    pub fn extend(&self, added: &[SpaceTimePoint]) -> Result<InfoGainFactor> {
        if added.is_empty() {
            return Ok(self.clone());
        }
        let (v, s) = self.schur(added);
        let ls = linalg::cholesky_lower(&s)
            .ok_or_else(|| Error::NotPositiveDefinite("Schur complement while extending".into()))?;
        let ls_inv = linalg::lower_inverse(&ls);
        let (n, q) = (self.chol_inv.nrows(), ls.nrows());
        let mut chol_inv = DMatrix::zeros(n + q, n + q);
        chol_inv.view_mut((0, 0), (n, n)).copy_from(&self.chol_inv);
        // lower-left block: −L_S⁻¹ Vᵀ L_X⁻¹
        let ll = -(&ls_inv * v.transpose()) * &self.chol_inv;
        chol_inv.view_mut((n, 0), (q, n)).copy_from(&ll);
        chol_inv.view_mut((n, n), (q, q)).copy_from(&ls_inv);
        let mut points = self.points.clone();
        points.extend_from_slice(added);
        Ok(InfoGainFactor {
            params: self.params,
            scale: self.scale,
            points,
            chol_inv,
            logdet: self.logdet + linalg::logdet_from_lower(&ls),
        })
    }

    /// `log det B(X ∪ added)` reusing the cached factor.
    pub fn logdet_with(&self, added: &[SpaceTimePoint]) -> Result<f64> {
        if added.is_empty() {
            return Ok(self.logdet);
        }
        let (_, s) = self.schur(added);
        let ls = linalg::cholesky_lower(&s)
            .ok_or_else(|| Error::NotPositiveDefinite("Schur complement".into()))?;
        Ok(self.logdet + linalg::logdet_from_lower(&ls))
    }

    /// `log det B(X ∪ g)` for many groups `g`, batching the cross products.
    ///
    /// Groups are processed in chunks of at most `max_cols` flattened columns.
    pub fn logdet_with_each(&self, groups: &[Vec<SpaceTimePoint>], max_cols: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(groups.len());
        let mut start = 0;
        while start < groups.len() {
            let mut end = start;
            let mut cols = 0;
            while end < groups.len() && (end == start || cols + 2 * groups[end].len() <= max_cols) {
                cols += 2 * groups[end].len();
                end += 1;
            }
            let flat: Vec<SpaceTimePoint> = groups[start..end].iter().flatten().copied().collect();
            let v = if self.points.is_empty() {
                DMatrix::zeros(0, 2 * flat.len())
            } else {
                &self.chol_inv * scaled_cross(&self.params, &self.points, &flat, self.scale)
            };
            let mut offset = 0;
            for g in &groups[start..end] {
                let q = 2 * g.len();
                if q == 0 {
                    out.push(self.logdet);
                    continue;
                }
                let vg = v.columns(offset, q);
                let s = scaled_gram_plus_identity(&self.params, g, self.scale) - vg.tr_mul(&vg);
                let ls = linalg::cholesky_lower(&s)
                    .ok_or_else(|| Error::NotPositiveDefinite("Schur complement".into()))?;
                out.push(self.logdet + linalg::logdet_from_lower(&ls));
                offset += q;
            }
            start = end;
        }
        Ok(out)
    }
}

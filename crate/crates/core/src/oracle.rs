//! Slow, independent reference computations.
//!
//! Nothing here shares code paths with the fast implementations: derivative
//! blocks come from finite differences of scalar kernels, Gaussian algebra
//! from LU decompositions of dense joint covariances, matrix exponentials from
//! a scaled Taylor series. Used by the test suites and the `validate` command.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};

use crate::kernels::{Point2, SpaceTimePoint, TemporalHelmholtzParams};

/// Central difference `(f(x+h) − f(x−h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Squared-exponential kernel written out directly.
pub fn rbf_scalar(lengthscale: f64, variance: f64, s: Point2, s2: Point2) -> f64 {
    let r2 = (s[0] - s2[0]).powi(2) + (s[1] - s2[1]).powi(2);
    variance * (-r2 / (2.0 * lengthscale * lengthscale)).exp()
}

/// Matérn-3/2 kernel written out directly.
pub fn matern32_scalar(lengthscale: f64, variance: f64, t: f64, t2: f64) -> f64 {
    let r = 3f64.sqrt() * (t - t2).abs() / lengthscale;
    variance * (1.0 + r) * (-r).exp()
}

/// `[[k, ∂_{t'}k], [∂_t k, ∂²_{tt'}k]]` by finite differences (4-point stencil
/// for the mixed derivative).
pub fn matern32_block_fd(lengthscale: f64, variance: f64, t: f64, t2: f64, h: f64) -> Matrix2<f64> {
    let k = |a: f64, b: f64| matern32_scalar(lengthscale, variance, a, b);
    let d_t2 = central_difference(|b| k(t, b), t2, h);
    let d_t = central_difference(|a| k(a, t2), t, h);
    let d_tt2 = (k(t + h, t2 + h) - k(t + h, t2 - h) - k(t - h, t2 + h) + k(t - h, t2 - h)) / (4.0 * h * h);
    Matrix2::new(k(t, t2), d_t2, d_t, d_tt2)
}

/// `∂²k/∂s_a ∂s'_b` of a scalar kernel on the plane by a 4-point stencil.
pub fn mixed_partial(k: impl Fn(Point2, Point2) -> f64, s: Point2, s2: Point2, a: usize, b: usize, h: f64) -> f64 {
    let shift = |p: Point2, i: usize, d: f64| {
        let mut q = p;
        q[i] += d;
        q
    };
    (k(shift(s, a, h), shift(s2, b, h)) - k(shift(s, a, h), shift(s2, b, -h)) - k(shift(s, a, -h), shift(s2, b, h))
        + k(shift(s, a, -h), shift(s2, b, -h)))
        / (4.0 * h * h)
}

/// Helmholtz block assembled from finite-difference second derivatives of
/// the potential and stream kernels.
pub fn helmholtz_block_fd(p: &TemporalHelmholtzParams, s: Point2, s2: Point2, h: f64) -> Matrix2<f64> {
    let phi = |a: Point2, b: Point2| rbf_scalar(p.potential.lengthscale, p.potential.variance, a, b);
    let psi = |a: Point2, b: Point2| rbf_scalar(p.stream.lengthscale, p.stream.variance, a, b);
    let dphi = |a, b| mixed_partial(phi, s, s2, a, b, h);
    let dpsi = |a, b| mixed_partial(psi, s, s2, a, b, h);
    Matrix2::new(
        dphi(0, 0) + dpsi(1, 1),
        dphi(0, 1) - dpsi(1, 0),
        dphi(1, 0) - dpsi(0, 1),
        dphi(1, 1) + dpsi(0, 0),
    )
}

/// The temporal Helmholtz block from finite differences.
pub fn thelm_block_fd(p: &TemporalHelmholtzParams, x: &SpaceTimePoint, x2: &SpaceTimePoint, h: f64) -> Matrix2<f64> {
    helmholtz_block_fd(p, x.s, x2.s, h) * matern32_scalar(p.temporal.lengthscale, p.temporal.variance, x.t, x2.t)
}

/// The extended `[f, ∂_t f]` block by differencing the tHelm block in time.
pub fn extended_block_fd(p: &TemporalHelmholtzParams, x: &SpaceTimePoint, x2: &SpaceTimePoint, h: f64) -> Matrix4<f64> {
    let helm = helmholtz_block_fd(p, x.s, x2.s, h);
    let m = matern32_block_fd(p.temporal.lengthscale, p.temporal.variance, x.t, x2.t, h);
    let mut out = Matrix4::zeros();
    for a in 0..2 {
        for b in 0..2 {
            out.fixed_view_mut::<2, 2>(2 * a, 2 * b).copy_from(&(helm * m[(a, b)]));
        }
    }
    out
}

/// Dense joint covariance of noise-free `f` at `points`, with the RBF second
/// derivatives written out here rather than taken from the kernels module.
pub fn dense_thelm_cov(p: &TemporalHelmholtzParams, points: &[SpaceTimePoint]) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let b = helmholtz_analytic(p, points[i].s, points[j].s)
                * matern32_scalar(p.temporal.lengthscale, p.temporal.variance, points[i].t, points[j].t);
            k.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(&b);
        }
    }
    k
}

fn rbf_hessian(l: f64, v: f64, s: Point2, s2: Point2) -> Matrix2<f64> {
    // ∂²/∂s_a∂s'_b of v·exp(−r²/2l²) = k·(δ_ab/l² − d_a d_b/l⁴), d = s − s'
    let k = rbf_scalar(l, v, s, s2);
    let d = [s[0] - s2[0], s[1] - s2[1]];
    let l2 = l * l;
    Matrix2::from_fn(|a, b| k * ((if a == b { 1.0 } else { 0.0 }) / l2 - d[a] * d[b] / (l2 * l2)))
}

fn helmholtz_analytic(p: &TemporalHelmholtzParams, s: Point2, s2: Point2) -> Matrix2<f64> {
    let a = rbf_hessian(p.potential.lengthscale, p.potential.variance, s, s2);
    let b = rbf_hessian(p.stream.lengthscale, p.stream.variance, s, s2);
    Matrix2::new(a[(0, 0)] + b[(1, 1)], a[(0, 1)] - b[(1, 0)], a[(1, 0)] - b[(0, 1)], a[(1, 1)] + b[(0, 0)])
}

/// `log |det m|` through an LU decomposition.
pub fn logdet_lu(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    lu.u().diagonal().iter().map(|d| d.abs().ln()).sum()
}

fn solve_lu(m: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().solve(b).expect("singular matrix in oracle solve")
}

/// Multivariate normal log-density `log N(y; 0, cov)`.
pub fn mvn_logpdf(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let sol = solve_lu(cov, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()));
    -0.5 * y.dot(&sol.column(0)) - 0.5 * logdet_lu(cov) - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Conditional moments of block `b` given block `a = y` for a zero-mean joint
/// Gaussian with covariance `[[Σ_aa, Σ_ab], [Σ_ba, Σ_bb]]`.
pub fn gaussian_condition(
    s_aa: &DMatrix<f64>,
    s_ab: &DMatrix<f64>,
    s_bb: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    if s_aa.nrows() == 0 {
        return (DVector::zeros(s_bb.nrows()), s_bb.clone());
    }
    let w = solve_lu(s_aa, s_ab);
    let mean = w.tr_mul(y);
    let cov = s_bb - s_ab.transpose() * w;
    (mean, cov)
}

/// GP posterior at `test` given noisy observations, by conditioning the dense
/// joint Gaussian of `(y, f(test))`.
pub fn gp_posterior_dense(
    p: &TemporalHelmholtzParams,
    obs: &[SpaceTimePoint],
    y: &DVector<f64>,
    test: &[SpaceTimePoint],
) -> (DVector<f64>, DMatrix<f64>) {
    let mut all = obs.to_vec();
    all.extend_from_slice(test);
    let joint = dense_thelm_cov(p, &all);
    let no = 2 * obs.len();
    let nt = 2 * test.len();
    let mut s_aa = joint.view((0, 0), (no, no)).into_owned();
    for i in 0..no {
        s_aa[(i, i)] += p.obs_noise_sd * p.obs_noise_sd;
    }
    let s_ab = joint.view((0, no), (no, nt)).into_owned();
    let s_bb = joint.view((no, no), (nt, nt)).into_owned();
    gaussian_condition(&s_aa, &s_ab, &s_bb, y)
}

/// Direct `log det(I + σ⁻² K(points))` with no caching.
pub fn info_gain_direct(p: &TemporalHelmholtzParams, points: &[SpaceTimePoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut m = dense_thelm_cov(p, points) / (p.obs_noise_sd * p.obs_noise_sd);
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    logdet_lu(&m)
}

/// Entropy reduction of `f(test)` from adding noisy observations at `added`
/// to those at `existing`: `H(f_test | y_X) − H(f_test | y_X, y_A)`.
pub fn entropy_reduction(
    p: &TemporalHelmholtzParams,
    existing: &[SpaceTimePoint],
    added: &[SpaceTimePoint],
    test: &[SpaceTimePoint],
) -> f64 {
    let posterior_logdet = |obs: &[SpaceTimePoint]| {
        let y = DVector::zeros(2 * obs.len());
        let (_, cov) = gp_posterior_dense(p, obs, &y, test);
        logdet_lu(&cov)
    };
    let mut both = existing.to_vec();
    both.extend_from_slice(added);
    0.5 * (posterior_logdet(existing) - posterior_logdet(&both))
}

/// `exp(m)` by scaling and squaring with a 20-term Taylor series.
pub fn expm2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let norm = m.abs().max();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(squarings);
    let mut term = Matrix2::identity();
    let mut sum = Matrix2::identity();
    for k in 1..20 {
        term = term * a / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Dense Kronecker product by explicit loops.
pub fn kron_dense(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Unbiased sample covariance of paired samples, `Cov(x, y)`.
pub fn sample_cross_cov(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> DMatrix<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().fold(DVector::zeros(xs[0].len()), |a, v| a + v) / n;
    let my = ys.iter().fold(DVector::zeros(ys[0].len()), |a, v| a + v) / n;
    let mut c = DMatrix::zeros(mx.len(), my.len());
    for (x, y) in xs.iter().zip(ys) {
        c.ger(1.0, &(x - &mx), &(y - &my), 1.0);
    }
    c / (n - 1.0)
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn frobenius_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Reference advection through a piecewise-constant-per-cell field using
/// `substeps` Euler sub-steps per field step (the field time index is held
/// over each full step). Returns the positions at whole steps and whether the
/// path left the bounds.
pub fn reference_advection(
    field: &crate::ocean::VectorFieldSeries,
    s0: Point2,
    k0: usize,
    k1: usize,
    substeps: usize,
) -> (Vec<Point2>, bool) {
    let [a1, b1, a2, b2] = field.grid.bounds();
    let inside = |s: Point2| s[0] >= a1 && s[0] <= b1 && s[1] >= a2 && s[1] <= b2;
    let locate = |v: f64, edges: &[f64]| -> usize {
        let n = edges.len() - 1;
        (0..n).find(|&i| v >= edges[i] && (v < edges[i + 1] || (i == n - 1 && v <= edges[n]))).unwrap()
    };
    let h = field.times.dt / substeps as f64;
    let mut path = vec![s0];
    let mut s = s0;
    for k in k0..k1 {
        for _ in 0..substeps {
            let ix = locate(s[0], field.grid.edges_x());
            let iy = locate(s[1], field.grid.edges_y());
            let v = field.velocity(k, ix * field.grid.ny() + iy);
            let next = [s[0] + h * v[0], s[1] + h * v[1]];
            if !inside(next) {
                return (path, true);
            }
            s = next;
        }
        path.push(s);
    }
    (path, false)
}

//! State-space form of the separable Matérn-3/2 temporal Helmholtz GP.
//!
//! The full state stacks `f` and `∂_t f` at every grid node in block order,
//! `[f (2N); ∂_t f (2N)]`, each block point-major. Viewed as a `2N × 2` matrix
//! `S = [f, ∂_t f]`, one transition is `S ← S Φᵀ + L_K Z L_Qᵀ`, which is
//! `(Φ ⊗ I)` and noise covariance `Q ⊗ K_space` without forming either.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::{self, Dataset};
use crate::kernels::{self, Matern32Params, SpaceTimePoint, TemporalHelmholtzParams};
use crate::linalg;
use crate::ocean::{SpatialGrid, TimeGrid, VectorFieldSeries};
use crate::rng::Rng;

/// Companion-form Matérn-3/2 model and its exact discretization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalSsm {
    pub f: Matrix2<f64>,
    pub l: Vector2<f64>,
    /// White-noise spectral density `4λ³σ²`.
    pub qc: f64,
    pub phi: Matrix2<f64>,
    pub q: Matrix2<f64>,
    pub p_inf: Matrix2<f64>,
    pub dt: f64,
    pub lambda: f64,
}

pub fn build_temporal_ssm(p: &Matern32Params, dt: f64) -> Result<TemporalSsm> {
    p.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParam(format!("time step must be positive, got {dt}")));
    }
    let lam = p.lambda();
    let s2 = p.variance;
    let f = Matrix2::new(0.0, 1.0, -lam * lam, -2.0 * lam);
    let e = (-lam * dt).exp();
    let phi = Matrix2::new(1.0 + lam * dt, dt, -lam * lam * dt, 1.0 - lam * dt) * e;
    let lam2 = 3.0 / (p.lengthscale * p.lengthscale);
    let p_inf = Matrix2::new(s2, 0.0, 0.0, lam2 * s2);
    // Q = P∞ − Φ P∞ Φᵀ in closed form
    let a = lam * dt;
    let e2 = (-2.0 * a).exp();
    let one_minus_e2 = -(-2.0 * a).exp_m1();
    let q11 = s2 * (one_minus_e2 - e2 * (2.0 * a + 2.0 * a * a));
    let q12 = 2.0 * s2 * lam2 * lam * dt * dt * e2;
    let q22 = lam2 * s2 * (one_minus_e2 - e2 * (2.0 * a * a - 2.0 * a));
    let q = Matrix2::new(q11, q12, q12, q22);
    Ok(TemporalSsm {
        f,
        l: Vector2::new(0.0, 1.0),
        qc: 4.0 * lam.powi(3) * s2,
        phi,
        q,
        p_inf,
        dt,
        lambda: lam,
    })
}

/// Lower square root of a 2×2 PSD matrix (zero rows allowed).
fn sqrt2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let a = m[(0, 0)].max(0.0);
    if a <= 0.0 {
        return Matrix2::new(0.0, 0.0, 0.0, m[(1, 1)].max(0.0).sqrt());
    }
    let l11 = a.sqrt();
    let l21 = m[(1, 0)] / l11;
    let l22 = (m[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

/// Space-time state-space model over a fixed grid.
#[derive(Clone, Debug)]
pub struct SpatioTemporalSsm {
    pub params: TemporalHelmholtzParams,
    pub temporal: TemporalSsm,
    /// Helmholtz Gram matrix over the cell centers (2N × 2N).
    pub k_space: DMatrix<f64>,
    /// `L_K` with `L_K L_Kᵀ ≈ K_space`.
    pub k_space_sqrt: DMatrix<f64>,
    /// `L_Q` with `L_Q L_Qᵀ = Q`.
    pub q_sqrt: Matrix2<f64>,
}

impl SpatioTemporalSsm {
    pub fn new(p: &TemporalHelmholtzParams, grid: &SpatialGrid, dt: f64) -> Result<Self> {
        p.validate()?;
        let temporal = build_temporal_ssm(&p.temporal, dt)?;
        let k_space = kernels::gram_matrix(grid.centers(), |a, b| kernels::helmholtz_block(p, *a, *b));
        let k_space_sqrt = linalg::psd_sqrt(&k_space)?;
        Ok(SpatioTemporalSsm { params: *p, temporal, q_sqrt: sqrt2(&temporal.q), k_space, k_space_sqrt })
    }

    /// Number of grid nodes.
    pub fn n_space(&self) -> usize {
        self.k_space.nrows() / 2
    }

    pub fn state_dim(&self) -> usize {
        2 * self.k_space.nrows()
    }

    /// `A ⊗ K_space` in block order for a 2×2 temporal factor `A`.
    pub fn kron_space(&self, a: &Matrix2<f64>) -> DMatrix<f64> {
        let m = self.k_space.nrows();
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..2 {
            for j in 0..2 {
                out.view_mut((i * m, j * m), (m, m)).copy_from(&(&self.k_space * a[(i, j)]));
            }
        }
        out
    }

    /// Stationary covariance `P∞ ⊗ K_space`.
    pub fn stationary_cov(&self) -> DMatrix<f64> {
        self.kron_space(&self.temporal.p_inf)
    }

    pub fn phi_full(&self) -> DMatrix<f64> {
        let m = self.k_space.nrows();
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..2 {
            for j in 0..2 {
                for d in 0..m {
                    out[(i * m + d, j * m + d)] = self.temporal.phi[(i, j)];
                }
            }
        }
        out
    }

    pub fn q_full(&self) -> DMatrix<f64> {
        self.kron_space(&self.temporal.q)
    }

    /// A draw from the stationary prior `N(0, P∞ ⊗ K_space)`.
    pub fn sample_stationary(&self, rng: &mut Rng) -> DVector<f64> {
        let m = self.k_space.nrows();
        let z = DMatrix::from_fn(m, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lp = sqrt2(&self.temporal.p_inf);
        let s = &self.k_space_sqrt * z * lp.transpose();
        DVector::from_column_slice(s.as_slice())
    }
}

/// `vec(A X B) = (Bᵀ ⊗ A) vec(X)` without forming the Kronecker product;
/// `x` is `vec(X)` (column-stacked) with `X` of shape `a.ncols() × b.nrows()`.
pub fn kron_matvec(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != a.ncols() * b.nrows() {
        return Err(Error::Shape(format!(
            "vector of length {} for A {}×{} and B {}×{}",
            x.len(),
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let xm = DMatrix::from_column_slice(a.ncols(), b.nrows(), x.as_slice());
    let y = a * xm * b;
    Ok(DVector::from_column_slice(y.as_slice()))
}

/// Dense Kronecker product, for tests and small problems.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Work done by a propagation, in scalar multiply-adds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PropagationStats {
    pub steps: usize,
    pub multiply_adds: u64,
}

fn write_slice(field: &mut VectorFieldSeries, k: usize, state: &DMatrix<f64>) {
    field.set_slice(k, state.column(0).as_slice());
}

/// Roll the model forward `n_steps` from `initial_state` (length `4N`),
/// emitting velocities at `t_start + k·δt`, `k = 0..=n_steps`.
pub fn propagate_sample(
    initial_state: &DVector<f64>,
    ssm: &SpatioTemporalSsm,
    grid: &SpatialGrid,
    t_start: f64,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<(VectorFieldSeries, PropagationStats)> {
    let (mut fields, stats) = propagate_batch(std::slice::from_ref(initial_state), ssm, grid, t_start, n_steps, std::slice::from_mut(rng))?;
    Ok((fields.pop().unwrap(), stats))
}

/// Several independent rollouts, each with its own stream, sharing one
/// matrix product per step.
pub fn propagate_batch(
    initial: &[DVector<f64>],
    ssm: &SpatioTemporalSsm,
    grid: &SpatialGrid,
    t_start: f64,
    n_steps: usize,
    rngs: &mut [Rng],
) -> Result<(Vec<VectorFieldSeries>, PropagationStats)> {
    let m = ssm.k_space.nrows();
    if grid.len() * 2 != m {
        return Err(Error::Shape(format!("grid has {} cells but the model has {}", grid.len(), m / 2)));
    }
    if initial.len() != rngs.len() {
        return Err(Error::Shape("one random stream per rollout is required".into()));
    }
    if let Some(bad) = initial.iter().find(|s| s.len() != 2 * m) {
        return Err(Error::Shape(format!("initial state has length {}, expected {}", bad.len(), 2 * m)));
    }
    let times = TimeGrid::new(t_start, ssm.temporal.dt, n_steps + 1)?;
    let nb = initial.len();
    let mut states: Vec<DMatrix<f64>> = initial.iter().map(|s| DMatrix::from_column_slice(m, 2, s.as_slice())).collect();
    let mut fields: Vec<VectorFieldSeries> = (0..nb).map(|_| VectorFieldSeries::zeros(grid.clone(), times)).collect();
    for (f, s) in fields.iter_mut().zip(&states) {
        write_slice(f, 0, s);
    }
    let phi_t = ssm.temporal.phi.transpose();
    let lq_t = ssm.q_sqrt.transpose();
    let mut w = DMatrix::zeros(m, 2 * nb);
    let mut noise = DMatrix::zeros(m, 2 * nb);
    for k in 1..=n_steps {
        for (j, rng) in rngs.iter_mut().enumerate() {
            for c in 0..2 {
                for r in 0..m {
                    w[(r, 2 * j + c)] = rng.sample::<f64, _>(StandardNormal);
                }
            }
            // Z L_Qᵀ, column pair j
            for r in 0..m {
                let (z0, z1) = (w[(r, 2 * j)], w[(r, 2 * j + 1)]);
                w[(r, 2 * j)] = z0 * lq_t[(0, 0)] + z1 * lq_t[(1, 0)];
                w[(r, 2 * j + 1)] = z0 * lq_t[(0, 1)] + z1 * lq_t[(1, 1)];
            }
        }
        noise.gemm(1.0, &ssm.k_space_sqrt, &w, 0.0);
        for (j, s) in states.iter_mut().enumerate() {
            let next = &*s * phi_t + noise.columns(2 * j, 2);
            *s = DMatrix::from_column_slice(m, 2, next.as_slice());
            write_slice(&mut fields[j], k, s);
        }
    }
    let per_step = (m * m * 2 + m * 8) as u64;
    Ok((fields, PropagationStats { steps: n_steps, multiply_adds: per_step * n_steps as u64 * nb as u64 }))
}

/// Joint posterior of `[f; ∂_t f]` over the grid at time `t_n`, in block order.
pub fn initial_state_posterior(
    p: &TemporalHelmholtzParams,
    d: &Dataset,
    grid: &SpatialGrid,
    t_n: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    p.validate()?;
    if let Some(x) = d.points.iter().find(|x| x.t > t_n + 1e-9) {
        return Err(Error::InvalidParam(format!("observation at t={} is after the decision time {t_n}", x.t)));
    }
    let n = grid.len();
    let m = 2 * n;
    let temporal0 = kernels::matern32_block(&p.temporal, t_n, t_n);
    let k_space = kernels::gram_matrix(grid.centers(), |a, b| kernels::helmholtz_block(p, *a, *b));
    let mut prior = DMatrix::zeros(2 * m, 2 * m);
    for a in 0..2 {
        for b in 0..2 {
            prior.view_mut((a * m, b * m), (m, m)).copy_from(&(&k_space * temporal0[(a, b)]));
        }
    }
    if d.is_empty() {
        return Ok((DVector::zeros(2 * m), prior));
    }
    // Cov(state, y): rows in block order, columns point-major over observations
    let mut c = DMatrix::zeros(2 * m, 2 * d.len());
    for (i, s) in grid.centers().iter().enumerate() {
        let xs = SpaceTimePoint::new(*s, t_n);
        for (j, xo) in d.points.iter().enumerate() {
            let e = kernels::extended_block(p, &xs, xo);
            for a in 0..2 {
                for r in 0..2 {
                    for cc in 0..2 {
                        c[(a * m + 2 * i + r, 2 * j + cc)] = e[(2 * a + r, cc)];
                    }
                }
            }
        }
    }
    let fit = gp::GpFit::new(p, d)?;
    let mean = &c * &fit.alpha;
    let mut v = c.transpose();
    fit.chol.solve_lower_triangular_mut(&mut v);
    let mut cov = prior - v.tr_mul(&v);
    linalg::symmetrize(&mut cov);
    Ok((mean, cov))
}

/// `count` joint draws of the grid state at `t_n` given `d`.
pub fn draw_initial_state(
    p: &TemporalHelmholtzParams,
    d: &Dataset,
    grid: &SpatialGrid,
    t_n: f64,
    rng: &mut Rng,
    count: usize,
) -> Result<Vec<DVector<f64>>> {
    let (mean, cov) = initial_state_posterior(p, d, grid, t_n)?;
    let root = linalg::psd_sqrt(&cov)?;
    Ok((0..count)
        .map(|_| {
            let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            &mean + &root * z
        })
        .collect())
}

/// Velocity observation at a grid node and time index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridObservation {
    pub time_index: usize,
    pub cell: usize,
    pub value: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub m: DVector<f64>,
    pub p: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct FilterOutput {
    /// `m_{k|k}, P_{k|k}`.
    pub filtered: Vec<FilterState>,
    /// `m_{k|k−1}, P_{k|k−1}`; entry 0 is the stationary prior.
    pub predicted: Vec<FilterState>,
}

/// Kalman filter over `n_times` grid times starting at equilibrium.
pub fn kalman_filter(ssm: &SpatioTemporalSsm, obs: &[GridObservation], n_times: usize, noise_sd: f64) -> Result<FilterOutput> {
    let dim = ssm.state_dim();
    let n = ssm.n_space();
    if let Some(o) = obs.iter().find(|o| o.time_index >= n_times || o.cell >= n) {
        return Err(Error::InvalidParam(format!(
            "observation at time index {} / cell {} is off the grid",
            o.time_index, o.cell
        )));
    }
    let phi = ssm.phi_full();
    let q = ssm.q_full();
    let r2 = noise_sd * noise_sd;
    let mut filtered = Vec::with_capacity(n_times);
    let mut predicted = Vec::with_capacity(n_times);
    let mut m = DVector::zeros(dim);
    let mut p = ssm.stationary_cov();
    for k in 0..n_times {
        if k > 0 {
            m = &phi * &m;
            p = &phi * &p * phi.transpose() + &q;
            linalg::symmetrize(&mut p);
        }
        predicted.push(FilterState { m: m.clone(), p: p.clone() });
        let here: Vec<&GridObservation> = obs.iter().filter(|o| o.time_index == k).collect();
        if !here.is_empty() {
            let rows = 2 * here.len();
            let mut h = DMatrix::zeros(rows, dim);
            let mut y = DVector::zeros(rows);
            for (i, o) in here.iter().enumerate() {
                for c in 0..2 {
                    h[(2 * i + c, 2 * o.cell + c)] = 1.0;
                    y[2 * i + c] = o.value[c];
                }
            }
            let v = &y - &h * &m;
            let ph = &p * h.transpose();
            let mut s = &h * &ph;
            for i in 0..rows {
                s[(i, i)] += r2;
            }
            let ls = linalg::cholesky_lower(&s)
                .ok_or_else(|| Error::NotPositiveDefinite("innovation covariance".into()))?;
            let gain = &ph * linalg::chol_inverse(&ls);
            m += &gain * v;
            let ikh = DMatrix::identity(dim, dim) - &gain * &h;
            p = &ikh * &p * ikh.transpose() + (&gain * gain.transpose()) * r2;
            linalg::symmetrize(&mut p);
        }
        filtered.push(FilterState { m: m.clone(), p: p.clone() });
    }
    Ok(FilterOutput { filtered, predicted })
}

/// Rauch–Tung–Striebel smoother over a filter run.
pub fn rts_smoother(out: &FilterOutput, ssm: &SpatioTemporalSsm) -> Result<Vec<FilterState>> {
    let n = out.filtered.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let phi = ssm.phi_full();
    let mut smoothed = vec![out.filtered[n - 1].clone()];
    for k in (0..n - 1).rev() {
        let f = &out.filtered[k];
        let pred = &out.predicted[k + 1];
        let pred_inv = match linalg::cholesky_lower(&pred.p) {
            Some(l) => linalg::chol_inverse(&l),
            None => pseudo_inverse(&pred.p),
        };
        let gain = &f.p * phi.transpose() * pred_inv;
        let next = smoothed.last().unwrap();
        let m = &f.m + &gain * (&next.m - &pred.m);
        let mut p = &f.p + &gain * (&next.p - &pred.p) * gain.transpose();
        linalg::symmetrize(&mut p);
        smoothed.push(FilterState { m, p });
    }
    smoothed.reverse();
    Ok(smoothed)
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let tol = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let inv = eig.eigenvalues.map(|v| if v > tol { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

//! Covariance functions for the temporal Helmholtz vector-field model.
//!
//! The spatial part is a Helmholtz kernel built from two independent scalar
//! squared-exponential kernels (potential and stream function); the temporal
//! part is a Matérn-3/2 kernel. All derivative blocks are analytic. The
//! Matérn kernel is written in terms of the signed lag `τ = t − t'` with `|τ|`,
//! so the second derivative at zero lag is exact (`3σ²/ℓ²`).
//!
//! Block Gram matrices use point-major, output-minor layout: the `d` outputs
//! of point `i` occupy rows `d·i .. d·i + d`.

use nalgebra::{DMatrix, Matrix2, Matrix4, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub type Point2 = [f64; 2];

/// A space-time input `(s, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub s: Point2,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(s: Point2, t: f64) -> Self {
        SpaceTimePoint { s, t }
    }
}

/// Squared-exponential kernel `σ²·exp(−‖s−s'‖²/(2ℓ²))` on the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfParams {
    pub lengthscale: f64,
    pub variance: f64,
}

impl RbfParams {
    pub fn new(lengthscale: f64, variance: f64) -> Result<Self> {
        let p = RbfParams { lengthscale, variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "RBF lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "RBF variance must be positive, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    pub fn eval(&self, s: Point2, s2: Point2) -> f64 {
        let d0 = s[0] - s2[0];
        let d1 = s[1] - s2[1];
        let r2 = d0 * d0 + d1 * d1;
        self.variance * (-0.5 * r2 / (self.lengthscale * self.lengthscale)).exp()
    }

    /// `∂²k/∂s_a ∂s'_b` for `a, b ∈ {0, 1}`.
    pub fn cross_hessian(&self, s: Point2, s2: Point2) -> Matrix2<f64> {
        let d = [s[0] - s2[0], s[1] - s2[1]];
        let l2 = self.lengthscale * self.lengthscale;
        let k = self.variance * (-0.5 * (d[0] * d[0] + d[1] * d[1]) / l2).exp();
        let inv_l2 = 1.0 / l2;
        let inv_l4 = inv_l2 * inv_l2;
        Matrix2::new(
            k * (inv_l2 - d[0] * d[0] * inv_l4),
            -k * d[0] * d[1] * inv_l4,
            -k * d[1] * d[0] * inv_l4,
            k * (inv_l2 - d[1] * d[1] * inv_l4),
        )
    }

    /// Derivative of [`cross_hessian`](Self::cross_hessian) with respect to the lengthscale.
    pub fn cross_hessian_dlengthscale(&self, s: Point2, s2: Point2) -> Matrix2<f64> {
        let d = [s[0] - s2[0], s[1] - s2[1]];
        let l = self.lengthscale;
        let l2 = l * l;
        let r2 = d[0] * d[0] + d[1] * d[1];
        let k = self.variance * (-0.5 * r2 / l2).exp();
        let l3 = l2 * l;
        let l5 = l3 * l2;
        let entry = |a: usize, b: usize| {
            let delta = if a == b { 1.0 } else { 0.0 };
            let h = delta / l2 - d[a] * d[b] / (l2 * l2);
            let dh = -2.0 * delta / l3 + 4.0 * d[a] * d[b] / l5;
            k * (r2 / l3 * h + dh)
        };
        Matrix2::new(entry(0, 0), entry(0, 1), entry(1, 0), entry(1, 1))
    }
}

/// Matérn-3/2 kernel on time, `σ²(1+λ|τ|)e^{−λ|τ|}` with `λ = √3/ℓ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matern32Params {
    pub lengthscale: f64,
    pub variance: f64,
}

impl Matern32Params {
    pub fn new(lengthscale: f64, variance: f64) -> Result<Self> {
        let p = Matern32Params { lengthscale, variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "Matérn lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "Matérn variance must be positive, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        3f64.sqrt() / self.lengthscale
    }

    pub fn eval(&self, t: f64, t2: f64) -> f64 {
        let a = self.lambda() * (t - t2).abs();
        self.variance * (1.0 + a) * (-a).exp()
    }

    /// Derivative of the kernel value with respect to the lengthscale.
    pub fn eval_dlengthscale(&self, t: f64, t2: f64) -> f64 {
        let lam = self.lambda();
        let a = (t - t2).abs();
        self.variance * lam * lam * a * a * (-lam * a).exp() / self.lengthscale
    }
}

/// `[[k, ∂_{t'}k], [∂_t k, ∂²_{tt'}k]]` for the Matérn-3/2 kernel.
pub fn matern32_block(p: &Matern32Params, t: f64, t2: f64) -> Matrix2<f64> {
    let lam = p.lambda();
    let tau = t - t2;
    let a = lam * tau.abs();
    let e = (-a).exp();
    let s2 = p.variance;
    let k = s2 * (1.0 + a) * e;
    // λ² = 3/ℓ² directly, so the zero-lag entry is exactly 3σ²/ℓ²
    let lam2 = 3.0 / (p.lengthscale * p.lengthscale);
    let d_t2 = s2 * lam2 * tau * e;
    let d_tt2 = s2 * lam2 * (1.0 - a) * e;
    Matrix2::new(k, d_t2, -d_t2, d_tt2)
}

/// Hyperparameters of the temporal Helmholtz model plus observation noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalHelmholtzParams {
    pub potential: RbfParams,
    pub stream: RbfParams,
    pub temporal: Matern32Params,
    pub obs_noise_sd: f64,
}

impl TemporalHelmholtzParams {
    pub fn validate(&self) -> Result<()> {
        self.potential.validate()?;
        self.stream.validate()?;
        self.temporal.validate()?;
        if !(self.obs_noise_sd >= 0.0 && self.obs_noise_sd.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "observation noise sd must be nonnegative, got {}",
                self.obs_noise_sd
            )));
        }
        Ok(())
    }

    /// Synthetic-benchmark ground truth: Matérn ℓ=2.5 σ²=1, potential RBF
    /// ℓ=0.8, stream RBF ℓ=0.5, both σ²=0.5, observation noise sd 0.1.
    pub fn synthetic_default() -> Self {
        TemporalHelmholtzParams {
            potential: RbfParams { lengthscale: 0.8, variance: 0.5 },
            stream: RbfParams { lengthscale: 0.5, variance: 0.5 },
            temporal: Matern32Params { lengthscale: 2.5, variance: 1.0 },
            obs_noise_sd: 0.1,
        }
    }

    /// Flat vector `[ℓΦ, σ²Φ, ℓΨ, σ²Ψ, ℓ_t, σ²_t, σ_obs]`.
    pub fn to_vec(&self) -> [f64; 7] {
        [
            self.potential.lengthscale,
            self.potential.variance,
            self.stream.lengthscale,
            self.stream.variance,
            self.temporal.lengthscale,
            self.temporal.variance,
            self.obs_noise_sd,
        ]
    }

    pub fn from_vec(v: &[f64; 7]) -> Self {
        TemporalHelmholtzParams {
            potential: RbfParams { lengthscale: v[0], variance: v[1] },
            stream: RbfParams { lengthscale: v[2], variance: v[3] },
            temporal: Matern32Params { lengthscale: v[4], variance: v[5] },
            obs_noise_sd: v[6],
        }
    }

    pub const PARAM_NAMES: [&'static str; 7] = [
        "potential_lengthscale",
        "potential_variance",
        "stream_lengthscale",
        "stream_variance",
        "temporal_lengthscale",
        "temporal_variance",
        "obs_noise_sd",
    ];
}

fn combine_helmholtz(phi: &Matrix2<f64>, psi: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(
        phi[(0, 0)] + psi[(1, 1)],
        phi[(0, 1)] - psi[(1, 0)],
        phi[(1, 0)] - psi[(0, 1)],
        phi[(1, 1)] + psi[(0, 0)],
    )
}

/// The 2×2 spatial Helmholtz kernel (independent potential and stream).
pub fn helmholtz_block(p: &TemporalHelmholtzParams, s: Point2, s2: Point2) -> Matrix2<f64> {
    combine_helmholtz(
        &p.potential.cross_hessian(s, s2),
        &p.stream.cross_hessian(s, s2),
    )
}

/// Scalar value of the potential RBF, exposed for completeness.
pub fn rbf_eval(p: &RbfParams, s: Point2, s2: Point2) -> f64 {
    p.eval(s, s2)
}

/// `k_tHelm((s,t),(s',t')) = k_Helm(s,s')·k_time(t,t')`.
pub fn thelm_block(p: &TemporalHelmholtzParams, x: &SpaceTimePoint, x2: &SpaceTimePoint) -> Matrix2<f64> {
    helmholtz_block(p, x.s, x2.s) * p.temporal.eval(x.t, x2.t)
}

/// Covariance of `[f_u, f_v, ∂_t f_u, ∂_t f_v]` at `x` against the same at `x2`.
pub fn extended_block(p: &TemporalHelmholtzParams, x: &SpaceTimePoint, x2: &SpaceTimePoint) -> Matrix4<f64> {
    let h = helmholtz_block(p, x.s, x2.s);
    let m = matern32_block(&p.temporal, x.t, x2.t);
    let mut out = Matrix4::zeros();
    for a in 0..2 {
        for b in 0..2 {
            out.fixed_view_mut::<2, 2>(2 * a, 2 * b).copy_from(&(h * m[(a, b)]));
        }
    }
    out
}

/// Gradient of the tHelm block with respect to the six kernel hyperparameters
/// `[ℓΦ, σ²Φ, ℓΨ, σ²Ψ, ℓ_t, σ²_t]`, returned together with the block itself.
pub fn thelm_block_with_grads(
    p: &TemporalHelmholtzParams,
    x: &SpaceTimePoint,
    x2: &SpaceTimePoint,
) -> (Matrix2<f64>, [Matrix2<f64>; 6]) {
    let hphi = p.potential.cross_hessian(x.s, x2.s);
    let hpsi = p.stream.cross_hessian(x.s, x2.s);
    let z = Matrix2::zeros();
    let helm = combine_helmholtz(&hphi, &hpsi);
    let m = p.temporal.eval(x.t, x2.t);
    let d_lphi = combine_helmholtz(&p.potential.cross_hessian_dlengthscale(x.s, x2.s), &z) * m;
    let d_vphi = combine_helmholtz(&(hphi / p.potential.variance), &z) * m;
    let d_lpsi = combine_helmholtz(&z, &p.stream.cross_hessian_dlengthscale(x.s, x2.s)) * m;
    let d_vpsi = combine_helmholtz(&z, &(hpsi / p.stream.variance)) * m;
    let d_lt = helm * p.temporal.eval_dlengthscale(x.t, x2.t);
    let d_vt = helm * (m / p.temporal.variance);
    (helm * m, [d_lphi, d_vphi, d_lpsi, d_vpsi, d_lt, d_vt])
}

/// Block layout of a Gram matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Outputs of one point are contiguous.
    PointMajor { block: usize },
}

/// An assembled symmetric block Gram matrix.
#[derive(Clone, Debug)]
pub struct BlockGram {
    pub matrix: DMatrix<f64>,
    pub layout: Layout,
    pub jitter: f64,
}

/// Default jitter `1e-8 · mean diagonal`.
pub fn default_jitter(m: &DMatrix<f64>) -> f64 {
    1e-8 * linalg::mean_diagonal(m)
}

/// Cross Gram matrix `K(a, b)` in point-major layout.
pub fn cross_gram<P, const D: usize, F>(a: &[P], b: &[P], block: F) -> DMatrix<f64>
where
    F: Fn(&P, &P) -> SMatrix<f64, D, D>,
{
    let mut out = DMatrix::zeros(D * a.len(), D * b.len());
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            out.fixed_view_mut::<D, D>(D * i, D * j).copy_from(&block(pa, pb));
        }
    }
    out
}

/// Symmetric Gram matrix `K(points, points)` without jitter.
pub fn gram_matrix<P, const D: usize, F>(points: &[P], block: F) -> DMatrix<f64>
where
    F: Fn(&P, &P) -> SMatrix<f64, D, D>,
{
    let n = points.len();
    let mut out = DMatrix::zeros(D * n, D * n);
    for i in 0..n {
        for j in 0..=i {
            let b = block(&points[i], &points[j]);
            out.fixed_view_mut::<D, D>(D * i, D * j).copy_from(&b);
            if i != j {
                out.fixed_view_mut::<D, D>(D * j, D * i).copy_from(&b.transpose());
            }
        }
    }
    out
}

/// Assemble a block Gram matrix and add `jitter` to its diagonal.
///
/// Fails if the jittered matrix is not Cholesky-factorizable.
pub fn gram<P, const D: usize, F>(points: &[P], block: F, jitter: f64) -> Result<BlockGram>
where
    F: Fn(&P, &P) -> SMatrix<f64, D, D>,
{
    if points.is_empty() {
        return Err(Error::InvalidParam("gram needs at least one point".into()));
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidParam(format!("jitter must be nonnegative, got {jitter}")));
    }
    let mut matrix = gram_matrix(points, block);
    for i in 0..matrix.nrows() {
        matrix[(i, i)] += jitter;
    }
    if linalg::cholesky_lower(&matrix).is_none() {
        return Err(Error::NotPositiveDefinite(format!(
            "Gram matrix of {} points with jitter {jitter}",
            points.len()
        )));
    }
    Ok(BlockGram { matrix, layout: Layout::PointMajor { block: D }, jitter })
}

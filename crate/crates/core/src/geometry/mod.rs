//! Poincare ball model primitives.
//!
//! Points live in the open ball of radius `1/sqrt(c)` carrying the conformal
//! metric `(lambda_x)^2 I` with `lambda_x = 2 / (1 - c * ||x||^2)`. The
//! sectional curvature of the model is `-c`, and every operation converges to
//! its Euclidean counterpart as `c -> 0`.
//!
//! All ball-producing operations run [`clip_to_ball`] as their final step, so
//! any [`BallPoint`] obtained from this module satisfies
//! `||x|| <= 1/sqrt(c) - clip_eps`. Operations are pure functions of their
//! inputs and are safe to call concurrently.

pub mod grad;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default boundary margin used by [`clip_to_ball`].
pub const DEFAULT_CLIP_EPS: f64 = 1e-6;

/// Errors produced by geometry constructors and operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("curvature must be positive and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("clip epsilon {eps} must satisfy 0 < eps < 1/sqrt(c) = {radius}")]
    InvalidClipEps { eps: f64, radius: f64 },
    #[error("ball configs do not match: {0} vs {1}")]
    ConfigMismatch(BallConfig, BallConfig),
    #[error("expected vector of length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("input contains a non-finite component at index {0}")]
    NonFiniteInput(usize),
    #[error("point lies outside the ball: norm {norm} exceeds max {max}")]
    OutsideBall { norm: f64, max: f64 },
}

/// Ambient space description: dimension, curvature constant `c > 0` and the
/// boundary margin used when clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallConfig {
    dim: usize,
    curvature: f64,
    clip_eps: f64,
}

impl std::fmt::Display for BallConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BallConfig(dim={}, c={}, eps={})",
            self.dim, self.curvature, self.clip_eps
        )
    }
}

impl BallConfig {
    /// Build a config, validating `dim >= 1`, `c > 0` and
    /// `0 < clip_eps < 1/sqrt(c)`.
    pub fn new(dim: usize, curvature: f64, clip_eps: f64) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::InvalidDimension);
        }
        if !(curvature > 0.0) || !curvature.is_finite() {
            return Err(GeometryError::InvalidCurvature(curvature));
        }
        let radius = 1.0 / curvature.sqrt();
        if !(clip_eps > 0.0) || clip_eps >= radius {
            return Err(GeometryError::InvalidClipEps {
                eps: clip_eps,
                radius,
            });
        }
        Ok(Self {
            dim,
            curvature,
            clip_eps,
        })
    }

    /// Config with the standard boundary margin of `1e-6`.
    pub fn with_default_eps(dim: usize, curvature: f64) -> Result<Self, GeometryError> {
        Self::new(dim, curvature, DEFAULT_CLIP_EPS)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn clip_eps(&self) -> f64 {
        self.clip_eps
    }

    /// Ball radius `1/sqrt(c)`.
    pub fn radius(&self) -> f64 {
        1.0 / self.curvature.sqrt()
    }

    /// Largest Euclidean norm a clipped point may carry:
    /// `1/sqrt(c) - clip_eps`.
    pub fn max_norm(&self) -> f64 {
        self.radius() - self.clip_eps
    }

    /// Same curvature and margin in a different ambient dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self, GeometryError> {
        Self::new(dim, self.curvature, self.clip_eps)
    }
}

/// A vector certified to lie strictly inside the Poincare ball of its config.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Array1<f64>,
    config: BallConfig,
}

impl BallPoint {
    /// Certify coordinates that are already inside the ball. Fails if the
    /// norm exceeds `max_norm` or any component is non-finite.
    pub fn new(coords: Array1<f64>, config: BallConfig) -> Result<Self, GeometryError> {
        if coords.len() != config.dim {
            return Err(GeometryError::ShapeMismatch {
                expected: config.dim,
                got: coords.len(),
            });
        }
        check_finite(&coords.view())?;
        let norm = coords.dot(&coords).sqrt();
        if norm > config.max_norm() {
            return Err(GeometryError::OutsideBall {
                norm,
                max: config.max_norm(),
            });
        }
        Ok(Self { coords, config })
    }

    pub fn origin(config: BallConfig) -> Self {
        Self {
            coords: Array1::zeros(config.dim),
            config,
        }
    }

    pub fn coords(&self) -> &Array1<f64> {
        &self.coords
    }

    pub fn config(&self) -> BallConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn norm(&self) -> f64 {
        self.coords.dot(&self.coords).sqrt()
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&x| x == 0.0)
    }

    /// `-x`; the Mobius-additive inverse.
    pub fn negate(&self) -> Self {
        Self {
            coords: self.coords.mapv(|v| -v),
            config: self.config,
        }
    }
}

/// A tangent vector together with the ball point whose tangent space it
/// inhabits.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Array1<f64>,
    base: BallPoint,
}

impl TangentVector {
    pub fn new(coords: Array1<f64>, base: BallPoint) -> Result<Self, GeometryError> {
        if coords.len() != base.dim() {
            return Err(GeometryError::ShapeMismatch {
                expected: base.dim(),
                got: coords.len(),
            });
        }
        Ok(Self { coords, base })
    }

    pub fn zero(base: BallPoint) -> Self {
        Self {
            coords: Array1::zeros(base.dim()),
            base,
        }
    }

    pub fn coords(&self) -> &Array1<f64> {
        &self.coords
    }

    pub fn base(&self) -> &BallPoint {
        &self.base
    }

    pub fn norm(&self) -> f64 {
        self.coords.dot(&self.coords).sqrt()
    }
}

fn check_finite(v: &ArrayView1<f64>) -> Result<(), GeometryError> {
    for (i, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(GeometryError::NonFiniteInput(i));
        }
    }
    Ok(())
}

/// `atanh` with its argument clamped to `[0, 1 - 1e-15]` so rounding near the
/// boundary can never produce an infinity.
pub(crate) fn atanh_clamped(z: f64) -> f64 {
    z.clamp(0.0, 1.0 - 1e-15).atanh()
}

/// Curvature giving the d-dimensional ball a constant volume of pi:
/// `c = (Gamma(d/2 + 1) / pi^(d/2 - 1))^(-1/d)`, evaluated in log space so
/// large `d` cannot overflow.
pub fn default_curvature(dim: usize) -> Result<f64, GeometryError> {
    if dim == 0 {
        return Err(GeometryError::InvalidDimension);
    }
    let d = dim as f64;
    let ln = libm::lgamma(d / 2.0 + 1.0) - (d / 2.0 - 1.0) * std::f64::consts::PI.ln();
    Ok((-ln / d).exp())
}

/// Conformal factor `lambda_x = 2 / (1 - c * ||x||^2)`; always `>= 2` inside
/// the ball.
pub fn conformal_factor(x: &BallPoint) -> f64 {
    let c = x.config.curvature;
    2.0 / (1.0 - c * x.coords.dot(&x.coords))
}

pub(crate) fn mobius_add_raw(c: f64, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Array1<f64> {
    let xy = x.dot(y);
    let nx2 = x.dot(x);
    let ny2 = y.dot(y);
    let alpha = 1.0 + 2.0 * c * xy + c * ny2;
    let beta = 1.0 - c * nx2;
    let den = 1.0 + 2.0 * c * xy + c * c * nx2 * ny2;
    (x.to_owned() * alpha + y.to_owned() * beta) / den
}

/// Mobius addition
/// `x + y = ((1 + 2c<x,y> + c||y||^2) x + (1 - c||x||^2) y) / (1 + 2c<x,y> + c^2||x||^2||y||^2)`,
/// clipped back into the ball.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint, GeometryError> {
    if x.config != y.config {
        return Err(GeometryError::ConfigMismatch(x.config, y.config));
    }
    let raw = mobius_add_raw(x.config.curvature, &x.coords.view(), &y.coords.view());
    clip_to_ball(raw, x.config)
}

pub(crate) fn mobius_scalar_mul_raw(c: f64, r: f64, x: &ArrayView1<f64>) -> Array1<f64> {
    let nx = x.dot(x).sqrt();
    if nx == 0.0 || r == 0.0 {
        return Array1::zeros(x.len());
    }
    let sc = c.sqrt();
    let scale = (r * atanh_clamped(sc * nx)).tanh() / (sc * nx);
    x.to_owned() * scale
}

/// Mobius scalar multiplication
/// `r (*) x = (1/sqrt(c)) tanh(r atanh(sqrt(c)||x||)) x/||x||`, with
/// `r (*) 0 = 0`.
pub fn mobius_scalar_mul(r: f64, x: &BallPoint) -> BallPoint {
    let raw = mobius_scalar_mul_raw(x.config.curvature, r, &x.coords.view());
    clip_to_ball(raw, x.config).expect("scalar multiple of a ball point is finite")
}

/// Mobius matrix-vector product
/// `M (*) x = (1/sqrt(c)) tanh((||Mx||/||x||) atanh(sqrt(c)||x||)) Mx/||Mx||`.
///
/// Equals `exp_0(M log_0(x))`; `x = 0` or `Mx = 0` map to the origin of the
/// output space. The output lives in a ball of dimension `M.nrows()` with the
/// same curvature.
pub fn mobius_matvec(m: &Array2<f64>, x: &BallPoint) -> Result<BallPoint, GeometryError> {
    if m.ncols() != x.dim() {
        return Err(GeometryError::ShapeMismatch {
            expected: x.dim(),
            got: m.ncols(),
        });
    }
    let out_config = x.config.with_dim(m.nrows())?;
    let c = x.config.curvature;
    let nx = x.norm();
    if nx == 0.0 {
        return Ok(BallPoint::origin(out_config));
    }
    let mx = m.dot(&x.coords);
    let nmx = mx.dot(&mx).sqrt();
    if nmx == 0.0 {
        return Ok(BallPoint::origin(out_config));
    }
    let sc = c.sqrt();
    let scale = ((nmx / nx) * atanh_clamped(sc * nx)).tanh() / (sc * nmx);
    clip_to_ball(mx * scale, out_config)
}

/// Exponential map
/// `exp_w(v) = w (+) tanh(sqrt(c) lambda_w ||v|| / 2) v / (sqrt(c)||v||)`,
/// with `exp_w(0) = w`.
pub fn exp_map(v: &TangentVector) -> BallPoint {
    let w = &v.base;
    let c = w.config.curvature;
    let nv = v.norm();
    if nv == 0.0 {
        return w.clone();
    }
    let sc = c.sqrt();
    let lam = conformal_factor(w);
    let scale = (sc * lam * nv / 2.0).tanh() / (sc * nv);
    let step = &v.coords * scale;
    let raw = mobius_add_raw(c, &w.coords.view(), &step.view());
    clip_to_ball(raw, w.config).expect("exponential map of finite tangent is finite")
}

/// Logarithmic map, inverse of [`exp_map`]:
/// `log_w(y) = (2 / (sqrt(c) lambda_w)) atanh(sqrt(c)||m||) m/||m||` with
/// `m = (-w) (+) y`, and `log_w(w) = 0`.
pub fn log_map(w: &BallPoint, y: &BallPoint) -> TangentVector {
    assert_eq!(
        w.config, y.config,
        "log_map requires both points in the same ball"
    );
    let c = w.config.curvature;
    let m = mobius_add_raw(c, &w.negate().coords.view(), &y.coords.view());
    let nm = m.dot(&m).sqrt();
    if nm == 0.0 {
        return TangentVector::zero(w.clone());
    }
    let sc = c.sqrt();
    let lam = conformal_factor(w);
    let scale = (2.0 / (sc * lam)) * atanh_clamped(sc * nm) / nm;
    TangentVector {
        coords: m * scale,
        base: w.clone(),
    }
}

/// Hyperbolic distance
/// `d(x,y) = (1/sqrt(c)) acosh(1 + 2c||x-y||^2 / ((1 - c||x||^2)(1 - c||y||^2)))`.
///
/// Exactly symmetric in its arguments and zero iff `x == y`.
pub fn distance(x: &BallPoint, y: &BallPoint) -> f64 {
    assert_eq!(
        x.config, y.config,
        "distance requires both points in the same ball"
    );
    let c = x.config.curvature;
    let diff = &x.coords - &y.coords;
    let a = diff.dot(&diff);
    let bx = 1.0 - c * x.coords.dot(&x.coords);
    let by = 1.0 - c * y.coords.dot(&y.coords);
    let arg = (1.0 + 2.0 * c * a / (bx * by)).max(1.0);
    arg.acosh() / c.sqrt()
}

/// Project a raw vector into the ball: norms above `1/sqrt(c) - clip_eps`
/// are rescaled to exactly that threshold, preserving direction. Idempotent.
pub fn clip_to_ball(raw: Array1<f64>, config: BallConfig) -> Result<BallPoint, GeometryError> {
    if raw.len() != config.dim {
        return Err(GeometryError::ShapeMismatch {
            expected: config.dim,
            got: raw.len(),
        });
    }
    check_finite(&raw.view())?;
    let max = config.max_norm();
    let norm = raw.dot(&raw).sqrt();
    if norm <= max {
        return Ok(BallPoint {
            coords: raw,
            config,
        });
    }
    let mut out = raw * (max / norm);
    // The rescale can overshoot by an ulp; back off until the invariant holds
    // so a second clip is an exact no-op.
    loop {
        let n = out.dot(&out).sqrt();
        if n <= max {
            break;
        }
        out *= 1.0 - 4.0 * f64::EPSILON;
    }
    Ok(BallPoint {
        coords: out,
        config,
    })
}

/// Largest origin-distance a clipped point can reach before round-off folds
/// it onto the boundary: `16 ln(10) + ln(2/sqrt(c))`. Diagnostic bound used
/// by the self-test; monotonically decreasing in `c`.
pub fn max_safe_distance(config: &BallConfig) -> f64 {
    16.0 * std::f64::consts::LN_10 + (2.0 / config.curvature.sqrt()).ln()
}

/// Draw a point with uniform random direction and norm uniform in
/// `[0, frac * max_norm]`. Test and self-test helper.
pub fn sample_point<R: Rng + ?Sized>(config: BallConfig, frac: f64, rng: &mut R) -> BallPoint {
    let dir: Array1<f64> = (0..config.dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let dn = dir.dot(&dir).sqrt();
    if dn == 0.0 {
        return BallPoint::origin(config);
    }
    let target = rng.gen::<f64>() * frac * config.max_norm();
    clip_to_ball(dir * (target / dn), config).expect("sampled point is finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(dim: usize, c: f64) -> BallConfig {
        BallConfig::with_default_eps(dim, c).unwrap()
    }

    fn point(coords: Array1<f64>, c: f64) -> BallPoint {
        let config = cfg(coords.len(), c);
        BallPoint::new(coords, config).unwrap()
    }

    #[test]
    fn config_rejects_bad_values() {
        assert_eq!(
            BallConfig::new(0, 1.0, 1e-6),
            Err(GeometryError::InvalidDimension)
        );
        assert!(matches!(
            BallConfig::new(3, -1.0, 1e-6),
            Err(GeometryError::InvalidCurvature(_))
        ));
        // eps must stay below the ball radius
        assert!(matches!(
            BallConfig::new(3, 4.0, 0.6),
            Err(GeometryError::InvalidClipEps { .. })
        ));
    }

    #[test]
    fn ball_point_rejects_outside_and_non_finite() {
        let config = cfg(2, 1.0);
        assert!(matches!(
            BallPoint::new(array![2.0, 0.0], config),
            Err(GeometryError::OutsideBall { .. })
        ));
        assert_eq!(
            BallPoint::new(array![f64::NAN, 0.0], config),
            Err(GeometryError::NonFiniteInput(0))
        );
    }

    #[test]
    fn default_curvature_at_two_is_one() {
        // Gamma(2) = 1 and pi^0 = 1
        assert!((default_curvature(2).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(default_curvature(0), Err(GeometryError::InvalidDimension));
    }

    #[test]
    fn conformal_factor_at_origin_is_two() {
        let x = BallPoint::origin(cfg(3, 0.7));
        assert_eq!(conformal_factor(&x), 2.0);
    }

    #[test]
    fn conformal_factor_half_norm_squared() {
        // c = 1, ||x||^2 = 0.5 -> 2 / (1 - 0.5) = 4
        let x = point(array![0.5f64.sqrt(), 0.0], 1.0);
        assert!((conformal_factor(&x) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mobius_add_identity_and_inverse() {
        let x = point(array![0.3, -0.2, 0.1], 1.0);
        let zero = BallPoint::origin(x.config());
        let s = mobius_add(&x, &zero).unwrap();
        for i in 0..3 {
            assert!((s.coords()[i] - x.coords()[i]).abs() < 1e-9);
        }
        let inv = mobius_add(&x, &x.negate()).unwrap();
        assert!(inv.norm() < 1e-9);
    }

    #[test]
    fn mobius_add_rejects_config_mismatch() {
        let x = point(array![0.1, 0.2], 1.0);
        let y = point(array![0.1, 0.2], 0.5);
        assert!(matches!(
            mobius_add(&x, &y),
            Err(GeometryError::ConfigMismatch(..))
        ));
    }

    #[test]
    fn scalar_mul_one_and_zero() {
        let x = point(array![0.3, -0.4], 0.5);
        let same = mobius_scalar_mul(1.0, &x);
        for i in 0..2 {
            assert!((same.coords()[i] - x.coords()[i]).abs() < 1e-9);
        }
        assert!(mobius_scalar_mul(0.0, &x).is_origin());
        let origin = BallPoint::origin(x.config());
        assert!(mobius_scalar_mul(2.5, &origin).is_origin());
    }

    #[test]
    fn matvec_identity_and_zero() {
        let x = point(array![0.3, -0.1], 1.0);
        let id = Array2::eye(2);
        let same = mobius_matvec(&id, &x).unwrap();
        for i in 0..2 {
            assert!((same.coords()[i] - x.coords()[i]).abs() < 1e-9);
        }
        let zero = Array2::zeros((3, 2));
        let out = mobius_matvec(&zero, &x).unwrap();
        assert_eq!(out.dim(), 3);
        assert!(out.is_origin());
    }

    #[test]
    fn matvec_rejects_shape_mismatch() {
        let x = point(array![0.3, -0.1], 1.0);
        let m = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            mobius_matvec(&m, &x),
            Err(GeometryError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn exp_of_zero_tangent_is_base() {
        let w = point(array![0.2, 0.1], 1.0);
        let v = TangentVector::zero(w.clone());
        assert_eq!(exp_map(&v), w);
    }

    #[test]
    fn log_of_base_is_zero() {
        let w = point(array![0.2, 0.1], 1.0);
        let v = log_map(&w, &w);
        assert!(v.norm() < 1e-12);
    }

    #[test]
    fn distance_zero_iff_equal() {
        let x = point(array![0.2, -0.3], 0.5);
        assert_eq!(distance(&x, &x), 0.0);
        let y = point(array![0.21, -0.3], 0.5);
        assert!(distance(&x, &y) > 0.0);
    }

    #[test]
    fn clip_passes_interior_points_through() {
        let config = cfg(2, 1.0);
        let raw = array![0.25, 0.0]; // norm 0.5 / sqrt(c)
        let p = clip_to_ball(raw.clone(), config).unwrap();
        assert_eq!(p.coords(), &raw);
        assert!(clip_to_ball(Array1::zeros(2), config).unwrap().is_origin());
    }

    #[test]
    fn clip_rescales_to_threshold() {
        let config = cfg(2, 1.0);
        let p = clip_to_ball(array![2.0, 0.0], config).unwrap();
        assert!((p.norm() - (1.0 - 1e-6)).abs() < 1e-12);
        assert!(p.coords()[1] == 0.0); // direction preserved
    }

    #[test]
    fn clip_rejects_non_finite() {
        let config = cfg(2, 1.0);
        assert_eq!(
            clip_to_ball(array![1.0, f64::INFINITY], config),
            Err(GeometryError::NonFiniteInput(1))
        );
    }

    #[test]
    fn values_are_send_and_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<BallConfig>();
        assert_send_sync::<BallPoint>();
        assert_send_sync::<TangentVector>();
    }

    #[test]
    fn max_safe_distance_decreases_in_curvature() {
        let lo = max_safe_distance(&cfg(2, 0.1));
        let mid = max_safe_distance(&cfg(2, 0.5));
        let hi = max_safe_distance(&cfg(2, 1.0));
        assert!(lo > mid && mid > hi);
    }
}

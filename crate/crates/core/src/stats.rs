//! Hyperbolic means, variance estimation, wrapped-normal sampling and the
//! wrapped-vs-Riemannian density relation.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{
    self, conformal_factor, distance, exp_map, log_map, BallConfig, BallPoint, TangentVector,
};
use crate::seeding::rng_from_seed;

pub const DEFAULT_FRECHET_TOL: f64 = 1e-7;
pub const DEFAULT_FRECHET_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample set must contain at least one point")]
    EmptySampleSet,
    #[error("sample {index} does not share the set's ball config")]
    MixedConfigs { index: usize },
    #[error("variance must be finite and non-negative, got {0}")]
    InvalidVariance(f64),
    #[error("density is degenerate: variance is zero")]
    DegenerateDistribution,
}

/// Isotropic wrapped-normal parameters: a ball-point mean and a scalar
/// variance (covariance `sigma^2 I`). Zero variance is the point mass used
/// by tests.
#[derive(Debug, Clone, PartialEq)]
pub struct WrappedNormalParams {
    mean: BallPoint,
    variance: f64,
}

impl WrappedNormalParams {
    pub fn new(mean: BallPoint, variance: f64) -> Result<Self, StatsError> {
        if !variance.is_finite() || variance < 0.0 {
            return Err(StatsError::InvalidVariance(variance));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> &BallPoint {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// A non-empty list of ball points sharing one config.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<BallPoint>,
}

impl SampleSet {
    pub fn new(points: Vec<BallPoint>) -> Result<Self, StatsError> {
        let first = points.first().ok_or(StatsError::EmptySampleSet)?;
        let config = first.config();
        for (index, p) in points.iter().enumerate() {
            if p.config() != config {
                return Err(StatsError::MixedConfigs { index });
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[BallPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn config(&self) -> BallConfig {
        self.points[0].config()
    }
}

/// Result of the iterative statistical mean.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetMean {
    pub mean: BallPoint,
    pub iterations: usize,
    pub converged: bool,
}

/// Geometric mean (Einstein midpoint): with Lorentz factors
/// `gamma_i = 1/sqrt(1 - c||x_i||^2)`,
///
/// `mean = (1/2) (*) [ sum 2 gamma_i^2 x_i / sum (2 gamma_i^2 - 1) ]`.
///
/// For two points the result is equidistant from both.
pub fn gyrocentroid(s: &SampleSet) -> BallPoint {
    let config = s.config();
    let c = config.curvature();
    let mut num = Array1::<f64>::zeros(config.dim());
    let mut den = 0.0;
    for p in s.points() {
        let gamma2 = 1.0 / (1.0 - c * p.coords().dot(p.coords()));
        num = num + p.coords() * (2.0 * gamma2);
        den += 2.0 * gamma2 - 1.0;
    }
    let weighted = num / den;
    let raw = geometry::mobius_scalar_mul_raw(c, 0.5, &weighted.view());
    geometry::clip_to_ball(raw, config).expect("gyrocentroid of ball points is finite")
}

/// Statistical mean (conformal barycenter): minimizes the sum of squared
/// hyperbolic distances. Initialized at the gyrocentroid and iterated via
///
/// `mu <- exp_mu( mean_i log_mu(x_i) )`
///
/// until successive iterates are closer than `tol` or `max_iter` is reached;
/// non-convergence is reported through the flag, never as an error.
pub fn frechet_mean(s: &SampleSet, tol: f64, max_iter: usize) -> FrechetMean {
    assert!(tol > 0.0, "frechet_mean requires tol > 0");
    assert!(max_iter >= 1, "frechet_mean requires max_iter >= 1");
    let n = s.len() as f64;
    let mut mu = gyrocentroid(s);
    for it in 1..=max_iter {
        let mut t = Array1::<f64>::zeros(mu.dim());
        for p in s.points() {
            t += log_map(&mu, p).coords();
        }
        t /= n;
        let next = exp_map(&TangentVector::new(t, mu.clone()).expect("shape fixed"));
        let moved = distance(&mu, &next);
        mu = next;
        if moved < tol {
            return FrechetMean {
                mean: mu,
                iterations: it,
                converged: true,
            };
        }
    }
    FrechetMean {
        mean: mu,
        iterations: max_iter,
        converged: false,
    }
}

/// Convenience wrapper with the crate's default tolerance and iteration cap.
pub fn frechet_mean_default(s: &SampleSet) -> FrechetMean {
    frechet_mean(s, DEFAULT_FRECHET_TOL, DEFAULT_FRECHET_MAX_ITER)
}

/// Seam for the statistical mean: alternative solvers can drop in behind the
/// same contract.
pub trait MeanSolver {
    fn solve(&self, s: &SampleSet) -> FrechetMean;
}

/// The exp/log fixed-point iteration as a [`MeanSolver`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterativeMeanSolver {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IterativeMeanSolver {
    fn default() -> Self {
        Self {
            tol: DEFAULT_FRECHET_TOL,
            max_iter: DEFAULT_FRECHET_MAX_ITER,
        }
    }
}

impl MeanSolver for IterativeMeanSolver {
    fn solve(&self, s: &SampleSet) -> FrechetMean {
        frechet_mean(s, self.tol, self.max_iter)
    }
}

/// `sigma^2 = (1/n) sum_k d(mean, x_k)^2`.
///
/// The squared distances are accumulated in sorted order so the estimate is
/// bit-identical under any permutation of the samples.
pub fn estimate_variance(s: &SampleSet, mean: &BallPoint) -> f64 {
    assert_eq!(
        mean.config(),
        s.config(),
        "estimate_variance requires the mean in the sample ball"
    );
    let mut sq: Vec<f64> = s
        .points()
        .iter()
        .map(|p| {
            let d = distance(mean, p);
            d * d
        })
        .collect();
    sq.sort_by(f64::total_cmp);
    sq.iter().sum::<f64>() / s.len() as f64
}

/// Draw `n` wrapped-normal samples: `v ~ N(0, sigma^2 I)` in the tangent
/// space, then `x = exp_mu(v / lambda_mu)`. Deterministic for a given seed
/// (ChaCha8 keyed on the seed).
pub fn sample_wrapped_normal(params: &WrappedNormalParams, n: usize, seed: u64) -> SampleSet {
    assert!(n >= 1, "sample_wrapped_normal requires n >= 1");
    let mu = params.mean();
    let dim = mu.dim();
    let sigma = params.variance().sqrt();
    let lam = conformal_factor(mu);
    let mut rng = rng_from_seed(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        if sigma == 0.0 {
            points.push(mu.clone());
            continue;
        }
        let v: Array1<f64> = (0..dim)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let t = TangentVector::new(v / lam, mu.clone()).expect("shape fixed");
        points.push(exp_map(&t));
    }
    SampleSet { points }
}

fn ln_sinh(t: f64) -> f64 {
    if t > 1.0 {
        // sinh(t) = e^t (1 - e^{-2t}) / 2, stable for large t.
        t + (1.0 - (-2.0 * t).exp()).ln() - std::f64::consts::LN_2
    } else {
        t.sinh().ln()
    }
}

/// `(d - 1) * ln( sqrt(c) d_p / sinh(sqrt(c) d_p) )`, the log of
/// [`density_ratio_term`]; zero at `dist = 0` and for `d = 1`.
pub fn ln_density_ratio(dist: f64, c: f64, d: usize) -> f64 {
    assert!(dist >= 0.0 && c > 0.0 && d >= 1);
    if dist == 0.0 || d == 1 {
        return 0.0;
    }
    let t = c.sqrt() * dist;
    (d as f64 - 1.0) * (t.ln() - ln_sinh(t))
}

/// Multiplicative term converting the Riemannian-normal density into the
/// wrapped-normal density: `( sqrt(c) d_p / sinh(sqrt(c) d_p) )^(d-1)`.
///
/// Equals 1 at zero distance (and for `d = 1`) and decreases strictly with
/// distance, staying in `(0, 1]`.
pub fn density_ratio_term(dist: f64, c: f64, d: usize) -> f64 {
    ln_density_ratio(dist, c, d).exp()
}

/// Unnormalized log-density of the maximum-entropy (Riemannian) normal:
/// `-||lambda_mu log_mu(x)||^2 / (2 sigma^2)`. The normalization constant is
/// intractable and deliberately omitted.
pub fn riemannian_normal_logdensity_unnorm(
    x: &BallPoint,
    params: &WrappedNormalParams,
) -> Result<f64, StatsError> {
    if params.variance() == 0.0 {
        return Err(StatsError::DegenerateDistribution);
    }
    let mu = params.mean();
    assert_eq!(
        x.config(),
        mu.config(),
        "logdensity requires the point in the mean's ball"
    );
    let lam = conformal_factor(mu);
    let z = log_map(mu, x).coords() * lam;
    Ok(-z.dot(&z) / (2.0 * params.variance()))
}

/// Unnormalized wrapped-normal log-density: the Riemannian log-density plus
/// the log ratio term. Never exceeds the Riemannian value, with equality at
/// `x = mu` and when `d = 1`.
pub fn wrapped_normal_logdensity_unnorm(
    x: &BallPoint,
    params: &WrappedNormalParams,
) -> Result<f64, StatsError> {
    let base = riemannian_normal_logdensity_unnorm(x, params)?;
    let mu = params.mean();
    let d = distance(mu, x);
    Ok(base + ln_density_ratio(d, x.config().curvature(), x.dim()))
}

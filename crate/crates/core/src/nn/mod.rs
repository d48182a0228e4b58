//! Hyperbolic network building blocks: the tangent-to-ball mapping layer,
//! the hyperbolic fully-connected layer, the hyperbolic contrastive loss and
//! the two optimizer steps (Riemannian SGD for ball-valued parameters,
//! momentum SGD for Euclidean ones).

pub mod grad;

use ndarray::{Array1, Array2, ArrayView, ArrayViewMut, Dimension, Zip};
use thiserror::Error;

use crate::geometry::{
    self, distance, exp_map, BallConfig, BallPoint, GeometryError, TangentVector,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("expected input of length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("queries and positives must have equal, non-zero length")]
    BadBatchShape,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("non-finite loss encountered while perturbing parameter {index}")]
    NonFiniteLoss { index: usize },
}

/// Tangent-to-ball mapping layer: treats Euclidean features as tangent
/// vectors at a trainable base point `w` and maps them in through `exp_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingLayerParams {
    pub base_point: BallPoint,
}

impl MappingLayerParams {
    pub fn at_origin(config: BallConfig) -> Self {
        Self {
            base_point: BallPoint::origin(config),
        }
    }

    pub fn config(&self) -> BallConfig {
        self.base_point.config()
    }
}

/// `TP(x) = exp_w(x)`; the output always satisfies the ball invariant.
pub fn tp_forward(x: &Array1<f64>, p: &MappingLayerParams) -> Result<BallPoint, NnError> {
    if x.len() != p.base_point.dim() {
        return Err(NnError::ShapeMismatch {
            expected: p.base_point.dim(),
            got: x.len(),
        });
    }
    let t = TangentVector::new(x.clone(), p.base_point.clone())?;
    Ok(exp_map(&t))
}

/// Hyperbolic fully-connected layer: Euclidean weight matrix, ball-valued
/// bias.
#[derive(Debug, Clone, PartialEq)]
pub struct HypFCParams {
    pub weight: Array2<f64>,
    pub bias: BallPoint,
}

impl HypFCParams {
    pub fn new(weight: Array2<f64>, bias: BallPoint) -> Result<Self, NnError> {
        if weight.nrows() != bias.dim() {
            return Err(NnError::ShapeMismatch {
                expected: weight.nrows(),
                got: bias.dim(),
            });
        }
        Ok(Self { weight, bias })
    }
}

/// `HypFC(x) = (W (*) x) (+) b`.
pub fn hypfc_forward(x: &BallPoint, p: &HypFCParams) -> Result<BallPoint, NnError> {
    let h = geometry::mobius_matvec(&p.weight, x)?;
    Ok(geometry::mobius_add(&h, &p.bias)?)
}

/// One contrastive batch: aligned query/positive pairs plus a per-query list
/// of negatives (in the protocol, other samples of the same coarse class).
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub queries: Vec<BallPoint>,
    pub positives: Vec<BallPoint>,
    pub negatives: Vec<Vec<BallPoint>>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(
        queries: Vec<BallPoint>,
        positives: Vec<BallPoint>,
        negatives: Vec<Vec<BallPoint>>,
        temperature: f64,
    ) -> Result<Self, NnError> {
        if queries.is_empty()
            || queries.len() != positives.len()
            || negatives.len() != queries.len()
        {
            return Err(NnError::BadBatchShape);
        }
        if !(temperature > 0.0) {
            return Err(NnError::BadTemperature(temperature));
        }
        Ok(Self {
            queries,
            positives,
            negatives,
            temperature,
        })
    }
}

fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Hyperbolic contrastive loss: the InfoNCE form with every inner product
/// replaced by the negative hyperbolic distance,
///
/// `L = -sum_n log( exp(-d(q_n,k_n+)/tau) / (exp(-d(q_n,k_n+)/tau) + sum_m exp(-d(q_n,k_m-)/tau)) )`.
///
/// Computed with log-sum-exp stabilization; non-negative, and a query with no
/// negatives contributes exactly zero.
pub fn hyp_contrastive_loss(batch: &ContrastiveBatch) -> f64 {
    let tau = batch.temperature;
    let mut loss = 0.0;
    for (n, q) in batch.queries.iter().enumerate() {
        let d_pos = distance(q, &batch.positives[n]);
        let mut terms = Vec::with_capacity(1 + batch.negatives[n].len());
        terms.push(-d_pos / tau);
        for k in &batch.negatives[n] {
            terms.push(-distance(q, k) / tau);
        }
        loss += d_pos / tau + logsumexp(&terms);
    }
    loss
}

/// Riemannian SGD step on a ball-valued parameter:
/// `x <- x - lr * ((1 - c||x||^2)^2 / 4) * grad`, clipped back into the ball.
pub fn riemannian_sgd_step(param: &BallPoint, grad: &Array1<f64>, lr: f64) -> BallPoint {
    assert_eq!(param.dim(), grad.len(), "gradient shape mismatch");
    let c = param.config().curvature();
    let ns = param.coords().dot(param.coords());
    let factor = (1.0 - c * ns).powi(2) / 4.0;
    let raw = param.coords() - &(grad * (lr * factor));
    geometry::clip_to_ball(raw, param.config()).expect("sgd step on finite inputs is finite")
}

/// Classical momentum SGD with decoupled-into-gradient weight decay:
/// `v <- momentum * v + (g + wd * p)`, `p <- p - lr * v`.
///
/// Operates on views so callers can restrict the update to a slice of a
/// parameter matrix (the freezing mechanism in `c2f`).
pub fn euclidean_sgd_step<D: Dimension>(
    mut param: ArrayViewMut<f64, D>,
    grad: ArrayView<f64, D>,
    mut velocity: ArrayViewMut<f64, D>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    Zip::from(&mut param)
        .and(&grad)
        .and(&mut velocity)
        .for_each(|p, &g, v| {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        });
}

/// Default momentum and weight decay used by the protocol trainers.
pub const SGD_MOMENTUM: f64 = 0.9;
pub const SGD_WEIGHT_DECAY: f64 = 5e-4;

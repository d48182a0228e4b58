//! Coarse-to-fine few-shot class-incremental learning: the hyperbolic
//! classifier with normalize-and-freeze discipline, its losses and
//! gradients, the session trainers and the run metrics.

pub mod metrics;
pub mod protocol;

pub use metrics::{
    average_accuracy, forgetting_rates, per_session_rates, ForgettingRates, RunHistory,
    SessionReport,
};
pub use protocol::{
    evaluate_session, train_base_session, train_incremental_session, BaseHyper, BaseSessionOutcome,
    EncoderPipeline, EvalItem, IncrementalHyper, ParamGradients,
};

use ndarray::{s, Array1, Array2, ArrayViewMut2};
use thiserror::Error;

use crate::geometry::{self, BallConfig, BallPoint, GeometryError};
use crate::nn::NnError;
use crate::stats::StatsError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("classifier weight must have {expected} rows to match the feature ball, got {got}")]
    WeightShape { expected: usize, got: usize },
    #[error("softmax temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("frozen_upto {frozen} exceeds the column count {columns}")]
    FrozenBounds { frozen: usize, columns: usize },
    #[error("cannot normalize: weight column {class} is zero")]
    ZeroColumn { class: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("base session requires at least two distinct coarse classes")]
    InsufficientClasses,
    #[error("support set must hold way * shot = {expected} items, got {got}")]
    SupportSizeMismatch { expected: usize, got: usize },
    #[error("forgetting rate undefined: zero accuracy denominator at session {session}")]
    UndefinedRate { session: usize },
    #[error("forgetting rates require at least two sessions")]
    HistoryTooShort,
    #[error("run history is inconsistent: {0}")]
    BadHistory(String),
}

/// Hyperbolic classifier: a `D x C` Euclidean weight matrix whose columns are
/// per-class weights, a freeze boundary, and the softmax temperature.
///
/// Columns with index below `frozen_upto` can never be written again: the
/// only mutation path for weights, [`ClassifierState::update_active_columns`],
/// exposes just the unfrozen slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    weight: Array2<f64>,
    frozen_upto: usize,
    softmax_temp: f64,
    config: BallConfig,
}

/// Default softmax temperature for class probabilities.
pub const DEFAULT_SOFTMAX_TEMP: f64 = 0.5;

impl ClassifierState {
    pub fn new(
        weight: Array2<f64>,
        frozen_upto: usize,
        softmax_temp: f64,
        config: BallConfig,
    ) -> Result<Self, ProtocolError> {
        if weight.nrows() != config.dim() {
            return Err(ProtocolError::WeightShape {
                expected: config.dim(),
                got: weight.nrows(),
            });
        }
        if !(softmax_temp > 0.0) {
            return Err(ProtocolError::BadTemperature(softmax_temp));
        }
        if frozen_upto > weight.ncols() {
            return Err(ProtocolError::FrozenBounds {
                frozen: frozen_upto,
                columns: weight.ncols(),
            });
        }
        Ok(Self {
            weight,
            frozen_upto,
            softmax_temp,
            config,
        })
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn n_classes(&self) -> usize {
        self.weight.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn frozen_upto(&self) -> usize {
        self.frozen_upto
    }

    pub fn softmax_temp(&self) -> f64 {
        self.softmax_temp
    }

    pub fn config(&self) -> BallConfig {
        self.config
    }

    /// Append new (trainable) class columns on the right.
    pub fn append_columns(&mut self, columns: &Array2<f64>) -> Result<(), ProtocolError> {
        if columns.nrows() != self.feature_dim() {
            return Err(ProtocolError::WeightShape {
                expected: self.feature_dim(),
                got: columns.nrows(),
            });
        }
        let mut next = Array2::zeros((self.feature_dim(), self.n_classes() + columns.ncols()));
        next.slice_mut(s![.., ..self.n_classes()])
            .assign(&self.weight);
        next.slice_mut(s![.., self.n_classes()..]).assign(columns);
        self.weight = next;
        Ok(())
    }

    /// Advance the freeze boundary; freezing never retreats.
    pub fn freeze_through(&mut self, upto: usize) -> Result<(), ProtocolError> {
        if upto > self.n_classes() {
            return Err(ProtocolError::FrozenBounds {
                frozen: upto,
                columns: self.n_classes(),
            });
        }
        self.frozen_upto = self.frozen_upto.max(upto);
        Ok(())
    }

    /// Run a mutation against the unfrozen column slice. Frozen columns are
    /// unreachable from the closure, so any update sequence leaves them
    /// bit-identical.
    pub fn update_active_columns(&mut self, f: impl FnOnce(ArrayViewMut2<f64>)) {
        let frozen = self.frozen_upto;
        f(self.weight.slice_mut(s![.., frozen..]));
    }
}

/// Feature normalization: scale coordinates by the reciprocal hyperbolic
/// distance to the origin, then clip. The origin (where the quotient is
/// undefined) maps to itself.
pub fn normalize_feature(f: &BallPoint) -> BallPoint {
    if f.is_origin() {
        return f.clone();
    }
    let origin = BallPoint::origin(f.config());
    let d = geometry::distance(&origin, f);
    geometry::clip_to_ball(f.coords() / d, f.config())
        .expect("normalized feature of a finite point is finite")
}

/// Columns of `W` normalized to unit Euclidean length and transposed,
/// producing the `C x D` matrix applied to features. Errors if any column is
/// zero.
fn normalized_weight_t(cls: &ClassifierState) -> Result<Array2<f64>, ProtocolError> {
    let d = cls.feature_dim();
    let c = cls.n_classes();
    let mut out = Array2::zeros((c, d));
    for i in 0..c {
        let col = cls.weight.column(i);
        let norm = col.dot(&col).sqrt();
        if norm == 0.0 {
            return Err(ProtocolError::ZeroColumn { class: i });
        }
        for j in 0..d {
            out[[i, j]] = col[j] / norm;
        }
    }
    Ok(out)
}

/// Class logits: the coordinate vector of `W^T (*) f`, optionally with the
/// weight columns and the feature normalized first. With normalization,
/// rescaling any column leaves the logits unchanged.
pub fn compute_logits(
    feat: &BallPoint,
    cls: &ClassifierState,
    normalized: bool,
) -> Result<Array1<f64>, ProtocolError> {
    if feat.config() != cls.config {
        return Err(ProtocolError::Geometry(GeometryError::ConfigMismatch(
            feat.config(),
            cls.config,
        )));
    }
    let out = if normalized {
        let wt = normalized_weight_t(cls)?;
        let f = normalize_feature(feat);
        geometry::mobius_matvec(&wt, &f)?
    } else {
        geometry::mobius_matvec(&cls.weight.t().to_owned(), feat)?
    };
    Ok(out.coords().clone())
}

fn softmax(t: &Array1<f64>) -> Array1<f64> {
    let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = t.mapv(|v| (v - m).exp());
    let z = e.sum();
    e / z
}

/// Class probabilities: softmax of normalized logits over the temperature.
pub fn predict_proba(
    feat: &BallPoint,
    cls: &ClassifierState,
) -> Result<Array1<f64>, ProtocolError> {
    let o = compute_logits(feat, cls, true)?;
    Ok(softmax(&(o / cls.softmax_temp)))
}

/// Mean negative log-probability of the true labels under [`predict_proba`],
/// evaluated in log space so confident mistakes stay finite.
pub fn ce_loss(batch: &[(BallPoint, usize)], cls: &ClassifierState) -> Result<f64, ProtocolError> {
    assert!(!batch.is_empty(), "ce_loss requires a non-empty batch");
    let mut total = 0.0;
    for (feat, label) in batch {
        if *label >= cls.n_classes() {
            return Err(ProtocolError::LabelOutOfRange {
                label: *label,
                classes: cls.n_classes(),
            });
        }
        let t = compute_logits(feat, cls, true)? / cls.softmax_temp;
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + t.mapv(|v| (v - m).exp()).sum().ln();
        total += lse - t[*label];
    }
    Ok(total / batch.len() as f64)
}

/// Gradients of [`ce_loss`] with respect to the weight matrix and each
/// feature point.
#[derive(Debug, Clone)]
pub struct CeGrads {
    /// `D x C`, aligned with the classifier weight.
    pub weight: Array2<f64>,
    /// Per-sample gradient in ambient feature coordinates; zeroed (and
    /// flagged) for samples whose normalized feature was clamped.
    pub features: Vec<Array1<f64>>,
    /// True when any normalized feature hit the clip boundary, in which case
    /// its gradient was zeroed by the clamp convention.
    pub boundary_clamped: bool,
}

/// Loss and exact gradients of the cross-entropy over normalized hyperbolic
/// logits, chained through the Mobius matrix product, the column
/// normalization and the feature normalization.
pub fn ce_loss_grad(
    feats: &[BallPoint],
    labels: &[usize],
    cls: &ClassifierState,
) -> Result<(f64, CeGrads), ProtocolError> {
    assert_eq!(feats.len(), labels.len(), "feature/label length mismatch");
    assert!(!feats.is_empty(), "ce_loss_grad requires a non-empty batch");
    let n = feats.len() as f64;
    let d = cls.feature_dim();
    let c = cls.n_classes();
    let lambda = cls.softmax_temp;
    let wt = normalized_weight_t(cls)?;

    let mut loss = 0.0;
    let mut grad_wt = Array2::<f64>::zeros((c, d));
    let mut grad_feats = Vec::with_capacity(feats.len());
    let mut clamped = false;

    for (feat, &label) in feats.iter().zip(labels) {
        if label >= c {
            return Err(ProtocolError::LabelOutOfRange { label, classes: c });
        }
        let fnorm = normalize_feature(feat);
        let o = geometry::mobius_matvec(&wt, &fnorm)?.coords().clone();
        let t = &o / lambda;
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = t.mapv(|v| (v - m).exp());
        let z = e.sum();
        loss += (m + z.ln()) - t[label];

        let mut dl_do = e / z;
        dl_do[label] -= 1.0;
        dl_do /= lambda * n;

        let (g_wt, g_fnorm) = geometry::grad::mobius_matvec_vjp(&wt, &fnorm, &dl_do);
        grad_wt += &g_wt;

        // Chain back through f -> f / d(0, f). If the scaled feature was
        // clamped by the clip, the clamp convention zeroes the gradient.
        let was_clamped = {
            let u = feat.coords().dot(feat.coords()).sqrt();
            if u == 0.0 {
                false
            } else {
                let origin = BallPoint::origin(feat.config());
                let dist0 = geometry::distance(&origin, feat);
                u / dist0 > feat.config().max_norm()
            }
        };
        if was_clamped {
            clamped = true;
            grad_feats.push(Array1::zeros(d));
        } else if feat.is_origin() {
            grad_feats.push(Array1::zeros(d));
        } else {
            let origin = BallPoint::origin(feat.config());
            let dist0 = geometry::distance(&origin, feat);
            let norm = feat.coords().dot(feat.coords()).sqrt();
            let lam_f = geometry::conformal_factor(feat);
            let g_dot_f = g_fnorm.dot(feat.coords());
            let gf =
                &g_fnorm / dist0 - &(feat.coords() * (g_dot_f * lam_f / (dist0 * dist0 * norm)));
            grad_feats.push(gf);
        }
    }
    loss /= n;
    debug_assert!(loss.is_finite());

    // Through the column normalization: for column w with unit vector u,
    // grad_w = (g - (g.u) u) / ||w||.
    let mut grad_w = Array2::<f64>::zeros((d, c));
    for i in 0..c {
        let col = cls.weight.column(i);
        let norm = col.dot(&col).sqrt();
        let u: Array1<f64> = col.to_owned() / norm;
        let g: Array1<f64> = grad_wt.row(i).to_owned();
        let proj = g.dot(&u);
        let gw = (g - &u * proj) / norm;
        grad_w.column_mut(i).assign(&gw);
    }

    Ok((
        loss,
        CeGrads {
            weight: grad_w,
            features: grad_feats,
            boundary_clamped: clamped,
        },
    ))
}

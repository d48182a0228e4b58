//! Session trainers and the evaluator.
//!
//! The base session jointly trains a linear encoder, the tangent-to-ball
//! mapping layer and the coarse classifier columns with the combined
//! hyperbolic-contrastive + cross-entropy objective; the feature path is
//! then frozen. Incremental sessions append one weight column per new fine
//! class (initialized at the class prototype), optionally augment the few
//! support features with wrapped-normal draws, and fit only the new columns
//! with cross-entropy.

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ce_loss_grad, compute_logits, ClassifierState, ProtocolError};
use crate::data::SessionSpec;
use crate::geometry::BallPoint;
use crate::nn::grad::{contrastive_loss_grad, tp_vjp};
use crate::nn::{
    euclidean_sgd_step, riemannian_sgd_step, ContrastiveBatch, MappingLayerParams, SGD_MOMENTUM,
    SGD_WEIGHT_DECAY,
};
use crate::seeding::{derive_seed, rng_from_seed};
use crate::stats::{
    estimate_variance, frechet_mean_default, sample_wrapped_normal, SampleSet, WrappedNormalParams,
};

/// Frozen feature path: a linear encoder followed by the mapping layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPipeline {
    pub encoder: Array2<f64>,
    pub mapping: MappingLayerParams,
}

impl EncoderPipeline {
    pub fn forward(&self, raw: &Array1<f64>) -> Result<BallPoint, ProtocolError> {
        let z = self.encoder.dot(raw);
        Ok(crate::nn::tp_forward(&z, &self.mapping)?)
    }
}

/// Gradients for the base-session parameter set, shape-congruent with
/// (encoder matrix, mapping base point, classifier weight).
#[derive(Debug, Clone)]
pub struct ParamGradients {
    pub encoder: Array2<f64>,
    pub mapping_base: Array1<f64>,
    pub classifier: Array2<f64>,
    /// Set when a ball-valued quantity sat on the clip boundary and its
    /// gradient was zeroed by the clamp convention.
    pub boundary_clamped: bool,
}

/// Combined base-session objective on one batch of two-view samples:
/// contrastive loss (normalized by batch size) over same-coarse-class
/// query/key structure, plus coarse cross-entropy on the query stream.
/// Returns the loss and exact gradients for every trainable parameter.
pub fn base_loss_grad(
    encoder: &Array2<f64>,
    mapping: &MappingLayerParams,
    cls: &ClassifierState,
    views1: &[Array1<f64>],
    views2: &[Array1<f64>],
    labels: &[usize],
    tau: f64,
) -> Result<(f64, ParamGradients), ProtocolError> {
    let b = views1.len();
    assert!(b > 0 && views2.len() == b && labels.len() == b);
    let d = encoder.nrows();
    let input_dim = encoder.ncols();

    let z1: Vec<Array1<f64>> = views1.iter().map(|v| encoder.dot(v)).collect();
    let z2: Vec<Array1<f64>> = views2.iter().map(|v| encoder.dot(v)).collect();
    let f1: Vec<BallPoint> = z1
        .iter()
        .map(|z| crate::nn::tp_forward(z, mapping))
        .collect::<Result<_, _>>()?;
    let f2: Vec<BallPoint> = z2
        .iter()
        .map(|z| crate::nn::tp_forward(z, mapping))
        .collect::<Result<_, _>>()?;

    // negatives: key-stream features of other samples sharing the query's
    // coarse class
    let mut neg_index: Vec<Vec<usize>> = Vec::with_capacity(b);
    let mut negatives: Vec<Vec<BallPoint>> = Vec::with_capacity(b);
    for i in 0..b {
        let idx: Vec<usize> = (0..b)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        negatives.push(idx.iter().map(|&j| f2[j].clone()).collect());
        neg_index.push(idx);
    }

    let batch = ContrastiveBatch::new(f1.clone(), f2, negatives, tau)?;
    let (loss_con, grads_con) = contrastive_loss_grad(&batch);
    let (loss_ce, grads_ce) = ce_loss_grad(&f1, labels, cls)?;
    let inv_b = 1.0 / b as f64;
    let loss = loss_con * inv_b + loss_ce;

    // feature cotangents for both streams
    let df1: Vec<Array1<f64>> = grads_con
        .queries
        .iter()
        .zip(&grads_ce.features)
        .map(|(gq, gce)| gq * inv_b + gce)
        .collect();
    let mut df2: Vec<Array1<f64>> = grads_con.positives.iter().map(|gp| gp * inv_b).collect();
    for i in 0..b {
        for (m, &j) in neg_index[i].iter().enumerate() {
            df2[j] = &df2[j] + &(&grads_con.negatives[i][m] * inv_b);
        }
    }

    let mut grad_enc = Array2::<f64>::zeros((d, input_dim));
    let mut grad_base = Array1::<f64>::zeros(d);
    for i in 0..b {
        for (z, view, df) in [(&z1[i], &views1[i], &df1[i]), (&z2[i], &views2[i], &df2[i])] {
            let (gz, gw) = tp_vjp(z, mapping, df);
            for r in 0..d {
                let gr = gz[r];
                if gr != 0.0 {
                    for col in 0..input_dim {
                        grad_enc[[r, col]] += gr * view[col];
                    }
                }
            }
            grad_base += &gw;
        }
    }

    // clamp convention: clipped ball parameters receive a zero gradient
    let base_clamped = mapping.base_point.norm() >= mapping.config().max_norm() - 1e-12;
    if base_clamped {
        grad_base.fill(0.0);
    }

    Ok((
        loss,
        ParamGradients {
            encoder: grad_enc,
            mapping_base: grad_base,
            classifier: grads_ce.weight,
            boundary_clamped: base_clamped || grads_ce.boundary_clamped,
        },
    ))
}

/// Base-session hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Contrastive temperature tau.
    pub tau: f64,
    /// Softmax temperature lambda for the coarse cross-entropy head.
    pub softmax_temp: f64,
    /// Standard deviation of the Gaussian view perturbation that builds the
    /// query/key streams.
    pub view_noise: f64,
    pub seed: u64,
}

/// One labeled item of the evaluation pool.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub feature: BallPoint,
    pub coarse_label: usize,
    /// Classifier column of this sample's fine class, if that class has been
    /// learned by the session being evaluated.
    pub fine_column: Option<usize>,
}

/// Trained base-session state.
#[derive(Debug, Clone)]
pub struct BaseSessionOutcome {
    pub pipeline: EncoderPipeline,
    pub classifier: ClassifierState,
    pub report: super::SessionReport,
    pub epoch_losses: Vec<f64>,
}

fn argmax_in(logits: &Array1<f64>, range: std::ops::Range<usize>) -> usize {
    let mut best = range.start;
    let mut best_v = f64::NEG_INFINITY;
    for i in range {
        if logits[i] > best_v {
            best_v = logits[i];
            best = i;
        }
    }
    best
}

/// Coarse / fine / total accuracies of the current classifier over the
/// evaluation pool.
///
/// Coarse accuracy takes the argmax over the coarse columns only; fine
/// accuracy over the learned fine columns, restricted to samples of learned
/// fine classes; total accuracy over every learned column, where a sample's
/// target is its fine column when learned and its coarse column otherwise.
pub fn evaluate_session(
    items: &[EvalItem],
    cls: &ClassifierState,
    session: usize,
    n_coarse: usize,
) -> Result<super::SessionReport, ProtocolError> {
    let c = cls.n_classes();
    let mut coarse_hits = 0usize;
    let mut total_hits = 0usize;
    let mut fine_hits = 0usize;
    let mut fine_count = 0usize;
    for item in items {
        let logits = compute_logits(&item.feature, cls, true)?;
        if argmax_in(&logits, 0..n_coarse) == item.coarse_label {
            coarse_hits += 1;
        }
        let target = item.fine_column.unwrap_or(item.coarse_label);
        if argmax_in(&logits, 0..c) == target {
            total_hits += 1;
        }
        if let Some(col) = item.fine_column {
            fine_count += 1;
            if argmax_in(&logits, n_coarse..c) == col {
                fine_hits += 1;
            }
        }
    }
    let n = items.len().max(1) as f64;
    let acc_coarse = coarse_hits as f64 / n;
    if session == 0 {
        return Ok(super::SessionReport::base(acc_coarse));
    }
    let acc_fine = if fine_count > 0 {
        fine_hits as f64 / fine_count as f64
    } else {
        0.0
    };
    super::SessionReport::incremental(session, acc_coarse, acc_fine, total_hits as f64 / n)
}

fn gaussian_like<R: Rng>(rng: &mut R, x: &Array1<f64>, sigma: f64) -> Array1<f64> {
    x.mapv(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Train the coarse base session. Returns the trained pipeline, a classifier
/// with its coarse columns frozen, and the session-0 report over `eval_raw`.
pub fn train_base_session(
    train: &[(Array1<f64>, usize)],
    eval_raw: &[(Array1<f64>, usize)],
    n_coarse: usize,
    feature_config: crate::geometry::BallConfig,
    hyper: &BaseHyper,
) -> Result<BaseSessionOutcome, ProtocolError> {
    let distinct: std::collections::BTreeSet<usize> = train.iter().map(|(_, l)| *l).collect();
    if distinct.len() < 2 {
        return Err(ProtocolError::InsufficientClasses);
    }
    let input_dim = train[0].0.len();
    let d = feature_config.dim();

    let mut rng = rng_from_seed(derive_seed(hyper.seed, 0x6261_7365));
    let scale = 1.0 / (input_dim as f64).sqrt();
    let mut encoder = Array2::from_shape_fn((d, input_dim), |_| {
        scale * rng.sample::<f64, _>(StandardNormal)
    });
    let mut mapping = MappingLayerParams::at_origin(feature_config);
    let w0 = Array2::from_shape_fn((d, n_coarse), |_| rng.sample::<f64, _>(StandardNormal));
    let mut cls = ClassifierState::new(w0, 0, hyper.softmax_temp, feature_config)?;

    let mut enc_vel = Array2::<f64>::zeros((d, input_dim));
    let mut cls_vel = Array2::<f64>::zeros((d, n_coarse));

    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..hyper.epochs {
        let mut epoch_rng = rng_from_seed(derive_seed(hyper.seed, 0x0e70 + epoch as u64));
        order.shuffle(&mut epoch_rng);
        let mut epoch_loss = 0.0;

        for chunk in order.chunks(hyper.batch_size.max(2)) {
            let views1: Vec<Array1<f64>> = chunk
                .iter()
                .map(|&i| gaussian_like(&mut epoch_rng, &train[i].0, hyper.view_noise))
                .collect();
            let views2: Vec<Array1<f64>> = chunk
                .iter()
                .map(|&i| gaussian_like(&mut epoch_rng, &train[i].0, hyper.view_noise))
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].1).collect();

            let (loss, grads) = base_loss_grad(
                &encoder, &mapping, &cls, &views1, &views2, &labels, hyper.tau,
            )?;
            epoch_loss += loss;

            euclidean_sgd_step(
                encoder.view_mut(),
                grads.encoder.view(),
                enc_vel.view_mut(),
                hyper.lr,
                SGD_MOMENTUM,
                SGD_WEIGHT_DECAY,
            );
            cls.update_active_columns(|w| {
                euclidean_sgd_step(
                    w,
                    grads.classifier.view(),
                    cls_vel.view_mut(),
                    hyper.lr,
                    SGD_MOMENTUM,
                    SGD_WEIGHT_DECAY,
                );
            });
            mapping.base_point =
                riemannian_sgd_step(&mapping.base_point, &grads.mapping_base, hyper.lr);
        }
        epoch_losses.push(epoch_loss);
    }

    // feature extractor and coarse columns are frozen from here on
    cls.freeze_through(n_coarse)?;
    let pipeline = EncoderPipeline { encoder, mapping };

    let items: Vec<EvalItem> = eval_raw
        .iter()
        .map(|(x, coarse)| {
            Ok(EvalItem {
                feature: pipeline.forward(x)?,
                coarse_label: *coarse,
                fine_column: None,
            })
        })
        .collect::<Result<_, ProtocolError>>()?;
    let report = evaluate_session(&items, &cls, 0, n_coarse)?;

    Ok(BaseSessionOutcome {
        pipeline,
        classifier: cls,
        report,
        epoch_losses,
    })
}

/// Incremental-session hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalHyper {
    pub lr: f64,
    pub epochs: usize,
    /// Wrapped-normal draws appended per new class when augmentation is on.
    pub augment_per_class: usize,
}

/// Train one incremental session in place.
///
/// `support` pairs each support feature with its global classifier column
/// (`n_coarse` + fine slot). Exactly the columns of the new classes are
/// appended and updated; previously learned columns stay bit-identical, and
/// `frozen_upto` advances past the new columns afterwards. Returns the
/// per-epoch losses.
pub fn train_incremental_session(
    spec: &SessionSpec,
    support: &[(BallPoint, usize)],
    cls: &mut ClassifierState,
    n_coarse: usize,
    augment: bool,
    hyper: &IncrementalHyper,
    seed: u64,
) -> Result<Vec<f64>, ProtocolError> {
    let expected = spec.way * spec.shot;
    if support.len() != expected {
        return Err(ProtocolError::SupportSizeMismatch {
            expected,
            got: support.len(),
        });
    }
    debug_assert_eq!(
        cls.n_classes(),
        n_coarse + spec.class_start,
        "classifier must hold exactly the previously learned columns"
    );

    // class prototypes initialize the new columns
    let first_new = cls.n_classes();
    let mut train_items: Vec<(BallPoint, usize)> = support.to_vec();
    let mut new_cols = Array2::<f64>::zeros((cls.feature_dim(), spec.way));
    for (offset, slot) in spec.slots().enumerate() {
        let column = n_coarse + slot;
        let class_feats: Vec<BallPoint> = support
            .iter()
            .filter(|(_, col)| *col == column)
            .map(|(f, _)| f.clone())
            .collect();
        if class_feats.len() != spec.shot {
            return Err(ProtocolError::SupportSizeMismatch {
                expected: spec.shot,
                got: class_feats.len(),
            });
        }
        let set = SampleSet::new(class_feats)?;
        let proto = frechet_mean_default(&set);
        new_cols.column_mut(offset).assign(proto.mean.coords());

        if augment && hyper.augment_per_class > 0 {
            let variance = estimate_variance(&set, &proto.mean);
            let params = WrappedNormalParams::new(proto.mean.clone(), variance)?;
            let draws = sample_wrapped_normal(
                &params,
                hyper.augment_per_class,
                derive_seed(seed, 0x00a6_0000 + column as u64),
            );
            for p in draws.points() {
                train_items.push((p.clone(), column));
            }
        }
    }
    cls.append_columns(&new_cols)?;

    let feats: Vec<BallPoint> = train_items.iter().map(|(f, _)| f.clone()).collect();
    let labels: Vec<usize> = train_items.iter().map(|(_, l)| *l).collect();

    let mut velocity = Array2::<f64>::zeros((cls.feature_dim(), spec.way));
    let mut losses = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        let (loss, grads) = ce_loss_grad(&feats, &labels, cls)?;
        losses.push(loss);
        let frozen = cls.frozen_upto();
        let active_grad = grads.weight.slice(s![.., frozen..]).to_owned();
        cls.update_active_columns(|w| {
            euclidean_sgd_step(
                w,
                active_grad.view(),
                velocity.view_mut(),
                hyper.lr,
                SGD_MOMENTUM,
                SGD_WEIGHT_DECAY,
            );
        });
    }
    cls.freeze_through(first_new + spec.way)?;
    Ok(losses)
}

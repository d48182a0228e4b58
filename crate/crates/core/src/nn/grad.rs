//! Analytic gradients of the implemented losses plus the central
//! finite-difference oracle used to verify them.
//!
//! The analytic path is the one used in training; `numeric_gradient` exists
//! only as a test oracle and is never called by an optimizer.

use ndarray::{Array1, Array2};

use super::{ContrastiveBatch, HypFCParams, MappingLayerParams, NnError};
use crate::geometry::{
    self,
    grad::{distance_grad, exp_map_vjp, mobius_add_vjp, mobius_matvec_vjp},
    BallPoint,
};

/// Central finite differences of `f` over a flat parameter vector. Ball-valued
/// parameters should be rebuilt (and clipped) inside `f`.
pub fn numeric_gradient<F>(f: F, params: &[f64], step: f64) -> Result<Vec<f64>, NnError>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(step > 0.0, "numeric_gradient requires step > 0");
    let mut grads = Vec::with_capacity(params.len());
    let mut work = params.to_vec();
    for i in 0..params.len() {
        work[i] = params[i] + step;
        let up = f(&work);
        work[i] = params[i] - step;
        let dn = f(&work);
        work[i] = params[i];
        if !up.is_finite() || !dn.is_finite() {
            return Err(NnError::NonFiniteLoss { index: i });
        }
        grads.push((up - dn) / (2.0 * step));
    }
    Ok(grads)
}

/// Max-norm relative disagreement between two gradient vectors.
pub fn relative_gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    diff / scale.max(1e-8)
}

/// Gradients of [`super::hyp_contrastive_loss`] with respect to every point
/// in the batch.
#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub queries: Vec<Array1<f64>>,
    pub positives: Vec<Array1<f64>>,
    pub negatives: Vec<Vec<Array1<f64>>>,
}

/// Loss value together with exact gradients, obtained by chaining the
/// distance derivative through the per-query softmax weights.
pub fn contrastive_loss_grad(batch: &ContrastiveBatch) -> (f64, ContrastiveGrads) {
    let tau = batch.temperature;
    let dim = batch.queries[0].dim();
    let mut loss = 0.0;
    let mut grads = ContrastiveGrads {
        queries: vec![Array1::zeros(dim); batch.queries.len()],
        positives: vec![Array1::zeros(dim); batch.queries.len()],
        negatives: batch
            .negatives
            .iter()
            .map(|negs| vec![Array1::zeros(dim); negs.len()])
            .collect(),
    };

    for (n, q) in batch.queries.iter().enumerate() {
        let d_pos = geometry::distance(q, &batch.positives[n]);
        let d_negs: Vec<f64> = batch.negatives[n]
            .iter()
            .map(|k| geometry::distance(q, k))
            .collect();

        let mut terms = Vec::with_capacity(1 + d_negs.len());
        terms.push(-d_pos / tau);
        terms.extend(d_negs.iter().map(|d| -d / tau));
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = terms.iter().map(|t| (t - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let lse = m + z.ln();
        loss += d_pos / tau + lse;

        // dL/d(d_pos) = (1 - s_pos)/tau, dL/d(d_neg_m) = -s_m/tau
        let s_pos = exps[0] / z;
        let (gq, gp) = distance_grad(q, &batch.positives[n]);
        let w_pos = (1.0 - s_pos) / tau;
        grads.queries[n] = &grads.queries[n] + &(gq * w_pos);
        grads.positives[n] = gp * w_pos;
        for (mi, k) in batch.negatives[n].iter().enumerate() {
            let s_m = exps[mi + 1] / z;
            let (gq, gk) = distance_grad(q, k);
            let w = -s_m / tau;
            grads.queries[n] = &grads.queries[n] + &(gq * w);
            grads.negatives[n][mi] = gk * w;
        }
    }
    (loss, grads)
}

/// Cotangents of the mapping layer `TP(x) = exp_w(x)`: returns
/// `(grad_x, grad_base_point)`.
pub fn tp_vjp(
    x: &Array1<f64>,
    p: &MappingLayerParams,
    cotangent: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let (grad_w, grad_v) = exp_map_vjp(&p.base_point, x, cotangent);
    (grad_v, grad_w)
}

/// Cotangents of the hyperbolic fully-connected layer: returns
/// `(grad_weight, grad_bias, grad_x)`.
pub fn hypfc_vjp(
    x: &BallPoint,
    p: &HypFCParams,
    cotangent: &Array1<f64>,
) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>), NnError> {
    let h = geometry::mobius_matvec(&p.weight, x)?;
    let (grad_h, grad_b) = mobius_add_vjp(&h, &p.bias, cotangent);
    let (grad_w, grad_x) = mobius_matvec_vjp(&p.weight, x, &grad_h);
    Ok((grad_w, grad_b, grad_x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BallConfig;
    use crate::nn::{hyp_contrastive_loss, hypfc_forward};
    use crate::seeding::rng_from_seed;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn numeric_gradient_of_constant_is_zero() {
        let g = numeric_gradient(|_| 3.5, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn numeric_gradient_of_quadratic_is_exact_to_step_squared() {
        let f = |v: &[f64]| v[0] * v[0] + 2.0 * v[0] * v[1] + 3.0 * v[1] * v[1];
        let g = numeric_gradient(f, &[1.5, -0.5], 1e-5).unwrap();
        assert!((g[0] - (2.0 * 1.5 + 2.0 * -0.5)).abs() < 1e-9);
        assert!((g[1] - (2.0 * 1.5 + 6.0 * -0.5)).abs() < 1e-9);
    }

    #[test]
    fn numeric_gradient_reports_non_finite_parameter() {
        let f = |v: &[f64]| if v[1] > 1.0 { f64::NAN } else { v[0] };
        let err = numeric_gradient(f, &[0.0, 1.0], 1e-5).unwrap_err();
        assert_eq!(err, NnError::NonFiniteLoss { index: 1 });
    }

    #[test]
    fn contrastive_grad_matches_finite_differences() {
        let c = 1.0;
        let config = BallConfig::with_default_eps(3, c).unwrap();
        let mut rng = rng_from_seed(11);
        for _ in 0..5 {
            let q = geometry::sample_point(config, 0.6, &mut rng);
            let kp = geometry::sample_point(config, 0.6, &mut rng);
            let k1 = geometry::sample_point(config, 0.6, &mut rng);
            let k2 = geometry::sample_point(config, 0.6, &mut rng);
            let batch = ContrastiveBatch::new(
                vec![q.clone()],
                vec![kp.clone()],
                vec![vec![k1.clone(), k2.clone()]],
                0.2,
            )
            .unwrap();
            let (_, grads) = contrastive_loss_grad(&batch);

            let flat: Vec<f64> = q
                .coords()
                .iter()
                .chain(kp.coords())
                .chain(k1.coords())
                .chain(k2.coords())
                .cloned()
                .collect();
            let f = |v: &[f64]| {
                let mk = |s: &[f64]| BallPoint::new(Array1::from(s.to_vec()), config).unwrap();
                let batch = ContrastiveBatch::new(
                    vec![mk(&v[0..3])],
                    vec![mk(&v[3..6])],
                    vec![vec![mk(&v[6..9]), mk(&v[9..12])]],
                    0.2,
                )
                .unwrap();
                hyp_contrastive_loss(&batch)
            };
            let numeric = numeric_gradient(f, &flat, 1e-6).unwrap();
            let analytic: Vec<f64> = grads.queries[0]
                .iter()
                .chain(&grads.positives[0])
                .chain(&grads.negatives[0][0])
                .chain(&grads.negatives[0][1])
                .cloned()
                .collect();
            let err = relative_gradient_error(&analytic, &numeric);
            assert!(err < 1e-4, "relative gradient error {err}");
        }
    }

    #[test]
    fn contrastive_grad_vanishes_at_symmetric_stationary_point() {
        // q == k+ and two negatives mirrored across q: the query gradient
        // from the negatives cancels, the positive term has zero distance.
        let c = 1.0;
        let config = BallConfig::with_default_eps(2, c).unwrap();
        let q = BallPoint::new(array![0.0, 0.0], config).unwrap();
        let k1 = BallPoint::new(array![0.3, 0.0], config).unwrap();
        let k2 = BallPoint::new(array![-0.3, 0.0], config).unwrap();
        let batch =
            ContrastiveBatch::new(vec![q.clone()], vec![q], vec![vec![k1, k2]], 0.2).unwrap();
        let (_, grads) = contrastive_loss_grad(&batch);
        assert!(grads.queries[0].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn distance_grad_antisymmetric_under_swap() {
        let config = BallConfig::with_default_eps(2, 0.5).unwrap();
        let x = BallPoint::new(array![0.3, -0.2], config).unwrap();
        let y = BallPoint::new(array![-0.1, 0.4], config).unwrap();
        let (gx, gy) = distance_grad(&x, &y);
        let (hy, hx) = distance_grad(&y, &x);
        for i in 0..2 {
            assert!((gx[i] - hx[i]).abs() < 1e-12);
            assert!((gy[i] - hy[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn hypfc_vjp_matches_finite_differences() {
        for c in [0.1, 1.0] {
            let config = BallConfig::with_default_eps(2, c).unwrap();
            let out_config = BallConfig::with_default_eps(3, c).unwrap();
            let mut rng = rng_from_seed(17);
            for _ in 0..20 {
                let x = crate::geometry::sample_point(config, 0.6, &mut rng);
                let w = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
                let b = crate::geometry::sample_point(out_config, 0.6, &mut rng);
                let target = crate::geometry::sample_point(out_config, 0.6, &mut rng);

                // probe loss: d(HypFC(x), target)
                let layer = HypFCParams::new(w.clone(), b.clone()).unwrap();
                let out = hypfc_forward(&x, &layer).unwrap();
                let (d_out, _) = distance_grad(&out, &target);
                let (gw, gb, gx) = hypfc_vjp(&x, &layer, &d_out).unwrap();

                let flat: Vec<f64> = w
                    .iter()
                    .cloned()
                    .chain(b.coords().iter().cloned())
                    .chain(x.coords().iter().cloned())
                    .collect();
                let f = |v: &[f64]| {
                    let w = Array2::from_shape_vec((3, 2), v[0..6].to_vec()).unwrap();
                    let b = BallPoint::new(Array1::from(v[6..9].to_vec()), out_config).unwrap();
                    let x = BallPoint::new(Array1::from(v[9..11].to_vec()), config).unwrap();
                    let layer = HypFCParams::new(w, b).unwrap();
                    geometry::distance(&hypfc_forward(&x, &layer).unwrap(), &target)
                };
                let numeric = numeric_gradient(f, &flat, 1e-5).unwrap();
                let analytic: Vec<f64> = gw
                    .iter()
                    .cloned()
                    .chain(gb.iter().cloned())
                    .chain(gx.iter().cloned())
                    .collect();
                let err = relative_gradient_error(&analytic, &numeric);
                assert!(err < 1e-4, "c={c}: relative gradient error {err}");
            }
        }
    }
}

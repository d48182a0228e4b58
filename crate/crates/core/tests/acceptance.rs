//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `cargo test --test acceptance -- --nocapture`
//! to see them).

use hypc2f::c2f::{
    ce_loss, ce_loss_grad, compute_logits, ClassifierState, RunHistory, SessionReport,
};
use hypc2f::experiment::{run_experiment, run_experiment_observed, ExperimentConfig};
use hypc2f::geometry::{
    self, clip_to_ball, default_curvature, distance, exp_map, log_map, mobius_add, sample_point,
    BallConfig, BallPoint, TangentVector,
};
use hypc2f::nn::grad::{contrastive_loss_grad, numeric_gradient, relative_gradient_error};
use hypc2f::nn::{hyp_contrastive_loss, ContrastiveBatch, MappingLayerParams};
use hypc2f::seeding::{derive_seed, rng_from_seed};
use hypc2f::selftest::frechet_brute_force;
use hypc2f::stats::{
    density_ratio_term, frechet_mean, frechet_mean_default, gyrocentroid,
    riemannian_normal_logdensity_unnorm, sample_wrapped_normal, wrapped_normal_logdensity_unnorm,
    SampleSet, WrappedNormalParams,
};
use ndarray::{Array1, Array2};
use rand::Rng;

struct Criterion;

impl Criterion {
    fn check(name: &'static str, body: impl FnOnce() -> Result<String, String>) {
        match body() {
            Ok(detail) => println!("PASS: {name} -- {detail}"),
            Err(detail) => {
                println!("FAIL: {name} -- {detail}");
                panic!("{name} failed: {detail}");
            }
        }
    }
}

fn cfg(dim: usize, c: f64) -> BallConfig {
    BallConfig::with_default_eps(dim, c).unwrap()
}

#[test]
fn criterion_1_curvature_constants() {
    Criterion::check("criterion 1: curvature constants", || {
        let c640 = default_curvature(640).map_err(|e| e.to_string())?;
        let c2048 = default_curvature(2048).map_err(|e| e.to_string())?;
        if (c640 - 0.162).abs() > 1e-3 {
            return Err(format!("c(640) = {c640}, expected 0.162 +/- 0.001"));
        }
        if (c2048 - 0.091).abs() > 1e-3 {
            return Err(format!("c(2048) = {c2048}, expected 0.091 +/- 0.001"));
        }
        Ok(format!("c(640) = {c640:.4}, c(2048) = {c2048:.4}"))
    });
}

#[test]
fn criterion_2_geometry_suite() {
    Criterion::check("criterion 2: geometry suite", || {
        let mut worst_inv = 0.0f64;
        let mut worst_mob = 0.0f64;
        let mut worst_gyro = 0.0f64;
        for &c in &[0.1, 0.5, 1.0] {
            let config = cfg(3, c);
            let mut rng = rng_from_seed(derive_seed(0xacc, c.to_bits()));
            let origin = BallPoint::origin(config);
            for _ in 0..1000 {
                // Mobius identity and inverse at 1e-9
                let x = sample_point(config, 0.9, &mut rng);
                let id = mobius_add(&x, &origin).unwrap();
                for i in 0..3 {
                    worst_mob = worst_mob.max((id.coords()[i] - x.coords()[i]).abs());
                }
                worst_mob = worst_mob.max(mobius_add(&x, &x.negate()).unwrap().norm());

                // exp/log inversion at 1e-6 relative
                let y = sample_point(config, 0.9, &mut rng);
                let back = exp_map(&log_map(&x, &y));
                let scale = y.norm().max(1.0);
                for i in 0..3 {
                    worst_inv = worst_inv.max((back.coords()[i] - y.coords()[i]).abs() / scale);
                }

                // gyro-translation invariance at 1e-7, triangle inequality
                let u = sample_point(config, 0.85, &mut rng);
                let v = sample_point(config, 0.85, &mut rng);
                let w = sample_point(config, 0.85, &mut rng);
                let d1 = distance(&u, &mobius_add(&u, &w).unwrap());
                let d2 = distance(&v, &mobius_add(&v, &w).unwrap());
                worst_gyro = worst_gyro.max((d1 - d2).abs());
                let excess = distance(&u, &w) - (distance(&u, &v) + distance(&v, &w)) - 1e-9;
                if excess > 0.0 {
                    return Err(format!(
                        "triangle inequality violated by {excess:.3e} at c={c}"
                    ));
                }
            }
        }
        if worst_mob > 1e-9 {
            return Err(format!("identity/inverse error {worst_mob:.3e} > 1e-9"));
        }
        if worst_inv > 1e-6 {
            return Err(format!("exp/log inversion error {worst_inv:.3e} > 1e-6"));
        }
        if worst_gyro > 1e-7 {
            return Err(format!("gyro-invariance error {worst_gyro:.3e} > 1e-7"));
        }
        Ok(format!(
            "identity/inverse {worst_mob:.2e}, inversion {worst_inv:.2e}, gyro {worst_gyro:.2e} over 1000 triples x 3 curvatures"
        ))
    });
}

#[test]
fn criterion_3_euclidean_limit() {
    Criterion::check("criterion 3: euclidean limit", || {
        let config = cfg(3, 1e-8);
        let mut rng = rng_from_seed(0x11b);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let xv = Array1::from_shape_fn(3, |_| rng.gen_range(-0.577..0.577));
            let yv = Array1::from_shape_fn(3, |_| rng.gen_range(-0.577..0.577));
            let x = BallPoint::new(xv.clone(), config).unwrap();
            let y = BallPoint::new(yv.clone(), config).unwrap();
            let sum = &xv + &yv;

            let add = mobius_add(&x, &y).unwrap();
            let ex = exp_map(&TangentVector::new(yv.clone(), x.clone()).unwrap());
            let lg = log_map(&x, &y);
            let diff = &yv - &xv;
            for i in 0..3 {
                worst = worst.max((add.coords()[i] - sum[i]).abs());
                worst = worst.max((ex.coords()[i] - sum[i]).abs());
                worst = worst.max((lg.coords()[i] - diff[i]).abs());
            }
            let euclid = 2.0 * diff.dot(&diff).sqrt();
            worst = worst.max((distance(&x, &y) - euclid).abs());
        }
        if worst > 1e-4 {
            return Err(format!("flat-limit deviation {worst:.3e} > 1e-4"));
        }
        Ok(format!(
            "max deviation from Euclidean ops {worst:.2e} at c = 1e-8"
        ))
    });
}

#[test]
fn criterion_4_gradient_correctness() {
    Criterion::check("criterion 4: gradient correctness", || {
        let mut worst = (0.0f64, "");
        let mut track = |err: f64, what: &'static str| {
            if err > worst.0 {
                worst = (err, what);
            }
        };
        for &c in &[0.1, 1.0] {
            let config = cfg(3, c);
            let mut rng = rng_from_seed(derive_seed(0x9ad, c.to_bits()));
            for _ in 0..20 {
                // distance
                let x = sample_point(config, 0.6, &mut rng);
                let y = sample_point(config, 0.6, &mut rng);
                let (gx, gy) = geometry::grad::distance_grad(&x, &y);
                let flat: Vec<f64> = x.coords().iter().chain(y.coords()).cloned().collect();
                let numeric = numeric_gradient(
                    |v| {
                        let a = BallPoint::new(Array1::from(v[..3].to_vec()), config).unwrap();
                        let b = BallPoint::new(Array1::from(v[3..].to_vec()), config).unwrap();
                        distance(&a, &b)
                    },
                    &flat,
                    1e-5,
                )
                .map_err(|e| e.to_string())?;
                let analytic: Vec<f64> = gx.iter().chain(&gy).cloned().collect();
                track(relative_gradient_error(&analytic, &numeric), "distance");

                // hyperbolic contrastive loss
                let q = sample_point(config, 0.6, &mut rng);
                let kp = sample_point(config, 0.6, &mut rng);
                let k1 = sample_point(config, 0.6, &mut rng);
                let k2 = sample_point(config, 0.6, &mut rng);
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
                let numeric = numeric_gradient(
                    |v| {
                        let mk =
                            |s: &[f64]| BallPoint::new(Array1::from(s.to_vec()), config).unwrap();
                        hyp_contrastive_loss(
                            &ContrastiveBatch::new(
                                vec![mk(&v[..3])],
                                vec![mk(&v[3..6])],
                                vec![vec![mk(&v[6..9]), mk(&v[9..12])]],
                                0.2,
                            )
                            .unwrap(),
                        )
                    },
                    &flat,
                    1e-5,
                )
                .map_err(|e| e.to_string())?;
                let analytic: Vec<f64> = grads.queries[0]
                    .iter()
                    .chain(&grads.positives[0])
                    .chain(&grads.negatives[0][0])
                    .chain(&grads.negatives[0][1])
                    .cloned()
                    .collect();
                track(relative_gradient_error(&analytic, &numeric), "contrastive");

                // cross-entropy over hyperbolic logits
                let w = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
                let cls = ClassifierState::new(w.clone(), 0, 0.5, config).unwrap();
                let feat = sample_point(config, 0.6, &mut rng);
                let label = rng.gen_range(0..4);
                let (_, grads) = ce_loss_grad(std::slice::from_ref(&feat), &[label], &cls).unwrap();
                let flat: Vec<f64> = w
                    .iter()
                    .cloned()
                    .chain(feat.coords().iter().cloned())
                    .collect();
                let numeric = numeric_gradient(
                    |v| {
                        let w = Array2::from_shape_vec((3, 4), v[..12].to_vec()).unwrap();
                        let cls = ClassifierState::new(w, 0, 0.5, config).unwrap();
                        let f = BallPoint::new(Array1::from(v[12..].to_vec()), config).unwrap();
                        ce_loss(&[(f, label)], &cls).unwrap()
                    },
                    &flat,
                    1e-5,
                )
                .map_err(|e| e.to_string())?;
                let analytic: Vec<f64> = grads
                    .weight
                    .iter()
                    .cloned()
                    .chain(grads.features[0].iter().cloned())
                    .collect();
                track(
                    relative_gradient_error(&analytic, &numeric),
                    "cross-entropy",
                );
            }
        }
        if worst.0 > 1e-4 {
            return Err(format!(
                "{} gradient error {:.3e} > 1e-4 relative",
                worst.1, worst.0
            ));
        }
        Ok(format!(
            "worst relative error {:.2e} ({}) over 20 configs x 2 curvatures x 3 losses",
            worst.0, worst.1
        ))
    });
}

#[test]
fn criterion_5_mean_oracles() {
    Criterion::check("criterion 5: mean oracles", || {
        // two-point sets: statistical mean equals the geometric mean
        let mut worst_pair = 0.0f64;
        for &c in &[0.1, 0.5, 1.0] {
            let config = cfg(3, c);
            let mut rng = rng_from_seed(derive_seed(0x3a1, c.to_bits()));
            for _ in 0..50 {
                let s = SampleSet::new(vec![
                    sample_point(config, 0.85, &mut rng),
                    sample_point(config, 0.85, &mut rng),
                ])
                .unwrap();
                let gap = distance(&frechet_mean(&s, 1e-10, 2000).mean, &gyrocentroid(&s));
                worst_pair = worst_pair.max(gap);
            }
        }
        if worst_pair > 1e-6 {
            return Err(format!("two-point gap {worst_pair:.3e} > 1e-6"));
        }

        // small sets: matches the brute-force minimizer
        let mut worst_bf = 0.0f64;
        let mut rng = rng_from_seed(0x3a2);
        for &(n, dim) in &[(3usize, 2usize), (4, 3), (6, 4)] {
            for &c in &[0.5, 1.0] {
                let config = cfg(dim, c);
                let pts = (0..n)
                    .map(|_| sample_point(config, 0.7, &mut rng))
                    .collect();
                let s = SampleSet::new(pts).unwrap();
                let gap = distance(
                    &frechet_mean(&s, 1e-10, 2000).mean,
                    &frechet_brute_force(&s),
                );
                worst_bf = worst_bf.max(gap);
            }
        }
        if worst_bf > 1e-5 {
            return Err(format!("brute-force gap {worst_bf:.3e} > 1e-5"));
        }

        // wrapped-normal mean recovery: 10^4 draws, sigma^2 = 0.04, c = 0.5
        let config = cfg(4, 0.5);
        let mut rng = rng_from_seed(0x3a3);
        let mu = sample_point(config, 0.5, &mut rng);
        let params = WrappedNormalParams::new(mu.clone(), 0.04).unwrap();
        let mut worst_rec = 0.0f64;
        for seed in 0..5u64 {
            let draws = sample_wrapped_normal(&params, 10_000, derive_seed(0x3a4, seed));
            let err = distance(&frechet_mean_default(&draws).mean, &mu);
            worst_rec = worst_rec.max(err);
        }
        if worst_rec > 0.05 {
            return Err(format!("mean-recovery error {worst_rec:.3} > 0.05"));
        }
        Ok(format!(
            "two-point {worst_pair:.2e}, brute-force {worst_bf:.2e}, recovery {worst_rec:.3} over 5 seeds"
        ))
    });
}

#[test]
fn criterion_6_density_relation() {
    Criterion::check("criterion 6: density relation", || {
        let mut worst = 0.0f64;
        for &c in &[0.1, 0.5, 1.0] {
            let config = cfg(3, c);
            let mut rng = rng_from_seed(derive_seed(0xde5, c.to_bits()));
            let mu = sample_point(config, 0.5, &mut rng);
            let params = WrappedNormalParams::new(mu.clone(), 0.4).unwrap();
            for _ in 0..100 {
                let x = sample_point(config, 0.9, &mut rng);
                let wrapped = wrapped_normal_logdensity_unnorm(&x, &params).unwrap();
                let riem = riemannian_normal_logdensity_unnorm(&x, &params).unwrap();
                let d = distance(&mu, &x);
                let term = density_ratio_term(d, c, 3);
                if !(term > 0.0 && term <= 1.0) {
                    return Err(format!("ratio term {term} outside (0, 1]"));
                }
                // wrapped = riemannian + (d-1) * log(base ratio); the base
                // ratio is the term at exponent 1, i.e. dimension 2
                let base = density_ratio_term(d, c, 2);
                worst = worst.max((wrapped - (riem + 2.0 * base.ln())).abs());
                worst = worst.max((wrapped - (riem + term.ln())).abs());
            }
            if density_ratio_term(0.0, c, 3) != 1.0 {
                return Err("ratio term at zero distance is not 1".into());
            }
        }
        // dimension 1: no correction at all
        let cfg1 = cfg(1, 1.0);
        let mu = BallPoint::new(ndarray::array![0.2], cfg1).unwrap();
        let x = BallPoint::new(ndarray::array![-0.5], cfg1).unwrap();
        let params = WrappedNormalParams::new(mu, 0.3).unwrap();
        let w = wrapped_normal_logdensity_unnorm(&x, &params).unwrap();
        let r = riemannian_normal_logdensity_unnorm(&x, &params).unwrap();
        if w != r {
            return Err(format!("d = 1 densities differ: {w} vs {r}"));
        }
        if worst > 1e-10 {
            return Err(format!("relation residual {worst:.3e} > 1e-10"));
        }
        Ok(format!(
            "relation residual {worst:.2e} over 100 points x 3 curvatures"
        ))
    });
}

#[test]
fn criterion_7_protocol_invariants() {
    Criterion::check("criterion 7: protocol invariants", || {
        // desk-scale run with the freeze discipline observed bit-for-bit
        let config = ExperimentConfig::default();
        let mut snapshots: Vec<Vec<u64>> = Vec::new();
        let mut violations = 0usize;
        let history = run_experiment_observed(&config, &mut |session, cls| {
            let bits: Vec<u64> = cls
                .weight()
                .columns()
                .into_iter()
                .take(cls.frozen_upto())
                .flat_map(|col| col.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect();
            for snap in &snapshots {
                if bits.len() < snap.len() || bits[..snap.len()] != snap[..] {
                    violations += 1;
                }
            }
            let _ = session;
            snapshots.push(bits);
        })
        .map_err(|e| e.to_string())?;
        if violations > 0 {
            return Err(format!(
                "{violations} frozen-prefix violations across sessions"
            ));
        }

        // session-0 convention straight from the run
        let s0 = &history.sessions[0];
        if s0.acc_fine != 0.0 || s0.acc_total != s0.acc_coarse {
            return Err("session-0 report violates the base convention".into());
        }

        // column scaling leaves normalized logits unchanged
        let ball = cfg(4, 0.85);
        let mut rng = rng_from_seed(0x701);
        let w = Array2::from_shape_fn((4, 5), |_| rng.gen_range(-1.0..1.0));
        let cls = ClassifierState::new(w.clone(), 0, 0.5, ball).unwrap();
        let feat = sample_point(ball, 0.7, &mut rng);
        let before = compute_logits(&feat, &cls, true).unwrap();
        let mut scaled = w;
        for v in scaled.column_mut(2).iter_mut() {
            *v *= 9.0;
        }
        let cls2 = ClassifierState::new(scaled, 0, 0.5, ball).unwrap();
        let after = compute_logits(&feat, &cls2, true).unwrap();
        let drift = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if drift > 1e-9 {
            return Err(format!("column scaling moved logits by {drift:.3e}"));
        }

        // hand-built 3-session metrics
        let hand = RunHistory::from_reports(
            vec![
                SessionReport::base(0.8),
                SessionReport::incremental(1, 0.7, 0.5, 0.6).unwrap(),
                SessionReport::incremental(2, 0.6, 0.25, 0.5).unwrap(),
            ],
            vec![0, 10, 20],
            20,
        )
        .map_err(|e| e.to_string())?;
        let avg_expect = (0.8 + 0.6 + 0.5) / 3.0;
        if (hand.avg_acc - avg_expect).abs() > 1e-9 {
            return Err(format!("avg {} vs hand {avg_expect}", hand.avg_acc));
        }
        // F = 0.5 * (20/20) + 0.125 * (1 - 10/20) = 0.5625
        let f = hand
            .forgetting
            .ok_or("forgetting undefined on hand history")?;
        if (f - 0.5625).abs() > 1e-9 {
            return Err(format!("forgetting {f} vs hand 0.5625"));
        }
        Ok(format!(
            "freeze held over {} sessions, scaling drift {drift:.1e}, hand metrics exact",
            history.total_sessions
        ))
    });
}

#[test]
fn criterion_8_end_to_end_learning() {
    Criterion::check("criterion 8: end-to-end learning sanity", || {
        let config = ExperimentConfig::default();
        let hist = run_experiment(&config).map_err(|e| e.to_string())?;

        let coarse0 = hist.sessions[0].acc_coarse;
        if coarse0 < 0.90 {
            return Err(format!("base coarse accuracy {coarse0} < 0.90"));
        }
        let fine_t = hist.sessions.last().unwrap().acc_fine;
        let chance = 1.0 / hist.total_fine as f64;
        if fine_t < 3.0 * chance {
            return Err(format!(
                "final fine accuracy {fine_t} below 3x chance {:.3}",
                3.0 * chance
            ));
        }

        // both geometries complete and round-trip through the schema
        let mut ablation = config.clone();
        ablation.hyperbolic = false;
        let hist_flat = run_experiment(&ablation).map_err(|e| e.to_string())?;
        for h in [&hist, &hist_flat] {
            let json = h.to_json().map_err(|e| e.to_string())?;
            let back = RunHistory::from_json(&json).map_err(|e| e.to_string())?;
            back.validate_consistency(1e-9).map_err(|e| e.to_string())?;
            if back != *h {
                return Err("history JSON round trip changed the run".into());
            }
        }
        Ok(format!(
            "coarse {coarse0:.3}, final fine {fine_t:.3} (chance {chance:.3}); ablation fine {:.3}; both reports schema-valid",
            hist_flat.sessions.last().unwrap().acc_fine
        ))
    });
}

#[test]
fn criterion_9_round_off_safety() {
    Criterion::check("criterion 9: round-off safety", || {
        for &c in &[0.1, 0.5, 1.0] {
            let config = cfg(3, c);
            let max = config.max_norm();
            let mut rng = rng_from_seed(derive_seed(0x90f, c.to_bits()));
            let mut extremes: Vec<BallPoint> = Vec::new();
            for _ in 0..200 {
                let scale = 10f64.powf(rng.gen_range(0.0..6.0));
                let raw = Array1::from_shape_fn(3, |_| scale * rng.gen_range(-1.0..1.0));
                let p = clip_to_ball(raw.clone(), config).map_err(|e| e.to_string())?;
                let q = clip_to_ball(
                    Array1::from_shape_fn(3, |_| scale * rng.gen_range(-1.0..1.0)),
                    config,
                )
                .map_err(|e| e.to_string())?;
                let finite_in_ball = |pt: &BallPoint, what: &str| -> Result<(), String> {
                    if !pt.coords().iter().all(|v| v.is_finite()) {
                        return Err(format!("{what} produced non-finite output at c={c}"));
                    }
                    if pt.norm() > max {
                        return Err(format!("{what} norm {} above {} at c={c}", pt.norm(), max));
                    }
                    Ok(())
                };
                finite_in_ball(&p, "clip_to_ball")?;
                finite_in_ball(&mobius_add(&p, &q).unwrap(), "mobius_add")?;
                finite_in_ball(&geometry::mobius_scalar_mul(3.5, &p), "mobius_scalar_mul")?;
                let m = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-2.0..2.0));
                finite_in_ball(&geometry::mobius_matvec(&m, &p).unwrap(), "mobius_matvec")?;
                // raw tangent of norm up to 1e6 through the mapping layer
                let layer = MappingLayerParams {
                    base_point: q.clone(),
                };
                let tp = hypc2f::nn::tp_forward(&raw, &layer).map_err(|e| e.to_string())?;
                finite_in_ball(&tp, "tp_forward")?;
                let lg = log_map(&p, &q);
                if !lg.coords().iter().all(|v| v.is_finite()) {
                    return Err(format!("log_map produced non-finite output at c={c}"));
                }
                if !distance(&p, &q).is_finite() {
                    return Err(format!("distance not finite at c={c}"));
                }
                extremes.push(p);
                extremes.push(q);
            }
            // losses on boundary-clipped points stay finite
            let n = extremes.len() / 2;
            let batch = ContrastiveBatch::new(
                extremes[..n].to_vec(),
                extremes[n..2 * n].to_vec(),
                vec![vec![extremes[0].clone()]; n],
                0.2,
            )
            .unwrap();
            let loss = hyp_contrastive_loss(&batch);
            if !loss.is_finite() {
                return Err(format!("contrastive loss not finite at c={c}"));
            }
            let mut rng2 = rng_from_seed(1);
            let w = Array2::from_shape_fn((3, 4), |_| rng2.gen_range(-1.0..1.0));
            let cls = ClassifierState::new(w, 0, 0.5, config).unwrap();
            let batch: Vec<(BallPoint, usize)> =
                extremes.iter().map(|p| (p.clone(), 1usize)).collect();
            let ce = ce_loss(&batch, &cls).map_err(|e| e.to_string())?;
            if !ce.is_finite() {
                return Err(format!("cross-entropy not finite at c={c}"));
            }
        }
        Ok("all ball-producing ops finite and clipped for inputs up to 1e6".into())
    });
}

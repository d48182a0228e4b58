//! Table-driven checks against high-precision fixture constants.
//!
//! The table in `tests/fixtures/geometry_fixtures.txt` holds closed-form
//! values re-evaluated at 50 decimal digits and frozen to 12 significant
//! digits (see `tools/gen_geometry_fixtures.py`). Each row is
//! `name | key=value;... | expected (comma separated) | tol`.

use std::collections::HashMap;

use hypc2f::geometry::{self, BallConfig, BallPoint, TangentVector};
use hypc2f::stats::{density_ratio_term, gyrocentroid, SampleSet};
use ndarray::{Array1, Array2};

struct Fixture {
    name: String,
    inputs: HashMap<String, String>,
    expected: Vec<f64>,
    tol: f64,
}

fn load_fixtures() -> Vec<Fixture> {
    let text = include_str!("fixtures/geometry_fixtures.txt");
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|line| {
            let parts: Vec<&str> = line.split('|').map(str::trim).collect();
            assert_eq!(parts.len(), 4, "malformed fixture row: {line}");
            let inputs = parts[1]
                .split(';')
                .map(|kv| {
                    let (k, v) = kv.split_once('=').expect("key=value");
                    (k.trim().to_string(), v.trim().to_string())
                })
                .collect();
            Fixture {
                name: parts[0].to_string(),
                inputs,
                expected: parts[2].split(',').map(|v| v.parse().unwrap()).collect(),
                tol: parts[3].parse().unwrap(),
            }
        })
        .collect()
}

fn vec_of(f: &Fixture, key: &str) -> Array1<f64> {
    f.inputs[key]
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect()
}

fn scalar_of(f: &Fixture, key: &str) -> f64 {
    f.inputs[key].parse().unwrap()
}

fn point_of(f: &Fixture, key: &str, config: BallConfig) -> BallPoint {
    BallPoint::new(vec_of(f, key), config).unwrap()
}

fn assert_close(fixture: &Fixture, actual: &[f64]) {
    assert_eq!(actual.len(), fixture.expected.len(), "{}", fixture.name);
    for (i, (a, e)) in actual.iter().zip(&fixture.expected).enumerate() {
        assert!(
            (a - e).abs() <= fixture.tol,
            "{}[{i}]: {a} vs {e} (tol {})",
            fixture.name,
            fixture.tol
        );
    }
}

#[test]
fn fixtures_match_high_precision_constants() {
    let fixtures = load_fixtures();
    assert!(fixtures.len() >= 14, "fixture table went missing rows");
    for f in &fixtures {
        match f.name.as_str() {
            "conformal_factor" => {
                let c = scalar_of(f, "c");
                let cfg = BallConfig::with_default_eps(vec_of(f, "x").len(), c).unwrap();
                let x = point_of(f, "x", cfg);
                assert_close(f, &[geometry::conformal_factor(&x)]);
            }
            "mobius_add" => {
                let c = scalar_of(f, "c");
                let cfg = BallConfig::with_default_eps(vec_of(f, "x").len(), c).unwrap();
                let out =
                    geometry::mobius_add(&point_of(f, "x", cfg), &point_of(f, "y", cfg)).unwrap();
                assert_close(f, out.coords().as_slice().unwrap());
            }
            "mobius_scalar_mul" => {
                let c = scalar_of(f, "c");
                let cfg = BallConfig::with_default_eps(vec_of(f, "x").len(), c).unwrap();
                let out = geometry::mobius_scalar_mul(scalar_of(f, "r"), &point_of(f, "x", cfg));
                assert_close(f, out.coords().as_slice().unwrap());
            }
            "mobius_matvec" => {
                let c = scalar_of(f, "c");
                let flat = vec_of(f, "m");
                let rows = scalar_of(f, "rows") as usize;
                let x = vec_of(f, "x");
                let cols = x.len();
                let m = Array2::from_shape_vec((rows, cols), flat.to_vec()).unwrap();
                let cfg = BallConfig::with_default_eps(cols, c).unwrap();
                let out = geometry::mobius_matvec(&m, &BallPoint::new(x, cfg).unwrap()).unwrap();
                assert_close(f, out.coords().as_slice().unwrap());
            }
            "exp_map" => {
                let c = scalar_of(f, "c");
                let cfg = BallConfig::with_default_eps(vec_of(f, "w").len(), c).unwrap();
                let w = point_of(f, "w", cfg);
                let t = TangentVector::new(vec_of(f, "v"), w).unwrap();
                assert_close(f, geometry::exp_map(&t).coords().as_slice().unwrap());
            }
            "log_map" => {
                let c = scalar_of(f, "c");
                let cfg = BallConfig::with_default_eps(vec_of(f, "w").len(), c).unwrap();
                let out = geometry::log_map(&point_of(f, "w", cfg), &point_of(f, "y", cfg));
                assert_close(f, out.coords().as_slice().unwrap());
            }
            "distance" => {
                let c = scalar_of(f, "c");
                let cfg = BallConfig::with_default_eps(vec_of(f, "x").len(), c).unwrap();
                let d = geometry::distance(&point_of(f, "x", cfg), &point_of(f, "y", cfg));
                assert_close(f, &[d]);
            }
            "gyrocentroid" => {
                let c = scalar_of(f, "c");
                let cfg = BallConfig::with_default_eps(vec_of(f, "x").len(), c).unwrap();
                let s = SampleSet::new(vec![point_of(f, "x", cfg), point_of(f, "y", cfg)]).unwrap();
                assert_close(f, gyrocentroid(&s).coords().as_slice().unwrap());
            }
            "density_ratio_term" => {
                let v = density_ratio_term(
                    scalar_of(f, "dist"),
                    scalar_of(f, "c"),
                    scalar_of(f, "d") as usize,
                );
                assert_close(f, &[v]);
            }
            "max_safe_distance" => {
                let cfg = BallConfig::with_default_eps(2, scalar_of(f, "c")).unwrap();
                assert_close(f, &[geometry::max_safe_distance(&cfg)]);
            }
            "default_curvature" => {
                let v = geometry::default_curvature(scalar_of(f, "d") as usize).unwrap();
                assert_close(f, &[v]);
            }
            other => panic!("fixture with unknown name {other}"),
        }
    }
}

#[test]
fn curvature_constants_at_backbone_dimensions() {
    // d = 640 -> 0.162, d = 2048 -> 0.091, both to +/- 0.001
    assert!((geometry::default_curvature(640).unwrap() - 0.162).abs() < 1e-3);
    assert!((geometry::default_curvature(2048).unwrap() - 0.091).abs() < 1e-3);
}

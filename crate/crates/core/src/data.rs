//! Synthetic hierarchical datasets and coarse-to-fine session schedules.
//!
//! Samples are generated as nested Gaussian clusters: coarse prototypes are
//! drawn wide, fine prototypes sit inside their coarse cluster, and samples
//! scatter tightly around their fine prototype. Everything is a pure function
//! of the seed. Samples are emitted grouped by fine class, so the sample `k`
//! of fine class `f` has global index `f * samples_per_fine + k`.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("fine_spread ({fine}) must be smaller than coarse_spread ({coarse})")]
    SpreadOrder { coarse: f64, fine: f64 },
    #[error("spread and noise values must be finite and non-negative")]
    BadScale,
    #[error("shot + query = {need} exceeds the {have} samples available per class")]
    InsufficientSamples { need: usize, have: usize },
    #[error("way ({way}) exceeds the number of fine classes ({classes})")]
    WayTooLarge { way: usize, classes: usize },
}

/// Shape and scale of the synthetic hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub n_coarse: usize,
    pub fine_per_coarse: usize,
    pub samples_per_fine: usize,
    pub input_dim: usize,
    /// Scale of the coarse prototypes around the origin.
    pub coarse_spread: f64,
    /// Scale of fine prototypes around their coarse prototype; must stay
    /// below `coarse_spread` so fine clusters nest inside coarse ones.
    pub fine_spread: f64,
    /// Per-sample scatter around the fine prototype.
    pub noise: f64,
    pub seed: u64,
}

impl Default for HierarchySpec {
    /// Desk-scale default: 5 coarse x 4 fine classes, 40 samples each,
    /// 16-dimensional inputs; small enough for a full run in seconds.
    fn default() -> Self {
        Self {
            n_coarse: 5,
            fine_per_coarse: 4,
            samples_per_fine: 40,
            input_dim: 16,
            coarse_spread: 4.0,
            fine_spread: 1.0,
            noise: 0.25,
            seed: 0,
        }
    }
}

impl HierarchySpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_coarse == 0 {
            return Err(DataError::ZeroCount("n_coarse"));
        }
        if self.fine_per_coarse == 0 {
            return Err(DataError::ZeroCount("fine_per_coarse"));
        }
        if self.samples_per_fine == 0 {
            return Err(DataError::ZeroCount("samples_per_fine"));
        }
        if self.input_dim == 0 {
            return Err(DataError::ZeroCount("input_dim"));
        }
        for v in [self.coarse_spread, self.fine_spread, self.noise] {
            if !v.is_finite() || v < 0.0 {
                return Err(DataError::BadScale);
            }
        }
        if self.fine_spread >= self.coarse_spread {
            return Err(DataError::SpreadOrder {
                coarse: self.coarse_spread,
                fine: self.fine_spread,
            });
        }
        Ok(())
    }

    pub fn n_fine(&self) -> usize {
        self.n_coarse * self.fine_per_coarse
    }

    pub fn n_samples(&self) -> usize {
        self.n_fine() * self.samples_per_fine
    }
}

/// One raw (pre-encoder) sample with its nested labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub input: Array1<f64>,
    pub coarse_label: usize,
    pub fine_label: usize,
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Array1<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generate the full dataset. Balanced counts per fine class; the nesting
/// `fine_label / fine_per_coarse == coarse_label` holds by construction.
pub fn generate_hierarchy(spec: &HierarchySpec) -> Result<Vec<LabeledSample>, DataError> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let dim = spec.input_dim;

    let coarse_protos: Vec<Array1<f64>> = (0..spec.n_coarse)
        .map(|_| gaussian_vec(&mut rng, dim, spec.coarse_spread))
        .collect();
    let fine_protos: Vec<Array1<f64>> = (0..spec.n_fine())
        .map(|f| {
            &coarse_protos[f / spec.fine_per_coarse]
                + &gaussian_vec(&mut rng, dim, spec.fine_spread)
        })
        .collect();

    let mut samples = Vec::with_capacity(spec.n_samples());
    for (f, proto) in fine_protos.iter().enumerate() {
        for _ in 0..spec.samples_per_fine {
            samples.push(LabeledSample {
                input: proto + &gaussian_vec(&mut rng, dim, spec.noise),
                coarse_label: f / spec.fine_per_coarse,
                fine_label: f,
            });
        }
    }
    Ok(samples)
}

/// Render samples as a CSV table (`input_0..input_{d-1}, coarse_label,
/// fine_label`) for inspection; regeneration from the seed stays the
/// canonical path.
pub fn samples_to_csv(samples: &[LabeledSample]) -> String {
    let dim = samples.first().map(|s| s.input.len()).unwrap_or(0);
    let mut out = String::new();
    for i in 0..dim {
        out.push_str(&format!("input_{i},"));
    }
    out.push_str("coarse_label,fine_label\n");
    for s in samples {
        for v in s.input.iter() {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{}\n", s.coarse_label, s.fine_label));
    }
    out
}

/// One session of the incremental protocol. `class_start..class_end` are
/// fine-class *slots* in learning order (session 0, the coarse base session,
/// has an empty range).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub index: usize,
    pub class_start: usize,
    pub class_end: usize,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
}

impl SessionSpec {
    pub fn slots(&self) -> std::ops::Range<usize> {
        self.class_start..self.class_end
    }
}

/// Support and query sample indices for one fine class in one session.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAssignment {
    pub fine_label: usize,
    /// Global sample indices used for few-shot training.
    pub support: Vec<usize>,
    /// Global sample indices held out for evaluation; disjoint from support.
    pub query: Vec<usize>,
}

/// Full run schedule: session 0 is the coarse base session, sessions
/// `1..=T` introduce disjoint fine classes in `class_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub sessions: Vec<SessionSpec>,
    /// Fine labels in learning order; slot `s` is learned in session
    /// `1 + s / way`.
    pub class_order: Vec<usize>,
    /// Per incremental session (aligned with `sessions[1..]`).
    pub assignments: Vec<Vec<ClassAssignment>>,
    /// True when `way` does not divide the class count and the last session
    /// is smaller.
    pub truncated_last: bool,
}

/// Build the session schedule. Fine classes are shuffled into a learning
/// order, chunked `way` at a time; each class contributes `shot` support and
/// `query` held-out indices with no overlap.
pub fn schedule_sessions(
    n_fine: usize,
    samples_per_class: usize,
    way: usize,
    shot: usize,
    query: usize,
    seed: u64,
) -> Result<Schedule, DataError> {
    if n_fine == 0 {
        return Err(DataError::ZeroCount("n_fine"));
    }
    if way == 0 {
        return Err(DataError::ZeroCount("way"));
    }
    if shot == 0 {
        return Err(DataError::ZeroCount("shot"));
    }
    if query == 0 {
        return Err(DataError::ZeroCount("query"));
    }
    if way > n_fine {
        return Err(DataError::WayTooLarge {
            way,
            classes: n_fine,
        });
    }
    if shot + query > samples_per_class {
        return Err(DataError::InsufficientSamples {
            need: shot + query,
            have: samples_per_class,
        });
    }

    let mut class_order: Vec<usize> = (0..n_fine).collect();
    class_order.shuffle(&mut rng_from_seed(derive_seed(seed, 0)));

    let mut sessions = vec![SessionSpec {
        index: 0,
        class_start: 0,
        class_end: 0,
        way: 0,
        shot,
        query,
    }];
    let mut assignments = Vec::new();
    let mut start = 0;
    let mut index = 1;
    while start < n_fine {
        let end = (start + way).min(n_fine);
        sessions.push(SessionSpec {
            index,
            class_start: start,
            class_end: end,
            way: end - start,
            shot,
            query,
        });
        let mut class_assignments = Vec::with_capacity(end - start);
        for slot in start..end {
            let fine_label = class_order[slot];
            let mut positions: Vec<usize> = (0..samples_per_class).collect();
            positions.shuffle(&mut rng_from_seed(derive_seed(seed, 1 + fine_label as u64)));
            let global = |pos: usize| fine_label * samples_per_class + pos;
            class_assignments.push(ClassAssignment {
                fine_label,
                support: positions[..shot].iter().map(|&p| global(p)).collect(),
                query: positions[shot..shot + query]
                    .iter()
                    .map(|&p| global(p))
                    .collect(),
            });
        }
        assignments.push(class_assignments);
        start = end;
        index += 1;
    }

    Ok(Schedule {
        sessions,
        class_order,
        assignments,
        truncated_last: n_fine % way != 0,
    })
}

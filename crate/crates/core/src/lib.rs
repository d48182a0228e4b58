//! Poincare-ball numerics and a coarse-to-fine few-shot class-incremental
//! learning protocol, verified at desk scale on synthetic hierarchical data.
//!
//! ```
//! use hypc2f::geometry::{self, BallConfig, BallPoint};
//! use ndarray::array;
//!
//! let ball = BallConfig::with_default_eps(2, 1.0)?;
//! let x = BallPoint::new(array![0.3, 0.0], ball)?;
//! let y = BallPoint::new(array![0.0, 0.4], ball)?;
//! let translated = geometry::mobius_add(&x, &y)?;
//! assert!(translated.norm() < ball.radius());
//! assert!(geometry::distance(&x, &y) > 0.0);
//! # Ok::<(), hypc2f::GeometryError>(())
//! ```
//!
//! Module map:
//! - [`geometry`]: Mobius operations, exp/log maps, distance, ball clipping.
//! - [`stats`]: hyperbolic means, variance, wrapped-normal sampling and the
//!   wrapped-vs-Riemannian density relation.
//! - [`nn`]: hyperbolic layers, contrastive loss, gradients, optimizers.
//! - [`c2f`]: hyperbolic classifier, normalize-and-freeze sessions, metrics.
//! - [`data`]: synthetic hierarchical datasets and session schedules.
//! - [`experiment`]: configuration-driven end-to-end runs.
//! - [`selftest`]: the invariant suites behind the CLI `selftest` command.

pub mod c2f;
pub mod data;
pub mod experiment;
pub mod geometry;
pub mod nn;
pub mod seeding;
pub mod selftest;
pub mod stats;

pub use c2f::{ClassifierState, RunHistory, SessionReport};
pub use data::{HierarchySpec, LabeledSample, SessionSpec};
pub use experiment::ExperimentConfig;
pub use geometry::{BallConfig, BallPoint, GeometryError, TangentVector};
pub use stats::{SampleSet, WrappedNormalParams};

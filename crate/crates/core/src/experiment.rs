//! Configuration-driven end-to-end runs: generate the synthetic hierarchy,
//! train the base session, walk the incremental sessions and collect the
//! session reports into a [`RunHistory`].

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::c2f::{
    evaluate_session, train_base_session, train_incremental_session, BaseHyper, EvalItem,
    IncrementalHyper, ProtocolError, RunHistory,
};
use crate::data::{generate_hierarchy, schedule_sessions, DataError, HierarchySpec};
use crate::geometry::{default_curvature, BallConfig, GeometryError};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Curvature selection: `"auto"` evaluates the constant-volume formula at
/// the encoder output dimension; a number pins it explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurvatureSetting {
    Auto,
    Fixed(f64),
}

impl Serialize for CurvatureSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CurvatureSetting::Auto => s.serialize_str("auto"),
            CurvatureSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for CurvatureSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = serde_json::Value::deserialize(d)?;
        match raw {
            serde_json::Value::String(s) if s == "auto" => Ok(CurvatureSetting::Auto),
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(CurvatureSetting::Fixed)
                .ok_or_else(|| D::Error::custom("curvature must be a finite number")),
            other => Err(D::Error::custom(format!(
                "curvature must be \"auto\" or a number, got {other}"
            ))),
        }
    }
}

/// Few-shot protocol shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    /// Number of incremental sessions; must equal `ceil(n_fine / way)`.
    pub sessions: usize,
}

fn default_schema_version() -> u32 {
    1
}
fn default_true() -> bool {
    true
}
fn default_tau() -> f64 {
    0.2
}
fn default_lambda() -> f64 {
    0.5
}
fn default_base_lr() -> f64 {
    0.12
}
fn default_incremental_lr() -> f64 {
    0.1
}
fn default_base_epochs() -> usize {
    100
}
fn default_incremental_epochs() -> usize {
    80
}
fn default_encoder_dim() -> usize {
    16
}
fn default_batch_size() -> usize {
    64
}
fn default_view_noise() -> f64 {
    0.1
}
fn default_augment_count() -> usize {
    3
}
fn default_curvature_setting() -> CurvatureSetting {
    CurvatureSetting::Auto
}

/// Full experiment description; the JSON config file deserializes into this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub hierarchy: HierarchySpec,
    pub protocol: ProtocolParams,
    #[serde(default = "default_curvature_setting")]
    pub curvature: CurvatureSetting,
    /// `false` switches to the Euclidean ablation: every operation runs at
    /// `c = 1e-8`, the flat limit of the ball.
    #[serde(default = "default_true")]
    pub hyperbolic: bool,
    #[serde(default = "default_true")]
    pub augment: bool,
    /// Contrastive temperature.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Softmax temperature.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_incremental_lr")]
    pub incremental_lr: f64,
    #[serde(default = "default_base_epochs")]
    pub base_epochs: usize,
    #[serde(default = "default_incremental_epochs")]
    pub incremental_epochs: usize,
    #[serde(default = "default_encoder_dim")]
    pub encoder_dim: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Standard deviation of the two-view perturbation in the base session.
    #[serde(default = "default_view_noise")]
    pub view_noise: f64,
    #[serde(default = "default_augment_count")]
    pub augment_count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory the CLI writes `history.json` / `history.csv` into.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl Default for ExperimentConfig {
    /// Desk-scale default: 5 coarse x 4 fine classes, 4-way 5-shot with 15
    /// queries over 5 incremental sessions.
    fn default() -> Self {
        Self {
            schema_version: 1,
            hierarchy: HierarchySpec::default(),
            protocol: ProtocolParams {
                way: 4,
                shot: 5,
                query: 15,
                sessions: 5,
            },
            curvature: CurvatureSetting::Auto,
            hyperbolic: true,
            augment: true,
            tau: default_tau(),
            lambda: default_lambda(),
            base_lr: default_base_lr(),
            incremental_lr: default_incremental_lr(),
            base_epochs: default_base_epochs(),
            incremental_epochs: default_incremental_epochs(),
            encoder_dim: default_encoder_dim(),
            batch_size: default_batch_size(),
            view_noise: default_view_noise(),
            augment_count: default_augment_count(),
            seed: 0,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |field: &'static str, reason: String| {
            Err(ExperimentError::InvalidConfig { field, reason })
        };
        if self.schema_version != 1 {
            return bad(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            );
        }
        self.hierarchy.validate()?;
        for (field, value) in [
            ("tau", self.tau),
            ("lambda", self.lambda),
            ("base_lr", self.base_lr),
            ("incremental_lr", self.incremental_lr),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return bad(field, format!("must be positive, got {value}"));
            }
        }
        if !(self.view_noise >= 0.0) || !self.view_noise.is_finite() {
            return bad(
                "view_noise",
                format!("must be non-negative, got {}", self.view_noise),
            );
        }
        if self.base_epochs == 0 || self.incremental_epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.encoder_dim == 0 {
            return bad("encoder_dim", "must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2".into());
        }
        if let CurvatureSetting::Fixed(c) = self.curvature {
            if !(c > 0.0) || !c.is_finite() {
                return bad("curvature", format!("must be positive, got {c}"));
            }
        }
        let n_fine = self.hierarchy.n_fine();
        if self.protocol.way == 0 || self.protocol.way > n_fine {
            return bad("protocol.way", format!("must be in 1..={n_fine}"));
        }
        let expected_sessions = n_fine.div_ceil(self.protocol.way);
        if self.protocol.sessions != expected_sessions {
            return bad(
                "protocol.sessions",
                format!(
                    "inconsistent with hierarchy: {} fine classes at {}-way need {} sessions, got {}",
                    n_fine, self.protocol.way, expected_sessions, self.protocol.sessions
                ),
            );
        }
        if self.protocol.shot + self.protocol.query > self.hierarchy.samples_per_fine {
            return bad(
                "protocol",
                format!(
                    "shot + query = {} exceeds samples_per_fine = {}",
                    self.protocol.shot + self.protocol.query,
                    self.hierarchy.samples_per_fine
                ),
            );
        }
        Ok(())
    }

    /// Effective curvature: the flat-limit constant in ablation mode,
    /// otherwise the configured or auto-derived value.
    pub fn effective_curvature(&self) -> Result<f64, ExperimentError> {
        if !self.hyperbolic {
            return Ok(1e-8);
        }
        Ok(match self.curvature {
            CurvatureSetting::Auto => default_curvature(self.encoder_dim)?,
            CurvatureSetting::Fixed(c) => c,
        })
    }
}

/// Run the full protocol described by `config` and return its history.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunHistory, ExperimentError> {
    run_experiment_observed(config, &mut |_, _| {})
}

/// [`run_experiment`] with a hook called after every session, receiving the
/// session index and the classifier state at that point. Used by the
/// verification suites to watch the freeze discipline during a real run.
pub fn run_experiment_observed(
    config: &ExperimentConfig,
    observer: &mut dyn FnMut(usize, &crate::c2f::ClassifierState),
) -> Result<RunHistory, ExperimentError> {
    config.validate()?;
    let hierarchy = &config.hierarchy;
    let n_coarse = hierarchy.n_coarse;
    let n_fine = hierarchy.n_fine();
    let samples = generate_hierarchy(hierarchy)?;
    let schedule = schedule_sessions(
        n_fine,
        hierarchy.samples_per_fine,
        config.protocol.way,
        config.protocol.shot,
        config.protocol.query,
        derive_seed(config.seed, 0x5c4e_d01e),
    )?;

    let feature_config =
        BallConfig::with_default_eps(config.encoder_dim, config.effective_curvature()?)?;

    // query indices are held out of all training
    let mut is_query = vec![false; samples.len()];
    for per_session in &schedule.assignments {
        for a in per_session {
            for &q in &a.query {
                is_query[q] = true;
            }
        }
    }
    let base_train: Vec<(Array1<f64>, usize)> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| !is_query[*i])
        .map(|(_, s)| (s.input.clone(), s.coarse_label))
        .collect();
    let eval_raw: Vec<(usize, Array1<f64>, usize, usize)> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| is_query[*i])
        .map(|(i, s)| (i, s.input.clone(), s.coarse_label, s.fine_label))
        .collect();

    let base = train_base_session(
        &base_train,
        &eval_raw
            .iter()
            .map(|(_, x, coarse, _)| (x.clone(), *coarse))
            .collect::<Vec<_>>(),
        n_coarse,
        feature_config,
        &BaseHyper {
            lr: config.base_lr,
            epochs: config.base_epochs,
            batch_size: config.batch_size,
            tau: config.tau,
            softmax_temp: config.lambda,
            view_noise: config.view_noise,
            seed: derive_seed(config.seed, 0xb5e5),
        },
    )?;
    let pipeline = base.pipeline;
    let mut cls = base.classifier;

    // featurize the query pool once; the feature path is frozen
    let mut eval_features = Vec::with_capacity(eval_raw.len());
    for (_, x, coarse, fine) in &eval_raw {
        eval_features.push((pipeline.forward(x)?, *coarse, *fine));
    }

    // fine label -> learning slot
    let mut slot_of_fine = vec![usize::MAX; n_fine];
    for (slot, &fine) in schedule.class_order.iter().enumerate() {
        slot_of_fine[fine] = slot;
    }

    observer(0, &cls);

    let mut reports = vec![base.report.clone()];
    let mut cumulative = vec![0usize];
    let hyper = IncrementalHyper {
        lr: config.incremental_lr,
        epochs: config.incremental_epochs,
        augment_per_class: config.augment_count,
    };

    for (t, spec) in schedule.sessions.iter().enumerate().skip(1) {
        let assignments = &schedule.assignments[t - 1];
        let mut support = Vec::with_capacity(spec.way * spec.shot);
        for a in assignments {
            let column = n_coarse + slot_of_fine[a.fine_label];
            for &idx in &a.support {
                support.push((pipeline.forward(&samples[idx].input)?, column));
            }
        }
        train_incremental_session(
            spec,
            &support,
            &mut cls,
            n_coarse,
            config.augment,
            &hyper,
            derive_seed(config.seed, 0x1c00 + t as u64),
        )?;

        let learned_slots = spec.class_end;
        let items: Vec<EvalItem> = eval_features
            .iter()
            .map(|(feat, coarse, fine)| {
                let slot = slot_of_fine[*fine];
                EvalItem {
                    feature: feat.clone(),
                    coarse_label: *coarse,
                    fine_column: (slot < learned_slots).then_some(n_coarse + slot),
                }
            })
            .collect();
        reports.push(evaluate_session(&items, &cls, t, n_coarse)?);
        cumulative.push(learned_slots);
        observer(t, &cls);
    }

    Ok(RunHistory::from_reports(reports, cumulative, n_fine)?)
}

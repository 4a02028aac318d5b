//! JSON scenario configuration.
//!
//! A config is either a file path or `builtin:<name>` with name `paper` or
//! `paper-uncertain`. Matrices are written as arrays of rows; per-node
//! matrices (`h`, `q`, `r`, `e1`, `e2`) accept a single matrix shared by all
//! nodes or one matrix per node.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dynamics, ModelSpec, NetworkModel, UncertaintyMode};
use crate::tuner::{AlphaPolicy, LambdaPolicy, TunerConfig};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    Shared(Rows),
    Each(Vec<Rows>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// `π_ii = −0.3`, `π_ij = 0.1` for `i ≠ j`.
    PaperFull,
    Star,
    Ring,
    Chain,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Drea,
    Centralized,
    Ekf,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Drea => "drea",
            EstimatorKind::Centralized => "centralized",
            EstimatorKind::Ekf => "ekf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "drea" => Ok(EstimatorKind::Drea),
            "centralized" => Ok(EstimatorKind::Centralized),
            "ekf" => Ok(EstimatorKind::Ekf),
            other => Err(Error::Validation(format!(
                "unknown estimator `{other}` (expected drea, centralized or ekf)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsConfig {
    /// Sine dynamics with frequency 0.5.
    PaperSine,
    Sine { freq: f64 },
    Linear { a: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyConfig {
    Zero,
    RandomPerStep,
    Fixed { delta1: Vec<Rows>, delta2: Vec<Rows> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialEstimate {
    /// `x̂_{0,i} = x_{0,i} + scale·i·[δ_i, …, δ_i]` with `i` counted from 1
    /// and one standard normal `δ_i` per trial and node.
    Perturbed { scale: f64 },
    Exact,
    Fixed { values: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub coupling: f64,
    pub topology: Topology,
    /// Coupling strengths; required for `custom`, rejected otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Rows>,
    pub g: Rows,
    pub nominal: DynamicsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<DynamicsConfig>,
    pub h: PerNode,
    pub q: PerNode,
    pub r: PerNode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e1: Option<PerNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e2: Option<PerNode>,
    #[serde(default)]
    pub noiseless: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelConfig,
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub tuner: TunerConfig,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub x0: Rows,
    pub initial_estimate: InitialEstimate,
    /// `P̆_0 = breve_p0·I`.
    pub breve_p0: f64,
    /// Run even when the feasibility checks fail.
    #[serde(default)]
    pub allow_infeasible: bool,
    /// Record failed trials and continue instead of aborting the run.
    #[serde(default)]
    pub skip_failed_trials: bool,
}

/// Validated scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: NetworkModel,
    pub uncertainty: UncertaintyMode,
    pub x0: Vec<DVector<f64>>,
    pub breve_p0: DMatrix<f64>,
}

fn cfg_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn matrix(rows: &Rows, path: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(cfg_err(path, "rows have different lengths"));
    }
    let m = DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied());
    if !linalg::is_finite(&m) {
        return Err(cfg_err(path, "entries must be finite"));
    }
    Ok(m)
}

fn per_node(p: &PerNode, nodes: usize, path: &str) -> Result<Vec<DMatrix<f64>>> {
    match p {
        PerNode::Shared(rows) => {
            let m = matrix(rows, path)?;
            Ok(vec![m; nodes])
        }
        PerNode::Each(list) => {
            if list.len() != nodes {
                return Err(cfg_err(path, format!("expected {nodes} matrices, got {}", list.len())));
            }
            list.iter()
                .enumerate()
                .map(|(i, rows)| matrix(rows, &format!("{path}[{i}]")))
                .collect()
        }
    }
}

fn dynamics(d: &DynamicsConfig, path: &str) -> Result<Dynamics> {
    Ok(match d {
        DynamicsConfig::PaperSine => Dynamics::paper_sine(),
        DynamicsConfig::Sine { freq } => Dynamics::Sine { freq: *freq },
        DynamicsConfig::Linear { a } => Dynamics::Linear(matrix(a, &format!("{path}.a"))?),
    })
}

/// Coupling strengths of a preset. Presets other than `paper_full` are
/// defined for four nodes only.
pub fn preset_pi(topology: Topology, nodes: usize) -> Result<DMatrix<f64>> {
    let table: &[(usize, usize, f64)] = match topology {
        Topology::PaperFull => {
            return Ok(DMatrix::from_fn(nodes, nodes, |i, j| if i == j { -0.3 } else { 0.1 }));
        }
        Topology::Custom => return Err(cfg_err("model.pi", "custom topology needs an explicit pi")),
        Topology::Star => &[
            (1, 1, -0.1),
            (1, 2, 0.1),
            (2, 1, 0.1),
            (2, 2, -0.3),
            (2, 3, 0.1),
            (2, 4, 0.1),
            (3, 2, 0.1),
            (3, 3, -0.1),
            (4, 2, 0.1),
            (4, 4, -0.1),
        ],
        Topology::Ring => &[
            (1, 1, -0.2),
            (1, 2, 0.1),
            (1, 4, 0.1),
            (2, 1, 0.1),
            (2, 2, -0.1),
            (3, 2, 0.1),
            (3, 3, -0.2),
            (3, 4, 0.1),
            (4, 3, 0.1),
            (4, 4, -0.1),
        ],
        Topology::Chain => &[
            (2, 1, 0.1),
            (2, 2, -0.1),
            (3, 2, 0.1),
            (3, 3, -0.1),
            (4, 3, 0.1),
            (4, 4, -0.1),
        ],
    };
    if nodes != 4 {
        return Err(cfg_err(
            "model.topology",
            format!("preset {topology:?} is defined for 4 nodes, config has {nodes}"),
        ));
    }
    let mut pi = DMatrix::zeros(4, 4);
    for &(i, j, v) in table {
        pi[(i - 1, j - 1)] = v;
    }
    Ok(pi)
}

impl ScenarioConfig {
    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build(&self) -> Result<Scenario> {
        if self.horizon < 1 {
            return Err(cfg_err("horizon", "must be at least 1"));
        }
        if self.trials < 1 {
            return Err(cfg_err("trials", "must be at least 1"));
        }
        self.tuner.validate().map_err(|e| cfg_err("tuner", e.to_string()))?;
        let m = &self.model;
        let nodes = self.x0.len();
        if nodes == 0 {
            return Err(cfg_err("x0", "at least one node is required"));
        }
        let x0 = self
            .x0
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = DVector::from_vec(v.clone());
                if !linalg::is_finite_vec(&x) {
                    return Err(cfg_err(format!("x0[{i}]"), "entries must be finite"));
                }
                Ok(x)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = x0[0].len();
        if let Some(i) = x0.iter().position(|x| x.len() != n) {
            return Err(cfg_err(format!("x0[{i}]"), format!("expected {n} entries")));
        }
        let pi = match (m.topology, &m.pi) {
            (Topology::Custom, Some(rows)) => matrix(rows, "model.pi")?,
            (Topology::Custom, None) => return Err(cfg_err("model.pi", "custom topology needs an explicit pi")),
            (_, Some(_)) => return Err(cfg_err("model.pi", "pi is only accepted with the custom topology")),
            (t, None) => preset_pi(t, nodes)?,
        };
        if pi.shape() != (nodes, nodes) {
            return Err(cfg_err("model.pi", format!("expected {nodes}×{nodes}, got {:?}", pi.shape())));
        }
        let h = per_node(&m.h, nodes, "model.h")?;
        let q = per_node(&m.q, nodes, "model.q")?;
        let r = per_node(&m.r, nodes, "model.r")?;
        for (name, list) in [("model.q", &q), ("model.r", &r)] {
            for (i, mat) in list.iter().enumerate() {
                if !linalg::is_spd(mat) {
                    return Err(cfg_err(format!("{name}[{i}]"), "must be symmetric positive definite"));
                }
            }
        }
        let zeros = PerNode::Shared(vec![vec![0.0; n]; n]);
        let e1 = per_node(m.e1.as_ref().unwrap_or(&zeros), nodes, "model.e1")?;
        let e2 = per_node(m.e2.as_ref().unwrap_or(&zeros), nodes, "model.e2")?;
        let spec = ModelSpec {
            coupling: m.coupling,
            pi,
            g: matrix(&m.g, "model.g")?,
            nominal: dynamics(&m.nominal, "model.nominal")?,
            truth: m.truth.as_ref().map(|d| dynamics(d, "model.truth")).transpose()?,
            h,
            q,
            r,
            e1,
            e2,
            noiseless: m.noiseless,
        };
        let model = NetworkModel::new(spec).map_err(|e| cfg_err("model", e.to_string()))?;
        let uncertainty = match &self.uncertainty {
            UncertaintyConfig::Zero => UncertaintyMode::Zero,
            UncertaintyConfig::RandomPerStep => UncertaintyMode::RandomPerStep,
            UncertaintyConfig::Fixed { delta1, delta2 } => {
                let d1 = delta1
                    .iter()
                    .enumerate()
                    .map(|(i, rows)| matrix(rows, &format!("uncertainty.fixed.delta1[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                let d2 = delta2
                    .iter()
                    .enumerate()
                    .map(|(i, rows)| matrix(rows, &format!("uncertainty.fixed.delta2[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                crate::model::validate_fixed(&model, &d1, &d2)
                    .map_err(|e| cfg_err("uncertainty.fixed", e.to_string()))?;
                UncertaintyMode::Fixed { delta1: d1, delta2: d2 }
            }
        };
        match &self.initial_estimate {
            InitialEstimate::Perturbed { scale } if !scale.is_finite() => {
                return Err(cfg_err("initial_estimate.scale", "must be finite"));
            }
            InitialEstimate::Fixed { values } => {
                if values.len() != nodes || values.iter().any(|v| v.len() != n) {
                    return Err(cfg_err("initial_estimate.values", format!("expected {nodes} vectors of length {n}")));
                }
            }
            _ => {}
        }
        if !(self.breve_p0 > 0.0 && self.breve_p0.is_finite()) {
            return Err(cfg_err("breve_p0", "must be positive"));
        }
        Ok(Scenario {
            config: self.clone(),
            model,
            uncertainty,
            x0,
            breve_p0: DMatrix::identity(n, n) * self.breve_p0,
        })
    }
}

fn row(v: &[f64]) -> Rows {
    vec![v.to_vec()]
}

fn diag(n: usize, v: f64) -> Rows {
    (0..n).map(|i| (0..n).map(|j| if i == j { v } else { 0.0 }).collect()).collect()
}

/// The reference four-node network.
pub fn builtin_paper() -> ScenarioConfig {
    ScenarioConfig {
        name: "paper".into(),
        model: ModelConfig {
            coupling: 0.1,
            topology: Topology::PaperFull,
            pi: None,
            g: diag(2, 0.2),
            nominal: DynamicsConfig::PaperSine,
            truth: None,
            h: PerNode::Each(vec![
                row(&[0.90, 0.25]),
                row(&[0.95, 0.65]),
                row(&[0.90, 0.35]),
                row(&[0.85, 0.20]),
            ]),
            q: PerNode::Shared(diag(2, 0.001)),
            r: PerNode::Shared(vec![vec![0.01]]),
            e1: None,
            e2: None,
            noiseless: false,
        },
        uncertainty: UncertaintyConfig::Zero,
        estimator: EstimatorKind::Drea,
        tuner: TunerConfig {
            beta: 0.5,
            alpha_policy: AlphaPolicy::Fixed(0.1),
            lambda_policy: LambdaPolicy::Rule13,
            ..TunerConfig::default()
        },
        horizon: 100,
        trials: 200,
        seed: 2024,
        x0: vec![vec![2.0, -2.8], vec![2.5, -2.5], vec![2.5, -2.0], vec![2.0, -2.0]],
        initial_estimate: InitialEstimate::Perturbed { scale: 0.2 },
        breve_p0: 0.001,
        allow_infeasible: false,
        skip_failed_trials: false,
    }
}

/// The reference network with a perturbed true frequency (0.525) and
/// norm-bounded uncertainty `E1 = E2 = 0.05·I` with fresh `Δ` every step.
/// The `E` values are chosen here; the reference experiment does not give
/// them.
pub fn builtin_paper_uncertain() -> ScenarioConfig {
    let mut c = builtin_paper();
    c.name = "paper-uncertain".into();
    c.model.truth = Some(DynamicsConfig::Sine { freq: 0.525 });
    c.model.e1 = Some(PerNode::Shared(diag(2, 0.05)));
    c.model.e2 = Some(PerNode::Shared(diag(2, 0.05)));
    c.uncertainty = UncertaintyConfig::RandomPerStep;
    c
}

pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    match name {
        "paper" => Ok(builtin_paper()),
        "paper-uncertain" => Ok(builtin_paper_uncertain()),
        other => Err(cfg_err(
            "<builtin>",
            format!("unknown builtin `{other}` (expected paper or paper-uncertain)"),
        )),
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        cfg_err(path, e.into_inner().to_string())
    })
}

/// Loads `builtin:<name>` or a JSON file, then validates it.
pub fn load_config(spec: &str) -> Result<ScenarioConfig> {
    let cfg = if let Some(name) = spec.strip_prefix("builtin:") {
        builtin(name)?
    } else {
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config(&text)?
    };
    cfg.build()?;
    Ok(cfg)
}

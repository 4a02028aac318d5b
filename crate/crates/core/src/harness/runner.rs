//! Monte-Carlo driver.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{EstimatorKind, InitialEstimate, Scenario};
use super::rng::{substream, Purpose, ALL_NODES};
use crate::baselines::{augmented_ekf_step, centralized_step, EkfBelief};
use crate::comms::RoundBus;
use crate::error::{Error, Result};
use crate::estimator::{node_step, NodeBelief};
use crate::model::{measure, sample_uncertainty, step_truth, GlobalState};

/// Per-step record of one trial. Index `k` runs over `0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    /// `‖x̂_{k,i} − x_{k,i}‖²` as `sq_err[k][i]`.
    pub sq_err: Vec<Vec<f64>>,
    /// True states and estimates, filled when recording is requested.
    pub states: Vec<Vec<DVector<f64>>>,
    pub estimates: Vec<Vec<DVector<f64>>>,
    /// Approximate covariances of the distributed estimator (empty for the
    /// baselines or when not recording).
    pub covariances: Vec<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub scenario: String,
    pub estimator: String,
    pub config_hash: String,
    pub seed: u64,
    pub trials: usize,
    pub horizon: usize,
    pub wall_time_s: f64,
    pub timestamp_unix: u64,
    pub failed_trials: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct McResult {
    pub nodes: usize,
    /// `mse[k][i]`, averaged over the trials that completed.
    pub mse: Vec<Vec<f64>>,
    /// Per-trial squared errors (`per_trial[l][k][i]`), in trial order.
    pub per_trial: Vec<Vec<Vec<f64>>>,
    pub metadata: Metadata,
}

/// `−10·log₁₀(mse)`.
pub fn mse_db(mse: f64) -> f64 {
    -10.0 * mse.log10()
}

impl McResult {
    pub fn mse_db(&self, k: usize, i: usize) -> f64 {
        mse_db(self.mse[k][i])
    }

    /// Mean of `per_trial[l][k][i]` over `k ∈ [from, to]` for every trial.
    pub fn time_averaged(&self, i: usize, from: usize, to: usize) -> Vec<f64> {
        self.per_trial
            .iter()
            .map(|t| {
                let span = &t[from..=to.min(t.len() - 1)];
                span.iter().map(|row| row[i]).sum::<f64>() / span.len() as f64
            })
            .collect()
    }

    /// Like [`McResult::time_averaged`] but also averaged over nodes.
    pub fn time_averaged_range(&self, from: usize, to: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.per_trial.len()];
        for i in 0..self.nodes {
            for (a, v) in acc.iter_mut().zip(self.time_averaged(i, from, to)) {
                *a += v / self.nodes as f64;
            }
        }
        acc
    }
}

fn initial_estimates(sc: &Scenario, trial: usize) -> Vec<DVector<f64>> {
    let seed = sc.config.seed;
    match &sc.config.initial_estimate {
        InitialEstimate::Exact => sc.x0.clone(),
        InitialEstimate::Fixed { values } => values.iter().map(|v| DVector::from_vec(v.clone())).collect(),
        InitialEstimate::Perturbed { scale } => sc
            .x0
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = substream(seed, trial as u64, i as u64, 0, Purpose::InitialEstimate);
                let delta: f64 = rng.sample(StandardNormal);
                x.add_scalar(scale * (i + 1) as f64 * delta)
            })
            .collect(),
    }
}

enum Beliefs {
    Nodes(Vec<NodeBelief>),
    Stacked(EkfBelief),
}

impl Beliefs {
    fn estimate(&self, i: usize, n: usize) -> DVector<f64> {
        match self {
            Beliefs::Nodes(b) => b[i].x_hat.clone(),
            Beliefs::Stacked(s) => s.node_estimate(i, n),
        }
    }
}

/// Runs one trial of the scenario's estimator. Deterministic per
/// `(seed, trial)`.
pub fn run_trial(sc: &Scenario, kind: EstimatorKind, trial: usize, record: bool) -> Result<TrialTrace> {
    let model = &sc.model;
    let cfg = &sc.config;
    let (nodes, n) = (model.nodes(), model.dim());
    let seed = cfg.seed;
    let t = trial as u64;
    let x_hat0 = initial_estimates(sc, trial);
    let initial = (0..nodes)
        .map(|i| NodeBelief::initial(model, i, x_hat0[i].clone(), &sc.breve_p0, cfg.tuner.beta))
        .collect::<Result<Vec<_>>>()?;
    let mut beliefs = match kind {
        EstimatorKind::Ekf => Beliefs::Stacked(EkfBelief::from_nodes(&initial)),
        _ => Beliefs::Nodes(initial),
    };
    let bus = RoundBus::for_model(model, 0);
    let mut truth = GlobalState::new(sc.x0.clone());
    let mut trace = TrialTrace {
        sq_err: Vec::with_capacity(cfg.horizon + 1),
        states: Vec::new(),
        estimates: Vec::new(),
        covariances: Vec::new(),
    };
    let mut push = |truth: &GlobalState, beliefs: &Beliefs| {
        let est: Vec<_> = (0..nodes).map(|i| beliefs.estimate(i, n)).collect();
        trace
            .sq_err
            .push((0..nodes).map(|i| (&est[i] - &truth.x[i]).norm_squared()).collect());
        if record {
            trace.states.push(truth.x.clone());
            if let Beliefs::Nodes(b) = beliefs {
                if kind == EstimatorKind::Drea {
                    trace.covariances.push(b.iter().map(|b| b.p.clone()).collect());
                }
            }
            trace.estimates.push(est);
        }
    };
    push(&truth, &beliefs);

    for k in 0..cfg.horizon {
        let step = k as u64;
        let draw = sample_uncertainty(
            model,
            &sc.uncertainty,
            &mut substream(seed, t, ALL_NODES, step, Purpose::Uncertainty),
        )?;
        truth = step_truth(
            model,
            &truth,
            &draw,
            &mut substream(seed, t, ALL_NODES, step, Purpose::ProcessNoise),
        )?;
        let ys = (0..nodes)
            .map(|i| {
                measure(
                    model,
                    i,
                    &truth.x[i],
                    &mut substream(seed, t, i as u64, step, Purpose::MeasurementNoise),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        beliefs = match beliefs {
            Beliefs::Nodes(b) if kind == EstimatorKind::Drea => {
                for belief in &b {
                    bus.publish(belief.package()?)?;
                }
                let mut next = Vec::with_capacity(nodes);
                for (i, belief) in b.iter().enumerate() {
                    let pkgs = bus.collect(i)?;
                    next.push(node_step(belief, &pkgs, &ys[i], model, &cfg.tuner)?.0);
                }
                bus.advance_round()?;
                Beliefs::Nodes(next)
            }
            Beliefs::Nodes(b) => Beliefs::Nodes(centralized_step(&b, &ys, model, cfg.tuner.beta)?),
            Beliefs::Stacked(s) => Beliefs::Stacked(augmented_ekf_step(&s, &ys, model)?),
        };
        push(&truth, &beliefs);
    }
    Ok(trace)
}

/// Runs all trials in parallel and aggregates the MSE. Failed trials abort
/// the run unless `skip_failed_trials` is set.
pub fn run_monte_carlo(sc: &Scenario, kind: EstimatorKind) -> Result<McResult> {
    let cfg = &sc.config;
    let start = Instant::now();
    let outcomes: Vec<Result<TrialTrace>> = (0..cfg.trials)
        .into_par_iter()
        .map(|l| run_trial(sc, kind, l, false))
        .collect();
    let mut per_trial = Vec::with_capacity(cfg.trials);
    let mut failed = Vec::new();
    for (l, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(t) => per_trial.push(t.sq_err),
            Err(e) if cfg.skip_failed_trials => failed.push((l, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    if per_trial.is_empty() {
        return Err(Error::Validation("every trial failed".into()));
    }
    let nodes = sc.model.nodes();
    let steps = cfg.horizon + 1;
    let mut mse = vec![vec![0.0; nodes]; steps];
    for t in &per_trial {
        for (k, row) in t.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                mse[k][i] += v;
            }
        }
    }
    let count = per_trial.len() as f64;
    mse.iter_mut().flatten().for_each(|v| *v /= count);
    let timestamp_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    Ok(McResult {
        nodes,
        mse,
        per_trial,
        metadata: Metadata {
            scenario: cfg.name.clone(),
            estimator: kind.name().into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            trials: cfg.trials,
            horizon: cfg.horizon,
            wall_time_s: start.elapsed().as_secs_f64(),
            timestamp_unix,
            failed_trials: failed,
        },
    })
}

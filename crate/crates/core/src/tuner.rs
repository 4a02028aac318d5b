//! Per-node, per-step resolution of the regularization weight λ̄ and the
//! regulatory indicator α.
//!
//! At fixed λ̄ the upper-bound cost is a quadratic in α:
//!
//! ```text
//! Ĵ₂(λ̄, α) = α²(Φ² + ΣΦ³) − α(Φ¹ + 2Φ²) + Φ⁰ + Φ¹ + Φ²
//! Φ⁰ = λ̄‖x̂‖² − λ̄² cᵀ W⁻¹ c                 c = Ē_aᵀĒ_b = [−x̂; 0]
//! Φ¹ = −2λ̄ cᵀ W⁻¹ Āᵀ T̂ b                  W = Ŝ + Āᵀ T̂ Ā
//! Φ² = bᵀ (T̂⁻¹ + Ā Ŝ⁻¹ Āᵀ)⁻¹ b
//! Φ³_j = bᵀ (Z_j⁻¹ + H G P_j Gᵀ Hᵀ)⁻¹ b / (Σπ)²
//! ```
//!
//! with `Ā = H[F̃, I]`, `Ŝ = diag(P⁻¹ + 2λ̄I, Q⁻¹)` and `T̂ = R̂⁻¹`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::comms::InfoPackage;
use crate::error::{Error, Result};
use crate::estimator::{self, NodeBelief, ALPHA_CLAMP, MAX_ESCALATIONS, R_HAT_MARGIN};
use crate::linalg;
use crate::model::NetworkModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPolicy {
    Fixed(f64),
    ClosedForm,
    JointOpt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// `λ̄ = (1+β)·λ̆`.
    Rule13,
    JointOpt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunerConfig {
    pub beta: f64,
    pub alpha_policy: AlphaPolicy,
    pub lambda_policy: LambdaPolicy,
    /// Log-spaced λ̄ grid points over `[λ_min, 64·λ_min]`.
    pub lambda_grid: usize,
    /// α grid points over `[0, 1]`.
    pub alpha_grid: usize,
    /// Golden-section iterations of the λ̄ refinement.
    pub max_iter: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            alpha_policy: AlphaPolicy::Fixed(0.1),
            lambda_policy: LambdaPolicy::Rule13,
            lambda_grid: 25,
            alpha_grid: 101,
            max_iter: 40,
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Validation(format!("beta must be positive, got {}", self.beta)));
        }
        if let AlphaPolicy::Fixed(a) = self.alpha_policy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Validation(format!("fixed alpha must lie in [0, 1], got {a}")));
            }
        }
        if self.lambda_grid < 2 || self.alpha_grid < 2 {
            return Err(Error::Validation("tuner grids need at least 2 points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiTerms {
    pub phi0: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub phi3_sum: f64,
    /// Per-neighbor `bᵀ(Z⁻¹ + HGP_jGᵀHᵀ)⁻¹b` before the `(Σπ)²` division.
    pub phi3_raw: Vec<(usize, f64)>,
}

impl PhiTerms {
    /// `α²(Φ² + ΣΦ³) − α(Φ¹ + 2Φ²) + Φ⁰ + Φ¹ + Φ²`.
    pub fn quadratic(&self, alpha: f64) -> f64 {
        alpha * alpha * (self.phi2 + self.phi3_sum) - alpha * (self.phi1 + 2.0 * self.phi2)
            + self.phi0
            + self.phi1
            + self.phi2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TunerResult {
    pub lambda_bar: f64,
    pub alpha: f64,
    /// Ĵ₂ at the returned pair, when it was evaluated.
    pub j2: Option<f64>,
    /// λ̄ had to be raised to make `R̂` positive definite.
    pub escalated: bool,
    /// Closed-form α hit a zero denominator and fell back to 0.
    pub fallback: bool,
}

impl TunerResult {
    pub fn fixed(lambda_bar: f64, alpha: f64) -> Self {
        Self {
            lambda_bar,
            alpha,
            j2: None,
            escalated: false,
            fallback: false,
        }
    }
}

/// `λ̆ = (1+a)⁻¹‖Eᵀ Hᵀ R⁻¹ H E‖₂`.
pub fn breve_lambda(model: &NetworkModel, i: usize) -> Result<f64> {
    Ok(estimator::uncertainty_gain(model, i)? / (1.0 + model.coupling()))
}

pub fn rule13_lambda(model: &NetworkModel, i: usize, beta: f64) -> Result<f64> {
    Ok((1.0 + beta) * breve_lambda(model, i)?)
}

/// Smallest λ̄ for which `R̂ − εI ⪰ 0` is certified; 0 when `H E = 0`.
pub fn lambda_min(model: &NetworkModel, i: usize) -> Result<f64> {
    let m = model.h(i) * model.e(i);
    if linalg::max_abs(&m) == 0.0 {
        return Ok(0.0);
    }
    let r = model.r(i);
    let eps = R_HAT_MARGIN * linalg::spectral_norm(r);
    let base = r / (1.0 + model.coupling()) - DMatrix::identity(r.nrows(), r.ncols()) * eps;
    let base_inv = linalg::spd_inverse(&base, "lambda_min: (1+a)⁻¹R − εI")?;
    let mut lambda = linalg::spectral_norm(&(m.transpose() * base_inv * &m)) * (1.0 + 1e-9);
    for _ in 0..MAX_ESCALATIONS {
        if estimator::r_hat_certified(model, i, &estimator::r_hat_at(model, i, lambda)) {
            return Ok(lambda);
        }
        lambda *= 1.0 + 1e-6;
    }
    Err(Error::InfeasibleRobustification { node: i, lambda })
}

struct NeighborTerm {
    j: usize,
    p_inv: DMatrix<f64>,
    z: DMatrix<f64>,
    /// `(P_j⁻¹ + GᵀHᵀZHG)⁻¹ GᵀHᵀZ b`; `e_ij = α̂·e_dir`.
    e_dir: DVector<f64>,
    phi3_raw: f64,
}

/// Everything of one node step that the tuner needs, independent of
/// `(λ̄, α)`.
pub struct TuningProblem<'a> {
    model: &'a NetworkModel,
    i: usize,
    x_hat: DVector<f64>,
    p_inv: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    a_bar: DMatrix<f64>,
    b: DVector<f64>,
    neighbors: Vec<NeighborTerm>,
    pi_sum: f64,
}

impl<'a> TuningProblem<'a> {
    /// `f` is the Jacobian at `x̂_i`; `b = y − H x̄` the innovation.
    pub fn new(
        model: &'a NetworkModel,
        belief: &NodeBelief,
        neighbors: &[Arc<InfoPackage>],
        f: &DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        let i = belief.node;
        let n = model.dim();
        let h = model.h(i);
        let ft = model.shifted_jacobian(i, f);
        let a_bar = h * linalg::hcat(&[&ft, &DMatrix::identity(n, n)]);
        let hg = h * model.g();
        let mut terms = Vec::new();
        for &j in model.coupled_neighbors(i) {
            let p_j = &estimator::package_from(neighbors, j)?.p;
            let p_inv = linalg::spd_inverse(p_j, "P_j⁻¹")?;
            let z = estimator::z_matrix(model, i, j)?;
            let m = linalg::symmetrize(&(&p_inv + hg.transpose() * &z * &hg));
            let m_inv = linalg::spd_inverse(&m, "P_j⁻¹ + GᵀHᵀZHG")?;
            let e_dir = &m_inv * hg.transpose() * &z * &b;
            // (Z⁻¹ + U)⁻¹ = (I + Z U)⁻¹ Z, valid for singular Z.
            let u = &hg * p_j * hg.transpose();
            let inner = DMatrix::identity(z.nrows(), z.nrows()) + &z * u;
            let w = linalg::inverse(&inner, "I + Z H G P_j Gᵀ Hᵀ")? * &z;
            let phi3_raw = linalg::quad(&b, &w);
            terms.push(NeighborTerm {
                j,
                p_inv,
                z,
                e_dir,
                phi3_raw,
            });
        }
        Ok(Self {
            model,
            i,
            x_hat: belief.x_hat.clone(),
            p_inv: linalg::spd_inverse(&belief.p, "P⁻¹")?,
            q_inv: linalg::spd_inverse(model.q(i), "Q⁻¹")?,
            a_bar,
            b,
            neighbors: terms,
            pi_sum: model.neighbor_pi_sum(i),
        })
    }

    pub fn node(&self) -> usize {
        self.i
    }

    pub fn isolated(&self) -> bool {
        self.neighbors.is_empty()
    }

    fn s_hat(&self, lambda_bar: f64) -> DMatrix<f64> {
        let n = self.model.dim();
        linalg::block_diag(&[
            &self.p_inv + DMatrix::identity(n, n) * (2.0 * lambda_bar),
            self.q_inv.clone(),
        ])
    }

    fn c_vec(&self) -> DVector<f64> {
        let n = self.model.dim();
        let mut c = DVector::zeros(2 * n);
        c.rows_mut(0, n).copy_from(&(-&self.x_hat));
        c
    }

    fn feasible_r_hat(&self, lambda_bar: f64) -> Option<DMatrix<f64>> {
        if !(lambda_bar >= 0.0) || !lambda_bar.is_finite() {
            return None;
        }
        let r_hat = estimator::r_hat_at(self.model, self.i, lambda_bar);
        estimator::r_hat_certified(self.model, self.i, &r_hat).then_some(r_hat)
    }

    pub fn phi_terms(&self, lambda_bar: f64) -> Result<PhiTerms> {
        let r_hat = self.feasible_r_hat(lambda_bar).ok_or_else(|| Error::InfeasibleLambda {
            lambda: lambda_bar,
            reason: "R̂ is not positive definite".into(),
        })?;
        let t_hat = linalg::spd_inverse(&r_hat, "T̂ = R̂⁻¹")?;
        let s_hat = self.s_hat(lambda_bar);
        let s_inv = linalg::spd_inverse(&s_hat, "Ŝ⁻¹")?;
        let w = linalg::symmetrize(&(&s_hat + self.a_bar.transpose() * &t_hat * &self.a_bar));
        let w_inv = linalg::spd_inverse(&w, "Ŝ + ĀᵀT̂Ā")?;
        let c = self.c_vec();
        let phi0 = lambda_bar * self.x_hat.norm_squared() - lambda_bar * lambda_bar * linalg::quad(&c, &w_inv);
        let phi1 = -2.0 * lambda_bar * (c.transpose() * &w_inv * self.a_bar.transpose() * &t_hat * &self.b)[(0, 0)];
        let inner = linalg::symmetrize(&(&r_hat + &self.a_bar * s_inv * self.a_bar.transpose()));
        let phi2 = linalg::quad(&self.b, &linalg::spd_inverse(&inner, "T̂⁻¹ + ĀŜ⁻¹Āᵀ")?);
        let phi3_raw: Vec<_> = self.neighbors.iter().map(|t| (t.j, t.phi3_raw)).collect();
        let phi3_sum = if self.pi_sum != 0.0 {
            phi3_raw.iter().map(|(_, v)| v).sum::<f64>() / (self.pi_sum * self.pi_sum)
        } else {
            0.0
        };
        Ok(PhiTerms {
            phi0,
            phi1,
            phi2,
            phi3_sum,
            phi3_raw,
        })
    }

    /// Ĵ₂ at the optimal `η̄` and `e_ij`; `+∞` when λ̄ is infeasible.
    pub fn j2_hat(&self, lambda_bar: f64, alpha: f64) -> f64 {
        self.j2_direct(lambda_bar, alpha).unwrap_or(f64::INFINITY)
    }

    fn j2_direct(&self, lambda_bar: f64, alpha: f64) -> Option<f64> {
        let r_hat = self.feasible_r_hat(lambda_bar)?;
        let t_hat = linalg::spd_inverse(&r_hat, "T̂").ok()?;
        let s_hat = self.s_hat(lambda_bar);
        let w = linalg::symmetrize(&(&s_hat + self.a_bar.transpose() * &t_hat * &self.a_bar));
        let w_inv = linalg::spd_inverse(&w, "W").ok()?;
        let c = self.c_vec();
        let rhs = self.a_bar.transpose() * &t_hat * &self.b * (1.0 - alpha) + &c * lambda_bar;
        let eta = w_inv * rhs;
        let resid = &self.a_bar * &eta - &self.b * (1.0 - alpha);
        let mut j = lambda_bar * self.x_hat.norm_squared() + linalg::quad(&eta, &s_hat)
            - 2.0 * lambda_bar * c.dot(&eta)
            + linalg::quad(&resid, &t_hat);
        if !self.neighbors.is_empty() {
            let alpha_hat = alpha / self.pi_sum;
            let hg = self.model.h(self.i) * self.model.g();
            for t in &self.neighbors {
                let e = &t.e_dir * alpha_hat;
                let r = &hg * &e - &self.b * alpha_hat;
                j += linalg::quad(&e, &t.p_inv) + linalg::quad(&r, &t.z);
            }
        }
        j.is_finite().then_some(j)
    }
}

/// Closed-form minimizer of the α-quadratic clamped to `[0, 1]`. Returns
/// `(α, fallback)`; a zero denominator falls back to α = 0.
pub fn alpha_closed_form(phi: &PhiTerms) -> (f64, bool) {
    let den = 2.0 * phi.phi2 + 2.0 * phi.phi3_sum;
    let num = phi.phi1 + 2.0 * phi.phi2;
    if den == 0.0 || !den.is_finite() || !num.is_finite() {
        return (0.0, true);
    }
    ((num / den).clamp(0.0, 1.0), false)
}

/// Best α at fixed λ̄ among the closed form and the interval ends.
fn best_alpha(phi: &PhiTerms) -> (f64, bool) {
    let (closed, fallback) = alpha_closed_form(phi);
    let mut best = closed;
    for cand in [0.0, 1.0] {
        if phi.quadratic(cand) < phi.quadratic(best) {
            best = cand;
        }
    }
    (best, fallback)
}

fn clamp_alpha(problem: &TuningProblem, alpha: f64) -> f64 {
    if problem.isolated() {
        0.0
    } else if alpha >= 1.0 {
        ALPHA_CLAMP
    } else {
        alpha
    }
}

/// Rule-13 λ̄, doubled until `R̂` is certified. Returns `(λ̄, escalated)`.
fn rule13_feasible(problem: &TuningProblem, beta: f64) -> Result<(f64, bool)> {
    let lambda = rule13_lambda(problem.model, problem.i, beta)?;
    let rob = estimator::robustify_noise(problem.model, problem.i, lambda)?;
    Ok((rob.lambda_bar, rob.escalations > 0 || rob.lambda_bar != lambda))
}

/// Applies the configured policies.
pub fn resolve(problem: &TuningProblem, config: &TunerConfig) -> Result<TunerResult> {
    let alpha_policy = if problem.isolated() {
        AlphaPolicy::Fixed(0.0)
    } else {
        config.alpha_policy
    };
    let mut out = match (config.lambda_policy, alpha_policy) {
        (LambdaPolicy::Rule13, AlphaPolicy::Fixed(a)) => {
            let (lambda, escalated) = rule13_feasible(problem, config.beta)?;
            TunerResult {
                escalated,
                ..TunerResult::fixed(lambda, a)
            }
        }
        (LambdaPolicy::Rule13, AlphaPolicy::ClosedForm) => {
            let (lambda, escalated) = rule13_feasible(problem, config.beta)?;
            let phi = problem.phi_terms(lambda)?;
            let (alpha, fallback) = alpha_closed_form(&phi);
            TunerResult {
                lambda_bar: lambda,
                alpha,
                j2: Some(phi.quadratic(alpha)),
                escalated,
                fallback,
            }
        }
        _ => {
            let cfg = TunerConfig {
                alpha_policy,
                ..config.clone()
            };
            joint_optimize(problem, &cfg)?
        }
    };
    out.alpha = clamp_alpha(problem, out.alpha);
    Ok(out)
}

/// Grid search over `λ̄ ∈ [λ_min, 64·λ_min]` (log-spaced) and α, followed by
/// a golden-section refinement of λ̄ with α re-optimized in closed form at
/// every probe. A fixed α policy is honored; the rule-13 λ̄ is always a
/// candidate when feasible.
pub fn joint_optimize(problem: &TuningProblem, config: &TunerConfig) -> Result<TunerResult> {
    config.validate()?;
    let alpha_fixed = match config.alpha_policy {
        _ if problem.isolated() => Some(0.0),
        AlphaPolicy::Fixed(a) => Some(a),
        _ => None,
    };
    let (rule13, rule13_escalated) = rule13_feasible(problem, config.beta)?;
    let lambda_free = config.lambda_policy == LambdaPolicy::JointOpt;
    let lmin = if lambda_free { lambda_min(problem.model, problem.i)? } else { rule13 };
    let span = 64.0_f64.ln();

    let mut lambdas = vec![rule13];
    if lambda_free && lmin > 0.0 {
        let m = config.lambda_grid;
        lambdas.extend((0..m).map(|k| lmin * (span * k as f64 / (m - 1) as f64).exp()));
    } else if lambda_free {
        lambdas.push(0.0);
    }

    // Returns (J, α, fallback) for the best α at this λ̄.
    let eval = |lambda: f64| -> Option<(f64, f64, bool)> {
        let phi = problem.phi_terms(lambda).ok()?;
        match alpha_fixed {
            Some(a) => Some((phi.quadratic(a), a, false)),
            None => {
                let (mut alpha, fallback) = best_alpha(&phi);
                let mut best = phi.quadratic(alpha);
                let m = config.alpha_grid;
                for k in 0..m {
                    let a = k as f64 / (m - 1) as f64;
                    let v = phi.quadratic(a);
                    if v < best {
                        best = v;
                        alpha = a;
                    }
                }
                Some((best, alpha, fallback))
            }
        }
    };

    let mut best: Option<(f64, f64, f64, bool)> = None;
    for &lambda in &lambdas {
        if let Some((j, a, fb)) = eval(lambda) {
            if best.map_or(true, |b| j < b.0) {
                best = Some((j, lambda, a, fb));
            }
        }
    }
    let (j_best, mut lambda_best, mut alpha_best, mut fallback) = best.ok_or(Error::InfeasibleRobustification {
        node: problem.i,
        lambda: lmin,
    })?;

    if lambda_free && lmin > 0.0 {
        let step = span / (config.lambda_grid - 1) as f64;
        let lo_bound = lmin.ln();
        let hi_bound = lo_bound + span;
        let center = lambda_best.ln();
        let (mut lo, mut hi) = ((center - step).max(lo_bound), (center + step).min(hi_bound));
        let g = |t: f64| eval(t.exp()).map_or(f64::INFINITY, |v| v.0);
        let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - ratio * (hi - lo);
        let mut x2 = lo + ratio * (hi - lo);
        let (mut g1, mut g2) = (g(x1), g(x2));
        for _ in 0..config.max_iter {
            if g1 <= g2 {
                hi = x2;
                x2 = x1;
                g2 = g1;
                x1 = hi - ratio * (hi - lo);
                g1 = g(x1);
            } else {
                lo = x1;
                x1 = x2;
                g1 = g2;
                x2 = lo + ratio * (hi - lo);
                g2 = g(x2);
            }
        }
        let t = if g1 <= g2 { x1 } else { x2 };
        if let Some((j, a, fb)) = eval(t.exp()) {
            if j < j_best {
                lambda_best = t.exp();
                alpha_best = a;
                fallback = fb;
            }
        }
    }

    let alpha = clamp_alpha(problem, alpha_best);
    Ok(TunerResult {
        lambda_bar: lambda_best,
        alpha,
        j2: Some(problem.j2_hat(lambda_best, alpha)),
        escalated: lambda_best == rule13 && rule13_escalated,
        fallback,
    })
}

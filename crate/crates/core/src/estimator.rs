//! Per-node distributed robust estimator.
//!
//! One step of node `i` consumes its own belief `(x̂_{k,i}, P_{k,i})`, the
//! packages of its neighbors and the fresh measurement `y_{k+1,i}`, and
//! produces `(x̂_{k+1,i}, P_{k+1,i})`:
//!
//! ```text
//! F̃      = ∂f̂/∂x(x̂_i) + a π_ii G
//! P̆      = F̃ P_i F̃ᵀ + Q_i
//! R̂      = (1+a)⁻¹ R_i − λ̄⁻¹ H_i E_i E_iᵀ H_iᵀ
//! Z_ij   = π_ij² (a+a²)(N−1) R_i⁻¹
//! K1     = (P̆⁻¹ + Hᵀ R̂⁻¹ H + 2λ̄ I)⁻¹ Hᵀ R̂⁻¹
//! K2_ij  = a π_ij G (P_j⁻¹ + Gᵀ Hᵀ Z_ij H G)⁻¹ Gᵀ Hᵀ Z_ij
//! P⁺     = (1+a)(P̆⁻¹ + Hᵀ R̂⁻¹ H + 2λ̄ I)⁻¹
//!          + (a+a²)(N−1) Σ_{j≠i} π_ij² G (P_j⁻¹ + Gᵀ Hᵀ Z_ij H G)⁻¹ Gᵀ
//! x̄      = f̂(x̂_i) + a Σ_j π_ij G x̂_j
//! x̄ᵘ     = x̄ − λ̄ F̃ P_i x̂_i / (1 − α)
//! x̂⁺     = (1−α)(x̄ᵘ + K1 (y − H x̄ᵘ)) + α x̄ + Σ_{j≠i} α K2_ij (y − H x̄) / Σ_{j≠i} π_ij
//! ```
//!
//! `P` is a design matrix of the recursion, not the error covariance of the
//! estimate; nothing here claims `E[eeᵀ] = P`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::comms::InfoPackage;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{eval_jacobian_f, eval_nominal_f, NetworkModel};
use crate::tuner::{self, TunerConfig, TunerResult, TuningProblem};

/// α used when tuning lands on exactly 1 with neighbors present.
pub const ALPHA_CLAMP: f64 = 1.0 - 1e-6;

/// Maximum number of λ̄ doublings while enforcing `R̂ ≻ 0`.
pub const MAX_ESCALATIONS: u32 = 60;

/// Relative margin `ε = 1e-10·‖R‖₂` required of `R̂ − εI`.
pub const R_HAT_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeBelief {
    pub node: usize,
    pub k: usize,
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl NodeBelief {
    /// Initial belief: `P_0 = (P̆_0⁻¹ + Hᵀ R̂_0⁻¹ H)⁻¹` with `R̂_0` evaluated at
    /// `λ̄_0 = (1+β)‖Eᵀ Hᵀ R⁻¹ H E‖₂` (escalated if needed).
    pub fn initial(
        model: &NetworkModel,
        i: usize,
        x_hat: DVector<f64>,
        breve_p0: &DMatrix<f64>,
        beta: f64,
    ) -> Result<Self> {
        if x_hat.len() != model.dim() {
            return Err(Error::dim("initial estimate", model.dim(), x_hat.len()));
        }
        let lambda0 = (1.0 + beta) * uncertainty_gain(model, i)?;
        let rob = robustify_noise(model, i, lambda0)?;
        let h = model.h(i);
        let t_hat = linalg::spd_inverse(&rob.r_hat, "initial R̂⁻¹")?;
        let info = linalg::spd_inverse(breve_p0, "initial P̆⁻¹")? + h.transpose() * t_hat * h;
        let p = linalg::spd_inverse(&linalg::symmetrize(&info), "initial P")?;
        Ok(Self {
            node: i,
            k: 0,
            x_hat,
            p,
        })
    }

    pub fn package(&self) -> Result<InfoPackage> {
        InfoPackage::new(self.node, self.k, self.x_hat.clone(), self.p.clone())
    }
}

/// `‖Eᵀ Hᵀ R⁻¹ H E‖₂` for node `i`.
pub fn uncertainty_gain(model: &NetworkModel, i: usize) -> Result<f64> {
    let m = model.h(i) * model.e(i);
    if linalg::max_abs(&m) == 0.0 {
        return Ok(0.0);
    }
    let r_inv = linalg::spd_inverse(model.r(i), "R⁻¹")?;
    Ok(linalg::spectral_norm(&(m.transpose() * r_inv * m)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepIntermediates {
    pub x_bar: DVector<f64>,
    pub x_bar_u: DVector<f64>,
    pub breve_p: DMatrix<f64>,
    pub r_hat: DMatrix<f64>,
    /// `Z_ij` for each coupled neighbor `j ≠ i`.
    pub z: Vec<(usize, DMatrix<f64>)>,
    pub k1: DMatrix<f64>,
    pub k2: Vec<(usize, DMatrix<f64>)>,
    pub b: DVector<f64>,
    pub b_u: DVector<f64>,
    pub f: DMatrix<f64>,
    pub tuner: TunerResult,
}

/// Output of [`robustify_noise`].
#[derive(Debug, Clone, PartialEq)]
pub struct Robustified {
    pub r_hat: DMatrix<f64>,
    pub z: Vec<(usize, DMatrix<f64>)>,
    /// λ̄ actually used (≥ the requested one).
    pub lambda_bar: f64,
    pub escalations: u32,
}

/// `(1+a)⁻¹ R − λ̄⁻¹ H E Eᵀ Hᵀ`; the λ̄⁻¹ term is dropped when `H E = 0`.
pub fn r_hat_at(model: &NetworkModel, i: usize, lambda_bar: f64) -> DMatrix<f64> {
    let a = model.coupling();
    let base = model.r(i) / (1.0 + a);
    let m = model.h(i) * model.e(i);
    if linalg::max_abs(&m) == 0.0 {
        return base;
    }
    if lambda_bar <= 0.0 {
        return DMatrix::from_element(base.nrows(), base.ncols(), f64::NAN);
    }
    linalg::symmetrize(&(base - &m * m.transpose() / lambda_bar))
}

/// `R̂ − εI ⪰ 0` certification with `ε = 1e-10·‖R‖₂`.
pub fn r_hat_certified(model: &NetworkModel, i: usize, r_hat: &DMatrix<f64>) -> bool {
    if !linalg::is_finite(r_hat) {
        return false;
    }
    let eps = R_HAT_MARGIN * linalg::spectral_norm(model.r(i));
    let shifted = r_hat - DMatrix::identity(r_hat.nrows(), r_hat.ncols()) * eps;
    shifted.cholesky().is_some()
}

/// `Z_ij = π_ij² (a+a²)(N−1) R_i⁻¹`.
pub fn z_matrix(model: &NetworkModel, i: usize, j: usize) -> Result<DMatrix<f64>> {
    let a = model.coupling();
    let pij = model.pi_ij(i, j);
    let scale = pij * pij * (a + a * a) * (model.nodes() as f64 - 1.0);
    Ok(linalg::spd_inverse(model.r(i), "R⁻¹")? * scale)
}

/// Robustified measurement covariance and neighbor weights. When `R̂` is not
/// positive definite at the requested λ̄, λ̄ is doubled until it is.
pub fn robustify_noise(model: &NetworkModel, i: usize, lambda_bar: f64) -> Result<Robustified> {
    let m = model.h(i) * model.e(i);
    let uncertain = linalg::max_abs(&m) != 0.0;
    let mut lambda = lambda_bar.max(0.0);
    if uncertain && lambda == 0.0 {
        // Doubling from zero goes nowhere; start at the PD boundary.
        lambda = (1.0 + model.coupling()) * uncertainty_gain(model, i)?;
    }
    let mut escalations = 0;
    let mut r_hat = r_hat_at(model, i, lambda);
    while !r_hat_certified(model, i, &r_hat) {
        if escalations >= MAX_ESCALATIONS {
            return Err(Error::InfeasibleRobustification { node: i, lambda });
        }
        lambda *= 2.0;
        escalations += 1;
        r_hat = r_hat_at(model, i, lambda);
    }
    let z = model
        .coupled_neighbors(i)
        .iter()
        .map(|&j| z_matrix(model, i, j).map(|z| (j, z)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Robustified {
        r_hat,
        z,
        lambda_bar: if uncertain { lambda } else { lambda_bar.max(0.0) },
        escalations,
    })
}

/// Looks up the package sent by `j`.
pub fn package_from<'a>(neighbors: &'a [Arc<InfoPackage>], j: usize) -> Result<&'a InfoPackage> {
    neighbors
        .iter()
        .map(|p| p.as_ref())
        .find(|p| p.sender == j)
        .ok_or_else(|| Error::Protocol(format!("missing package from neighbor {j}")))
}

fn check_round(belief: &NodeBelief, neighbors: &[Arc<InfoPackage>]) -> Result<()> {
    if let Some(p) = neighbors.iter().find(|p| p.k != belief.k) {
        return Err(Error::RoundMismatch {
            expected: belief.k,
            got: p.k,
        });
    }
    Ok(())
}

/// `x̄ = f̂(x̂_i) + a Σ_j π_ij G x̂_j`.
pub fn priori_estimate(
    belief: &NodeBelief,
    neighbors: &[Arc<InfoPackage>],
    model: &NetworkModel,
) -> Result<DVector<f64>> {
    let i = belief.node;
    let mut coupled = belief.x_hat.clone() * model.pi_ij(i, i);
    for &j in model.coupled_neighbors(i) {
        coupled += &package_from(neighbors, j)?.x_hat * model.pi_ij(i, j);
    }
    Ok(eval_nominal_f(model, &belief.x_hat)? + model.g() * coupled * model.coupling())
}

/// Priori estimates `(x̄, x̄ᵘ, F)`.
pub fn predict(
    belief: &NodeBelief,
    neighbors: &[Arc<InfoPackage>],
    model: &NetworkModel,
    lambda_bar: f64,
    alpha: f64,
) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    let i = belief.node;
    let f = eval_jacobian_f(model, &belief.x_hat)?;
    let x_bar = priori_estimate(belief, neighbors, model)?;
    if lambda_bar == 0.0 {
        return Ok((x_bar.clone(), x_bar, f));
    }
    if alpha >= 1.0 {
        return Err(Error::DegenerateAlpha { node: i });
    }
    let shift = model.shifted_jacobian(i, &f) * (&belief.p * &belief.x_hat) * (lambda_bar / (1.0 - alpha));
    let x_bar_u = &x_bar - shift;
    Ok((x_bar, x_bar_u, f))
}

/// `P̆ = (F + aπ_ii G) P (F + aπ_ii G)ᵀ + Q_i`.
pub fn propagate_priori_cov(p: &DMatrix<f64>, f: &DMatrix<f64>, model: &NetworkModel, i: usize) -> DMatrix<f64> {
    let ft = model.shifted_jacobian(i, f);
    linalg::symmetrize(&(&ft * p * ft.transpose() + model.q(i)))
}

/// `(P̆⁻¹ + 2λ̄I + Hᵀ R̂⁻¹ H)⁻¹` through the matrix inversion lemma.
pub fn posterior_information_inverse(
    breve_p: &DMatrix<f64>,
    r_hat: &DMatrix<f64>,
    model: &NetworkModel,
    i: usize,
    lambda_bar: f64,
) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let prior_info = linalg::spd_inverse(breve_p, "P̆⁻¹")? + DMatrix::identity(n, n) * (2.0 * lambda_bar);
    let t_hat = linalg::spd_inverse(r_hat, "R̂⁻¹")?;
    Ok(linalg::symmetrize(&linalg::lemma1_inverse(
        &prior_info,
        model.h(i),
        &t_hat,
    )?))
}

/// `(P_j⁻¹ + Gᵀ Hᵀ Z H G)⁻¹` for neighbor `j` of `i`.
fn neighbor_inverse(p_j: &DMatrix<f64>, z: &DMatrix<f64>, model: &NetworkModel, i: usize) -> Result<DMatrix<f64>> {
    let hg = model.h(i) * model.g();
    let m = linalg::spd_inverse(p_j, "P_j⁻¹")? + hg.transpose() * z * &hg;
    linalg::spd_inverse(&linalg::symmetrize(&m), "P_j⁻¹ + GᵀHᵀZHG")
}

/// `K1` and the neighbor gains `K2_ij`.
pub fn compute_gains(
    breve_p: &DMatrix<f64>,
    r_hat: &DMatrix<f64>,
    z: &[(usize, DMatrix<f64>)],
    neighbors: &[Arc<InfoPackage>],
    model: &NetworkModel,
    i: usize,
    lambda_bar: f64,
) -> Result<(DMatrix<f64>, Vec<(usize, DMatrix<f64>)>)> {
    let h = model.h(i);
    let t_hat = linalg::spd_inverse(r_hat, "R̂⁻¹")?;
    let k1 = posterior_information_inverse(breve_p, r_hat, model, i, lambda_bar)? * h.transpose() * t_hat;
    let a = model.coupling();
    let hg = h * model.g();
    let k2 = z
        .iter()
        .map(|(j, zij)| {
            let inv = neighbor_inverse(&package_from(neighbors, *j)?.p, zij, model, i)?;
            let gain = model.g() * inv * hg.transpose() * zij * (a * model.pi_ij(i, *j));
            Ok((*j, gain))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((k1, k2))
}

/// Next approximate covariance `P_{k+1,i}`. `step` is only used for error
/// reporting.
#[allow(clippy::too_many_arguments)]
pub fn update_covariance(
    breve_p: &DMatrix<f64>,
    r_hat: &DMatrix<f64>,
    z: &[(usize, DMatrix<f64>)],
    neighbors: &[Arc<InfoPackage>],
    model: &NetworkModel,
    i: usize,
    lambda_bar: f64,
    step: usize,
) -> Result<DMatrix<f64>> {
    let a = model.coupling();
    let mut p = posterior_information_inverse(breve_p, r_hat, model, i, lambda_bar)? * (1.0 + a);
    let scale = (a + a * a) * (model.nodes() as f64 - 1.0);
    for (j, zij) in z {
        let inv = neighbor_inverse(&package_from(neighbors, *j)?.p, zij, model, i)?;
        let pij = model.pi_ij(i, *j);
        p += model.g() * inv * model.g().transpose() * (scale * pij * pij);
    }
    let p = linalg::symmetrize(&p);
    if !linalg::is_spd(&p) {
        return Err(Error::CovarianceCollapse { node: i, step });
    }
    Ok(p)
}

/// Posterior estimate. `inter` must hold `x̄`, `x̄ᵘ`, `K1` and `K2` of the
/// same step; the innovations are recomputed from `y`.
pub fn correct(
    belief: &NodeBelief,
    inter: &StepIntermediates,
    y: &DVector<f64>,
    model: &NetworkModel,
    alpha: f64,
    p_next: DMatrix<f64>,
) -> Result<NodeBelief> {
    let i = belief.node;
    let h = model.h(i);
    let b = y - h * &inter.x_bar;
    let b_u = y - h * &inter.x_bar_u;
    let mut x = (&inter.x_bar_u + &inter.k1 * &b_u) * (1.0 - alpha) + &inter.x_bar * alpha;
    if alpha > 0.0 && !inter.k2.is_empty() {
        let sum = model.neighbor_pi_sum(i);
        if sum == 0.0 {
            return Err(Error::DegenerateNeighborhood { node: i, sum });
        }
        for (_, k2) in &inter.k2 {
            x += k2 * &b * (alpha / sum);
        }
    } else if alpha > 0.0 && model.coupled_neighbors(i).is_empty() {
        return Err(Error::DegenerateNeighborhood { node: i, sum: 0.0 });
    }
    if !linalg::is_finite_vec(&x) {
        return Err(Error::Divergence { step: belief.k + 1, node: i });
    }
    Ok(NodeBelief {
        node: i,
        k: belief.k + 1,
        x_hat: x,
        p: p_next,
    })
}

/// One full step of node `i`: tune, predict, propagate, robustify, gains,
/// covariance update, correction.
pub fn node_step(
    belief: &NodeBelief,
    neighbors: &[Arc<InfoPackage>],
    y: &DVector<f64>,
    model: &NetworkModel,
    config: &TunerConfig,
) -> Result<(NodeBelief, StepIntermediates)> {
    let i = belief.node;
    check_round(belief, neighbors)?;
    if y.len() != model.meas_dim(i) {
        return Err(Error::dim("node_step: measurement", model.meas_dim(i), y.len()));
    }
    let f = eval_jacobian_f(model, &belief.x_hat)?;
    let x_bar = priori_estimate(belief, neighbors, model)?;
    let b = y - model.h(i) * &x_bar;

    let problem = TuningProblem::new(model, belief, neighbors, &f, b.clone())?;
    let tuned = tuner::resolve(&problem, config)?;
    let rob = robustify_noise(model, i, tuned.lambda_bar)?;
    let lambda_bar = rob.lambda_bar;
    let mut tuned = tuned;
    if rob.escalations > 0 {
        tuned.lambda_bar = lambda_bar;
        tuned.escalated = true;
    }
    let alpha = tuned.alpha;

    let (_, x_bar_u, _) = predict(belief, neighbors, model, lambda_bar, alpha)?;
    let breve_p = propagate_priori_cov(&belief.p, &f, model, i);
    let (k1, k2) = compute_gains(&breve_p, &rob.r_hat, &rob.z, neighbors, model, i, lambda_bar)?;
    let p_next = update_covariance(&breve_p, &rob.r_hat, &rob.z, neighbors, model, i, lambda_bar, belief.k + 1)?;
    let b_u = y - model.h(i) * &x_bar_u;
    let inter = StepIntermediates {
        x_bar,
        x_bar_u,
        breve_p,
        r_hat: rob.r_hat,
        z: rob.z,
        k1,
        k2,
        b,
        b_u,
        f,
        tuner: tuned,
    };
    let next = correct(belief, &inter, y, model, alpha, p_next)?;
    Ok((next, inter))
}

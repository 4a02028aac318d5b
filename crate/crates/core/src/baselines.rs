//! Reference estimators: the centralized robust least-squares step (every
//! node sees all `P_j`) and a standard EKF on the stacked network state.
//!
//! Centralized problem of node `i`, with `η = [e_1, …, e_N, w_i]`:
//!
//! ```text
//! L   = [aπ_i1 G, …, aπ_ii G + F_i, …, aπ_iN G, I]      A = H_i L
//! S   = diag(P_1⁻¹, …, P_N⁻¹, Q_i⁻¹)                   M = H_i E_i
//! E_a = [I I]ᵀ [0 … I … 0]                              E_b = −[I 0]ᵀ x̂_i
//! Ŝ   = S + λ̂ E_aᵀE_a        T̂ = (R_i − λ̂⁻¹ M Mᵀ)⁻¹
//! η   = (Ŝ + Aᵀ T̂ A)⁻¹ (Aᵀ T̂ b + λ̂ E_aᵀ E_b)
//! x̂⁺  = x̄ + L η              P⁺ = L (Ŝ + Aᵀ T̂ A)⁻¹ Lᵀ
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::{NodeBelief, MAX_ESCALATIONS, R_HAT_MARGIN};
use crate::linalg;
use crate::model::{eval_jacobian_f, eval_nominal_f, NetworkModel};

/// Assembled centralized problem of one node.
#[derive(Debug, Clone)]
pub struct CentralizedProblem {
    pub node: usize,
    pub l: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Measurement noise covariance `R_i` (`T = R_i⁻¹`).
    pub r: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub e_a: DMatrix<f64>,
    pub e_b: DVector<f64>,
    pub b: DVector<f64>,
    pub x_bar: DVector<f64>,
}

/// Priori estimate of node `i` from all beliefs.
fn priori(model: &NetworkModel, beliefs: &[NodeBelief], i: usize) -> Result<DVector<f64>> {
    let mut coupled = DVector::zeros(model.dim());
    for (j, bj) in beliefs.iter().enumerate() {
        let p = model.pi_ij(i, j);
        if p != 0.0 {
            coupled += &bj.x_hat * p;
        }
    }
    Ok(eval_nominal_f(model, &beliefs[i].x_hat)? + model.g() * coupled * model.coupling())
}

pub fn assemble(model: &NetworkModel, beliefs: &[NodeBelief], i: usize, y: &DVector<f64>) -> Result<CentralizedProblem> {
    let (nodes, n) = (model.nodes(), model.dim());
    if beliefs.len() != nodes {
        return Err(Error::dim("centralized: beliefs", nodes, beliefs.len()));
    }
    let dim = nodes * n + n;
    let a = model.coupling();
    let f = eval_jacobian_f(model, &beliefs[i].x_hat)?;
    let mut l = DMatrix::zeros(n, dim);
    for j in 0..nodes {
        let mut block = model.g() * (a * model.pi_ij(i, j));
        if j == i {
            block += &f;
        }
        l.view_mut((0, j * n), (n, n)).copy_from(&block);
    }
    l.view_mut((0, nodes * n), (n, n)).copy_from(&DMatrix::identity(n, n));
    let mut blocks = Vec::with_capacity(nodes + 1);
    for bj in beliefs {
        blocks.push(linalg::spd_inverse(&bj.p, "P_j⁻¹")?);
    }
    blocks.push(linalg::spd_inverse(model.q(i), "Q⁻¹")?);
    let mut sel = DMatrix::zeros(n, dim);
    sel.view_mut((0, i * n), (n, n)).copy_from(&DMatrix::identity(n, n));
    let e_a = linalg::vcat(&[&sel, &sel]);
    let mut e_b = DVector::zeros(2 * n);
    e_b.rows_mut(0, n).copy_from(&(-&beliefs[i].x_hat));
    let x_bar = priori(model, beliefs, i)?;
    let h = model.h(i);
    Ok(CentralizedProblem {
        node: i,
        a: h * &l,
        l,
        s: linalg::block_diag(&blocks),
        r: model.r(i).clone(),
        m: h * model.e(i),
        e_a,
        e_b,
        b: y - h * &x_bar,
        x_bar,
    })
}

impl CentralizedProblem {
    /// `T̂ = (R − λ̂⁻¹ M Mᵀ)⁻¹`, or `None` when `R − λ̂⁻¹MMᵀ` is not
    /// certified positive definite.
    pub fn t_hat(&self, lambda_hat: f64) -> Option<DMatrix<f64>> {
        let inner = if linalg::max_abs(&self.m) == 0.0 {
            self.r.clone()
        } else if lambda_hat > 0.0 {
            linalg::symmetrize(&(&self.r - &self.m * self.m.transpose() / lambda_hat))
        } else {
            return None;
        };
        let eps = R_HAT_MARGIN * linalg::spectral_norm(&self.r);
        let shifted = &inner - DMatrix::identity(inner.nrows(), inner.ncols()) * eps;
        shifted.cholesky()?;
        linalg::spd_inverse(&inner, "T̂").ok()
    }

    pub fn s_hat(&self, lambda_hat: f64) -> DMatrix<f64> {
        &self.s + self.e_a.transpose() * &self.e_a * lambda_hat
    }

    /// Robust cost `‖η‖²_Ŝ + ‖Aη − b‖²_T̂ − 2λ̂ E_bᵀE_a η + λ̂ E_bᵀE_b`.
    pub fn j1_hat(&self, lambda_hat: f64, eta: &DVector<f64>) -> f64 {
        let Some(t_hat) = self.t_hat(lambda_hat) else {
            return f64::INFINITY;
        };
        let resid = &self.a * eta - &self.b;
        linalg::quad(eta, &self.s_hat(lambda_hat)) + linalg::quad(&resid, &t_hat)
            - 2.0 * lambda_hat * (self.e_b.transpose() * &self.e_a * eta)[(0, 0)]
            + lambda_hat * self.e_b.norm_squared()
    }
}

/// `λ̂`: starts at `(1+β)‖Mᵀ R⁻¹ M‖₂` and doubles until `T̂` exists.
pub fn centralized_lambda(problem: &CentralizedProblem, beta: f64) -> Result<f64> {
    if linalg::max_abs(&problem.m) == 0.0 {
        return Ok(0.0);
    }
    let r_inv = linalg::spd_inverse(&problem.r, "R⁻¹")?;
    let mut lambda = (1.0 + beta) * linalg::spectral_norm(&(problem.m.transpose() * r_inv * &problem.m));
    for _ in 0..=MAX_ESCALATIONS {
        if problem.t_hat(lambda).is_some() {
            return Ok(lambda);
        }
        lambda *= 2.0;
    }
    Err(Error::InfeasibleLambda {
        lambda,
        reason: "R − λ̂⁻¹MMᵀ stays indefinite".into(),
    })
}

/// `η = (Ŝ + Aᵀ T̂ A)⁻¹ (Aᵀ T̂ b + λ̂ E_aᵀ E_b)` and the inverse of the
/// normal matrix.
pub fn centralized_eta_opt(problem: &CentralizedProblem, lambda_hat: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let t_hat = problem.t_hat(lambda_hat).ok_or_else(|| Error::InfeasibleLambda {
        lambda: lambda_hat,
        reason: "R − λ̂⁻¹MMᵀ is not positive definite".into(),
    })?;
    let w = linalg::symmetrize(&(problem.s_hat(lambda_hat) + problem.a.transpose() * &t_hat * &problem.a));
    let w_inv = linalg::spd_inverse(&w, "Ŝ + AᵀT̂A")?;
    let rhs = problem.a.transpose() * &t_hat * &problem.b + problem.e_a.transpose() * &problem.e_b * lambda_hat;
    Ok((&w_inv * rhs, w_inv))
}

/// One centralized step for every node. `beta` sets the starting `λ̂`.
pub fn centralized_step(
    beliefs: &[NodeBelief],
    ys: &[DVector<f64>],
    model: &NetworkModel,
    beta: f64,
) -> Result<Vec<NodeBelief>> {
    if ys.len() != model.nodes() {
        return Err(Error::dim("centralized: measurements", model.nodes(), ys.len()));
    }
    (0..model.nodes())
        .map(|i| {
            let problem = assemble(model, beliefs, i, &ys[i])?;
            let lambda = centralized_lambda(&problem, beta)?;
            let (eta, w_inv) = centralized_eta_opt(&problem, lambda)?;
            let x_hat = &problem.x_bar + &problem.l * eta;
            let p = linalg::symmetrize(&(&problem.l * w_inv * problem.l.transpose()));
            if !linalg::is_spd(&p) {
                return Err(Error::CovarianceCollapse {
                    node: i,
                    step: beliefs[i].k + 1,
                });
            }
            if !linalg::is_finite_vec(&x_hat) {
                return Err(Error::Divergence {
                    step: beliefs[i].k + 1,
                    node: i,
                });
            }
            Ok(NodeBelief {
                node: i,
                k: beliefs[i].k + 1,
                x_hat,
                p,
            })
        })
        .collect()
}

/// Inputs of the deterministic least-squares costs of node `i` at a given
/// point `(e_1, …, e_N, w)` and uncertainty realization.
#[derive(Debug, Clone)]
pub struct CostPoint {
    pub e: Vec<DVector<f64>>,
    pub w: DVector<f64>,
    pub delta1: DMatrix<f64>,
    pub delta2: DMatrix<f64>,
}

fn own_residual(model: &NetworkModel, beliefs: &[NodeBelief], i: usize, b: &DVector<f64>, pt: &CostPoint) -> Result<DVector<f64>> {
    let h = model.h(i);
    let f = eval_jacobian_f(model, &beliefs[i].x_hat)?;
    let ei = &pt.e[i];
    let unc = model.e1(i) * (&pt.delta1 * (ei + &beliefs[i].x_hat)) + model.e2(i) * (&pt.delta2 * ei);
    Ok(-b + h * (&f * ei + unc + &pt.w))
}

/// Coupled cost: `Σ_j ‖e_j‖²_{P_j⁻¹} + ‖w‖²_{Q⁻¹} + ‖r‖²_{R⁻¹}` with the
/// residual including every coupling term.
pub fn j1_cost(model: &NetworkModel, beliefs: &[NodeBelief], i: usize, b: &DVector<f64>, pt: &CostPoint) -> Result<f64> {
    let mut cost = prior_cost(model, beliefs, i, pt)?;
    let mut resid = own_residual(model, beliefs, i, b, pt)?;
    let hg = model.h(i) * model.g();
    for j in 0..model.nodes() {
        let p = model.pi_ij(i, j);
        if p != 0.0 {
            resid += &hg * &pt.e[j] * (model.coupling() * p);
        }
    }
    cost += linalg::quad(&resid, &linalg::spd_inverse(model.r(i), "R⁻¹")?);
    Ok(cost)
}

fn prior_cost(model: &NetworkModel, beliefs: &[NodeBelief], i: usize, pt: &CostPoint) -> Result<f64> {
    let mut cost = linalg::quad(&pt.w, &linalg::spd_inverse(model.q(i), "Q⁻¹")?);
    for j in 0..model.nodes() {
        if j == i || model.pi_ij(i, j) != 0.0 {
            cost += linalg::quad(&pt.e[j], &linalg::spd_inverse(&beliefs[j].p, "P_j⁻¹")?);
        }
    }
    Ok(cost)
}

/// Decoupled upper bound: the own term weighted by `(1+a)R⁻¹` with the
/// innovation share `(1−α)`, plus `Σ_{j≠i} ‖H G e_j − α̂ b‖²_{Z_ij}`.
pub fn j2_cost(
    model: &NetworkModel,
    beliefs: &[NodeBelief],
    i: usize,
    b: &DVector<f64>,
    pt: &CostPoint,
    alpha: f64,
) -> Result<f64> {
    let a = model.coupling();
    let mut cost = prior_cost(model, beliefs, i, pt)?;
    let r_inv = linalg::spd_inverse(model.r(i), "R⁻¹")?;
    let hg = model.h(i) * model.g();
    let own = own_residual(model, beliefs, i, b, pt)? + b * alpha + &hg * &pt.e[i] * (a * model.pi_ij(i, i));
    cost += linalg::quad(&own, &r_inv) * (1.0 + a);
    let sum = model.neighbor_pi_sum(i);
    for &j in model.coupled_neighbors(i) {
        let alpha_hat = if sum != 0.0 { alpha / sum } else { 0.0 };
        let z = crate::estimator::z_matrix(model, i, j)?;
        let r = &hg * &pt.e[j] - b * alpha_hat;
        cost += linalg::quad(&r, &z);
    }
    Ok(cost)
}

/// Stacked EKF belief.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfBelief {
    pub k: usize,
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl EkfBelief {
    pub fn from_nodes(beliefs: &[NodeBelief]) -> Self {
        let x = DVector::from_iterator(
            beliefs.iter().map(|b| b.x_hat.len()).sum(),
            beliefs.iter().flat_map(|b| b.x_hat.iter().copied()),
        );
        let p = linalg::block_diag(&beliefs.iter().map(|b| b.p.clone()).collect::<Vec<_>>());
        Self {
            k: beliefs.first().map_or(0, |b| b.k),
            x,
            p,
        }
    }

    pub fn node_estimate(&self, i: usize, n: usize) -> DVector<f64> {
        self.x.rows(i * n, n).into_owned()
    }
}

/// One EKF step on the `N·n` stacked system with
/// `F = blockdiag(F_i) + a (Π ⊗ G)`, block-diagonal `H`, `Q`, `R`.
pub fn augmented_ekf_step(belief: &EkfBelief, ys: &[DVector<f64>], model: &NetworkModel) -> Result<EkfBelief> {
    let (nodes, n) = (model.nodes(), model.dim());
    if belief.x.len() != nodes * n {
        return Err(Error::dim("augmented EKF state", nodes * n, belief.x.len()));
    }
    if ys.len() != nodes {
        return Err(Error::dim("augmented EKF measurements", nodes, ys.len()));
    }
    let a = model.coupling();
    let mut x_pred = DVector::zeros(nodes * n);
    let mut f = DMatrix::zeros(nodes * n, nodes * n);
    for i in 0..nodes {
        let xi = belief.x.rows(i * n, n).into_owned();
        let mut xp = eval_nominal_f(model, &xi)?;
        f.view_mut((i * n, i * n), (n, n)).copy_from(&eval_jacobian_f(model, &xi)?);
        for j in 0..nodes {
            let p = model.pi_ij(i, j);
            if p != 0.0 {
                xp += model.g() * belief.x.rows(j * n, n) * (a * p);
                let mut blk = f.view_mut((i * n, j * n), (n, n));
                blk += model.g() * (a * p);
            }
        }
        x_pred.rows_mut(i * n, n).copy_from(&xp);
    }
    let q = linalg::block_diag(&(0..nodes).map(|i| model.q(i).clone()).collect::<Vec<_>>());
    let r = linalg::block_diag(&(0..nodes).map(|i| model.r(i).clone()).collect::<Vec<_>>());
    let h = linalg::block_diag(&(0..nodes).map(|i| model.h(i).clone()).collect::<Vec<_>>());
    let y = DVector::from_iterator(ys.iter().map(|y| y.len()).sum(), ys.iter().flat_map(|y| y.iter().copied()));
    if y.len() != h.nrows() {
        return Err(Error::dim("augmented EKF measurement vector", h.nrows(), y.len()));
    }
    let p_pred = linalg::symmetrize(&(&f * &belief.p * f.transpose() + q));
    let s = linalg::symmetrize(&(&h * &p_pred * h.transpose() + r));
    let gain = &p_pred * h.transpose() * linalg::spd_inverse(&s, "EKF innovation covariance")?;
    let x = &x_pred + &gain * (y - &h * &x_pred);
    let p = linalg::symmetrize(&(&p_pred - &gain * &h * &p_pred));
    if !linalg::is_spd(&p) {
        return Err(Error::CovarianceCollapse {
            node: 0,
            step: belief.k + 1,
        });
    }
    if !linalg::is_finite_vec(&x) {
        return Err(Error::Divergence {
            step: belief.k + 1,
            node: 0,
        });
    }
    Ok(EkfBelief { k: belief.k + 1, x, p })
}

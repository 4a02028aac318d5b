//! Randomized property checks shared by the tuner tests and the acceptance
//! suite.

use drea::estimator::NodeBelief;
use drea::linalg;
use drea::model::{eval_jacobian_f, NetworkModel};
use drea::tuner::{alpha_closed_form, lambda_min, TuningProblem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{inv, max_diff, min_eig, packages, random_beliefs, random_network, random_spd, randn, randv, rng};

pub struct Instance {
    pub model: NetworkModel,
    pub beliefs: Vec<NodeBelief>,
    pub b: DVector<f64>,
}

impl Instance {
    pub fn new(g: &mut ChaCha8Rng, with_e: bool) -> Self {
        let model = random_network(g, 3, 2, 2, with_e);
        let beliefs = random_beliefs(&model, g);
        let b = randv(2, g);
        Self { model, beliefs, b }
    }

    pub fn problem(&self, i: usize) -> TuningProblem<'_> {
        let f = eval_jacobian_f(&self.model, &self.beliefs[i].x_hat).unwrap();
        TuningProblem::new(&self.model, &self.beliefs[i], &packages(&self.beliefs), &f, self.b.clone()).unwrap()
    }

    /// A λ̄ comfortably inside the feasible set.
    pub fn lambda(&self, i: usize, g: &mut ChaCha8Rng) -> f64 {
        lambda_min(&self.model, i).unwrap() * g.random_range(1.5..8.0)
    }
}

/// Over `count` random instances: whether every closed-form α lies in
/// `[0, 1]`, and the largest `Ĵ₂(α_closed) − Ĵ₂(α_grid)` over the 101-point
/// grid.
pub fn closed_form_alpha_check(count: usize, seed: u64) -> (bool, f64) {
    let mut g = rng(seed);
    let mut in_range = true;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..count {
        let inst = Instance::new(&mut g, true);
        let i = g.random_range(0..3);
        let lambda = inst.lambda(i, &mut g);
        let p = inst.problem(i);
        let (alpha, _) = alpha_closed_form(&p.phi_terms(lambda).unwrap());
        in_range &= (0.0..=1.0).contains(&alpha);
        let best = p.j2_hat(lambda, alpha);
        for k in 0..=100 {
            worst = worst.max(best - p.j2_hat(lambda, k as f64 / 100.0));
        }
    }
    (in_range, worst)
}

/// Largest relative deviation of the inversion-lemma route from a direct
/// inverse.
pub fn inversion_identity_worst(count: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..count {
        let n = g.random_range(1..5);
        let m = g.random_range(1..4);
        let p = random_spd(n, 0.5, &mut g);
        let s = randn(m, n, &mut g);
        let q = random_spd(m, 0.5, &mut g);
        let got = linalg::lemma1_inverse(&p, &s, &q).unwrap();
        let want = inv(&(&p + s.transpose() * &q * &s));
        worst = worst.max(max_diff(&got, &want) / want.abs().max().max(1.0));
    }
    worst
}

/// Smallest eigenvalue of `(1+β)PᵀP + (1+β⁻¹)QᵀQ − (P+Q)ᵀ(P+Q)`.
pub fn weighted_square_worst(count: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..count {
        let (n, m) = (g.random_range(1..5), g.random_range(1..5));
        let p = randn(n, m, &mut g);
        let q = randn(n, m, &mut g);
        let beta: f64 = 10f64.powf(g.random_range(-3.0..3.0));
        let lhs = (&p + &q).transpose() * (&p + &q);
        let rhs = p.transpose() * &p * (1.0 + beta) + q.transpose() * &q * (1.0 + 1.0 / beta);
        worst = worst.min(min_eig(&(rhs - lhs)));
    }
    worst
}

/// Smallest eigenvalue of `N Σ PᵢᵀPᵢ − (Σ Pᵢ)ᵀ(Σ Pᵢ)`.
pub fn sum_square_worst(count: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..count {
        let (n, m, k) = (g.random_range(1..4), g.random_range(1..4), g.random_range(1..6));
        let ps: Vec<_> = (0..k).map(|_| randn(n, m, &mut g)).collect();
        let sum = ps.iter().fold(DMatrix::zeros(n, m), |acc, p| acc + p);
        let lhs = sum.transpose() * &sum;
        let rhs = ps.iter().fold(DMatrix::zeros(m, m), |acc, p| acc + p.transpose() * p) * k as f64;
        worst = worst.min(min_eig(&(rhs - lhs)));
    }
    worst
}

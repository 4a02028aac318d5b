//! Straight-line transcription of the distributed recursion with dense
//! inverses. Sine dynamics only; shares no code with the crate beyond the
//! model accessors.

use drea::model::NetworkModel;
use nalgebra::{DMatrix, DVector};

use super::inv;

pub struct OracleNode {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub k2: Vec<(usize, DMatrix<f64>)>,
    pub lambda_bar: f64,
}

fn sine_f(w: f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![0.9 * x[0] + (w * x[1]).sin(), 0.9 * x[1] - (w * x[0]).sin()])
}

fn sine_jac(w: f64, x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.9, w * (w * x[1]).cos(), -w * (w * x[0]).cos(), 0.9])
}

fn stacked_e(model: &NetworkModel, i: usize) -> DMatrix<f64> {
    let (e1, e2) = (model.e1(i), model.e2(i));
    let mut e = DMatrix::zeros(e1.nrows(), e1.ncols() + e2.ncols());
    e.columns_mut(0, e1.ncols()).copy_from(e1);
    e.columns_mut(e1.ncols(), e2.ncols()).copy_from(e2);
    e
}

/// `‖Eᵀ Hᵀ R⁻¹ H E‖₂` via SVD.
pub fn gain(model: &NetworkModel, i: usize) -> f64 {
    let he = model.h(i) * stacked_e(model, i);
    let m = he.transpose() * inv(model.r(i)) * &he;
    m.singular_values().max()
}

/// Initial covariance `(P̆₀⁻¹ + Hᵀ R̂₀⁻¹ H)⁻¹` with `λ̄₀ = (1+β)·gain`.
pub fn initial_p(model: &NetworkModel, i: usize, breve_p0: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let a = model.coupling();
    let h = model.h(i);
    let lambda0 = (1.0 + beta) * gain(model, i);
    let he = h * stacked_e(model, i);
    let mut r_hat = model.r(i) / (1.0 + a);
    if lambda0 > 0.0 {
        r_hat -= &he * he.transpose() / lambda0;
    }
    inv(&(inv(breve_p0) + h.transpose() * inv(&r_hat) * h))
}

/// One step of every node with a fixed α and the rule `λ̄ = (1+β)(1+a)⁻¹·gain`.
pub fn step(
    model: &NetworkModel,
    freq: f64,
    xs: &[DVector<f64>],
    ps: &[DMatrix<f64>],
    ys: &[DVector<f64>],
    alpha: f64,
    beta: f64,
) -> Vec<OracleNode> {
    let nodes = xs.len();
    let a = model.coupling();
    let g = model.g();
    let n = xs[0].len();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::new();
    for i in 0..nodes {
        let h = model.h(i);
        let pi = |j: usize| model.pi_ij(i, j);
        let lambda_bar = (1.0 + beta) / (1.0 + a) * gain(model, i);
        let f = sine_jac(freq, &xs[i]);
        let ft = &f + g * (a * pi(i));
        let mut x_bar = sine_f(freq, &xs[i]);
        for j in 0..nodes {
            if pi(j) != 0.0 {
                x_bar += g * &xs[j] * (a * pi(j));
            }
        }
        let x_bar_u = &x_bar - &ft * &ps[i] * &xs[i] * (lambda_bar / (1.0 - alpha));
        let breve = &ft * &ps[i] * ft.transpose() + model.q(i);
        let he = h * stacked_e(model, i);
        let mut r_hat = model.r(i) / (1.0 + a);
        if lambda_bar > 0.0 {
            r_hat -= &he * he.transpose() / lambda_bar;
        }
        let r_hat_inv = inv(&r_hat);
        let core = inv(&(inv(&breve) + h.transpose() * &r_hat_inv * h + &eye * (2.0 * lambda_bar)));
        let k1 = &core * h.transpose() * &r_hat_inv;
        let mut p = &core * (1.0 + a);
        let neighbors: Vec<usize> = (0..nodes).filter(|&j| j != i && pi(j) != 0.0).collect();
        let pi_sum: f64 = neighbors.iter().map(|&j| pi(j)).sum();
        let b = &ys[i] - h * &x_bar;
        let b_u = &ys[i] - h * &x_bar_u;
        let mut x = (&x_bar_u + &k1 * &b_u) * (1.0 - alpha) + &x_bar * alpha;
        let mut k2 = Vec::new();
        for &j in &neighbors {
            let z = inv(model.r(i)) * (pi(j) * pi(j) * (a + a * a) * (nodes as f64 - 1.0));
            let m = inv(&(inv(&ps[j]) + g.transpose() * h.transpose() * &z * h * g));
            let kij = g * &m * g.transpose() * h.transpose() * &z * (a * pi(j));
            p += g * &m * g.transpose() * ((a + a * a) * (nodes as f64 - 1.0) * pi(j) * pi(j));
            x += &kij * &b * (alpha / pi_sum);
            k2.push((j, kij));
        }
        out.push(OracleNode {
            x,
            p,
            k1,
            k2,
            lambda_bar,
        });
    }
    out
}

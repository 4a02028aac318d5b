//! Pre-simulation checks: bounds on the model parameters, nonsingularity
//! and observability of the linearized dynamics, the coupling-strength
//! condition on `G` and the steady-state stability condition.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::estimator::robustify_noise;
use crate::linalg;
use crate::model::{eval_jacobian_f, step_truth, Dynamics, GlobalState, NetworkModel, UncertaintyDraw};
use crate::tuner;

/// Grid resolution per axis for the analytic sine envelope.
const ENVELOPE_GRID: usize = 401;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionBounds {
    /// Bounds on `‖F + aπ_ii G‖₂`.
    pub k_f1: f64,
    pub k_f2: f64,
    /// Smallest singular value of `F + aπ_ii G` seen (not part of the
    /// bound set; used for nonsingularity diagnostics).
    pub sigma_min_f: f64,
    pub k_g: f64,
    pub k_e1: f64,
    pub k_e2: f64,
    pub k_h: f64,
    pub k_w1: f64,
    pub k_w2: f64,
    pub k_v1: f64,
    pub k_v2: f64,
    /// Grid points per axis of the analytic envelope search; 0 when the
    /// bounds are exact.
    pub envelope_grid: usize,
}

/// Singular values `(σ_max, σ_min)` of a 2×2 matrix in closed form.
fn singular_values_2x2(m: &DMatrix<f64>) -> (f64, f64) {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let s = ((a + d).powi(2) + (b - c).powi(2)).sqrt();
    let t = ((a - d).powi(2) + (b + c).powi(2)).sqrt();
    ((s + t) / 2.0, ((s - t) / 2.0).abs())
}

/// `(min ‖·‖₂, max ‖·‖₂, min σ_min)` of `J(c, c') + shift` over the box
/// `|c|, |c'| ≤ freq`, where `J = [[0.9, c], [−c', 0.9]]`.
fn sine_envelope(freq: f64, shift: &DMatrix<f64>) -> (f64, f64, f64) {
    let w = freq.abs();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    let mut smin = f64::INFINITY;
    let at = |c: f64, cp: f64| DMatrix::from_row_slice(2, 2, &[0.9, c, -cp, 0.9]) + shift;
    let m = ENVELOPE_GRID - 1;
    for u in 0..=m {
        let c = -w + 2.0 * w * u as f64 / m as f64;
        for v in 0..=m {
            let cp = -w + 2.0 * w * v as f64 / m as f64;
            let (s1, s2) = singular_values_2x2(&at(c, cp));
            lo = lo.min(s1);
            hi = hi.max(s1);
            smin = smin.min(s2);
        }
    }
    (lo, hi, smin)
}

fn norm_range<'a>(ms: impl Iterator<Item = &'a DMatrix<f64>>) -> (f64, f64) {
    ms.map(linalg::spectral_norm)
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Parameter bounds. Constant matrices are exact; `F` is exact for linear
/// dynamics and searched over the cosine envelope for the sine builtin, so
/// no state probes are needed.
pub fn estimate_bounds(model: &NetworkModel) -> Result<AssumptionBounds> {
    let nodes = model.nodes();
    let a = model.coupling();
    let (mut k_f1, mut k_f2, mut sigma_min_f) = (f64::INFINITY, 0.0_f64, f64::INFINITY);
    let mut envelope_grid = 0;
    for i in 0..nodes {
        let shift = model.g() * (a * model.pi_ij(i, i));
        let (lo, hi, smin) = match model.nominal() {
            Dynamics::Linear(m) => {
                let ft = m + &shift;
                let s = linalg::spectral_norm(&ft);
                (s, s, linalg::min_singular_value(&ft))
            }
            Dynamics::Sine { freq } => sine_envelope(*freq, &shift),
        };
        k_f1 = k_f1.min(lo);
        k_f2 = k_f2.max(hi);
        sigma_min_f = sigma_min_f.min(smin);
        if matches!(model.nominal(), Dynamics::Sine { .. }) {
            envelope_grid = ENVELOPE_GRID;
        }
    }
    let (_, k_e1) = norm_range((0..nodes).map(|i| model.e1(i)));
    let (_, k_e2) = norm_range((0..nodes).map(|i| model.e2(i)));
    let (_, k_h) = norm_range((0..nodes).map(|i| model.h(i)));
    let (k_w1, k_w2) = norm_range((0..nodes).map(|i| model.q(i)));
    let (k_v1, k_v2) = norm_range((0..nodes).map(|i| model.r(i)));
    Ok(AssumptionBounds {
        k_f1,
        k_f2,
        sigma_min_f,
        k_g: linalg::spectral_norm(model.g()),
        k_e1,
        k_e2,
        k_h,
        k_w1,
        k_w2,
        k_v1,
        k_v2,
        envelope_grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonsingularCheck {
    pub pass: bool,
    pub worst_condition: f64,
}

/// Condition number of `F(x) + aπ_ii G` at every probe and node, compared
/// against [`linalg::MAX_CONDITION`].
pub fn check_nonsingular_f(model: &NetworkModel, probes: &[DVector<f64>]) -> Result<NonsingularCheck> {
    let mut worst = 0.0_f64;
    for i in 0..model.nodes() {
        for x in probes {
            let ft = model.shifted_jacobian(i, &eval_jacobian_f(model, x)?);
            worst = worst.max(linalg::condition_number(&ft));
        }
    }
    Ok(NonsingularCheck {
        pass: worst < linalg::MAX_CONDITION,
        worst_condition: worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityCheck {
    pub node: usize,
    pub window: usize,
    pub min_eigenvalue: f64,
    pub kappa_min: f64,
    pub pass: bool,
}

/// `Σ_{h=0}^{N̄−1} Ψ_hᵀ Hᵀ R⁻¹ H Ψ_h` with `Ψ_0 = I` and `Ψ_h` the product of
/// `F(x_t) + aπ_ii G` along `trajectory`. Missing trajectory points reuse the
/// last one. Returns the Gramian and its smallest eigenvalue.
pub fn observability_gramian(
    model: &NetworkModel,
    i: usize,
    window: usize,
    trajectory: &[DVector<f64>],
) -> Result<(DMatrix<f64>, f64)> {
    let n = model.dim();
    let h = model.h(i);
    let info = h.transpose() * linalg::spd_inverse(model.r(i), "R⁻¹")? * h;
    let mut psi = DMatrix::identity(n, n);
    let mut gram = DMatrix::zeros(n, n);
    for step in 0..window.max(1) {
        gram += psi.transpose() * &info * &psi;
        if let Some(x) = trajectory.get(step).or(trajectory.last()) {
            psi = model.shifted_jacobian(i, &eval_jacobian_f(model, x)?) * psi;
        } else {
            psi = model.shifted_jacobian(i, &eval_jacobian_f(model, &DVector::zeros(n))?) * psi;
        }
    }
    let gram = linalg::symmetrize(&gram);
    let min_eig = gram.clone().symmetric_eigenvalues().min();
    Ok((gram, min_eig))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Thm2Check {
    /// `max |Re λ(G)|`.
    pub lhs: f64,
    /// `(a+a²)^{-1/2} (N−1)⁻¹ π_m⁻¹`; `inf` when degenerate.
    pub rhs: f64,
    pub pass: bool,
    /// `σ_max(G)`; differs from `lhs` when `G` is non-normal.
    pub g_norm: f64,
}

pub fn check_thm2(model: &NetworkModel) -> Thm2Check {
    let lhs = linalg::eigenvalue_real_parts(model.g())
        .into_iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let a = model.coupling();
    let nodes = model.nodes() as f64;
    let pi_m = model.pi_max();
    let rhs = if a > 0.0 && nodes > 1.0 && pi_m > 0.0 {
        1.0 / ((a + a * a).sqrt() * (nodes - 1.0) * pi_m)
    } else {
        f64::INFINITY
    };
    Thm2Check {
        lhs,
        rhs,
        pass: lhs < rhs,
        g_norm: linalg::spectral_norm(model.g()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    pub node: usize,
    #[serde(serialize_with = "linalg::ser_rows")]
    pub breve_p: DMatrix<f64>,
    #[serde(serialize_with = "linalg::ser_rows")]
    /// `(I + (P̆⁻¹ + 2λ̄I)⁻¹ Hᵀ R̂⁻¹ H)⁻¹ (F + aπ_ii G)` at the fixed point.
    pub hf: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `trace(P̆_t)` for every iterate, starting with `P̆_0 = Q`.
    #[serde(skip)]
    pub traces: Vec<f64>,
}

/// Fixed point of `P̆ ← (1+a) F̃ (P̆⁻¹ + Hᵀ R̂⁻¹ H + 2λ̄I)⁻¹ F̃ᵀ + Q` for a
/// frozen Jacobian `f`, starting from `P̆_0 = Q`. Non-convergence is
/// reported through `converged`, not as an error.
pub fn steady_state_riccati(
    model: &NetworkModel,
    i: usize,
    f: &DMatrix<f64>,
    lambda_bar: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyState> {
    let n = model.dim();
    let a = model.coupling();
    let rob = robustify_noise(model, i, lambda_bar)?;
    let lambda_bar = rob.lambda_bar;
    let ft = model.shifted_jacobian(i, f);
    let h = model.h(i);
    let info = h.transpose() * linalg::spd_inverse(&rob.r_hat, "R̂⁻¹")? * h;
    let reg = DMatrix::identity(n, n) * (2.0 * lambda_bar);
    let mut p = model.q(i).clone();
    let mut traces = vec![p.trace()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let inner = linalg::spd_inverse(&p, "P̆⁻¹")? + &info + &reg;
        let next = linalg::symmetrize(
            &(&ft * linalg::spd_inverse(&linalg::symmetrize(&inner), "P̆⁻¹ + HᵀR̂⁻¹H + 2λ̄I")? * ft.transpose() * (1.0 + a)
                + model.q(i)),
        );
        let delta = linalg::inf_norm(&(&next - &p));
        p = next;
        traces.push(p.trace());
        if !linalg::is_finite(&p) {
            break;
        }
        if delta < tol {
            converged = true;
            break;
        }
    }
    let hf = if linalg::is_finite(&p) {
        let prior = linalg::inverse(
            &(linalg::spd_inverse(&p, "P̆⁻¹")? + &reg),
            "P̆⁻¹ + 2λ̄I",
        )?;
        let m = DMatrix::identity(n, n) + prior * &info;
        linalg::inverse(&m, "I + (P̆⁻¹ + 2λ̄I)⁻¹HᵀR̂⁻¹H")? * &ft
    } else {
        DMatrix::from_element(n, n, f64::NAN)
    };
    Ok(SteadyState {
        node: i,
        breve_p: p,
        hf,
        iterations,
        converged,
        traces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Thm3Check {
    /// `‖𝓗F‖₂` of the block-diagonal system (max over nodes).
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// Spectral radius of `𝓗F`.
    pub spectral_radius: f64,
}

/// `‖𝓗F‖₂ < (1 + κ_{F,1}⁻¹κ_{E,2} + aπ_m κ_{F,1}⁻¹κ_G √(N(N−1)))⁻¹`.
pub fn check_thm3(model: &NetworkModel, bounds: &AssumptionBounds, steady: &[SteadyState]) -> Thm3Check {
    let nodes = model.nodes() as f64;
    let lhs = steady
        .iter()
        .map(|s| linalg::spectral_norm(&s.hf))
        .fold(0.0_f64, f64::max);
    let radius = steady
        .iter()
        .map(|s| linalg::spectral_radius(&s.hf))
        .fold(0.0_f64, f64::max);
    let rhs = thm3_rhs(model.coupling(), model.pi_max(), nodes, bounds);
    Thm3Check {
        lhs,
        rhs,
        pass: lhs < rhs,
        spectral_radius: radius,
    }
}

pub fn thm3_rhs(a: f64, pi_m: f64, nodes: f64, b: &AssumptionBounds) -> f64 {
    1.0 / (1.0 + b.k_e2 / b.k_f1 + a * pi_m * b.k_g / b.k_f1 * (nodes * (nodes - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption5Check {
    pub kappa_u: f64,
    pub cap: f64,
    pub pass: bool,
}

/// Empirical `max ‖E1 Δ1 x‖₂` over paired states and draws.
pub fn check_assumption5(
    model: &NetworkModel,
    states: &[GlobalState],
    draws: &[UncertaintyDraw],
    cap: f64,
) -> Assumption5Check {
    let mut kappa = 0.0_f64;
    for (s, d) in states.iter().zip(draws) {
        for i in 0..model.nodes() {
            let v = model.e1(i) * (&d.delta1[i] * &s.x[i]);
            kappa = kappa.max(v.norm());
        }
    }
    Assumption5Check {
        kappa_u: kappa,
        cap,
        pass: kappa.is_finite() && kappa < cap,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub bounds: AssumptionBounds,
    pub nonsingular_f: NonsingularCheck,
    pub observability: Vec<ObservabilityCheck>,
    pub thm2: Thm2Check,
    pub thm3: Thm3Check,
    pub steady_state: Vec<SteadyState>,
}

impl FeasibilityReport {
    pub fn pass(&self) -> bool {
        self.nonsingular_f.pass && self.observability.iter().all(|o| o.pass) && self.thm2.pass
    }
}

/// Options for [`feasibility_report`].
#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub probes: usize,
    pub probe_box: f64,
    pub window: usize,
    pub kappa_min: f64,
    pub beta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            probes: 10_000,
            probe_box: 5.0,
            window: 2,
            kappa_min: 1e-9,
            beta: 0.5,
            tol: 1e-10,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

/// Full report. The Jacobian is frozen at each node's reference state for
/// the steady-state analysis; the observability window follows the
/// noise-free trajectory from the reference states.
pub fn feasibility_report(
    model: &NetworkModel,
    reference: &[DVector<f64>],
    opts: &ReportOptions,
) -> Result<FeasibilityReport> {
    use rand::Rng;
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let probes: Vec<DVector<f64>> = (0..opts.probes)
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-opts.probe_box..=opts.probe_box)))
        .collect();
    let bounds = estimate_bounds(model)?;
    let nonsingular_f = check_nonsingular_f(model, &probes)?;

    let mut quiet = model.spec().clone();
    quiet.noiseless = true;
    let quiet = NetworkModel::new(quiet)?;
    let mut s = GlobalState::new(reference.to_vec());
    let zero = UncertaintyDraw::zero(&quiet);
    let mut traj = vec![s.clone()];
    for _ in 1..opts.window.max(1) {
        s = step_truth(&quiet, &s, &zero, &mut rng)?;
        traj.push(s.clone());
    }

    let mut observability = Vec::new();
    let mut steady = Vec::new();
    for i in 0..model.nodes() {
        let path: Vec<_> = traj.iter().map(|g| g.x[i].clone()).collect();
        let (_, min_eig) = observability_gramian(model, i, opts.window, &path)?;
        observability.push(ObservabilityCheck {
            node: i,
            window: opts.window,
            min_eigenvalue: min_eig,
            kappa_min: opts.kappa_min,
            pass: min_eig >= opts.kappa_min,
        });
        let f = eval_jacobian_f(model, &reference[i])?;
        let lambda = tuner::rule13_lambda(model, i, opts.beta)?;
        steady.push(steady_state_riccati(model, i, &f, lambda, opts.tol, opts.max_iter)?);
    }
    let thm3 = check_thm3(model, &bounds, &steady);
    Ok(FeasibilityReport {
        bounds,
        nonsingular_f,
        observability,
        thm2: check_thm2(model),
        thm3,
        steady_state: steady,
    })
}

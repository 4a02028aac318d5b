//! The plant: an uncertain, coupled, nonlinear network of `N` nodes
//!
//! ```text
//! x_{k+1,i} = f(x_{k,i}) + E1_i Δ1_i x_{k,i} + a Σ_j π_ij G x_{k,j} + ω_{k,i},   ω ~ N(0, Q_i)
//! y_{k,i}   = H_i x_{k,i} + ν_{k,i},                                            ν ~ N(0, R_i)
//! ```
//!
//! The estimator only ever sees the nominal dynamics `f̂`, the structure
//! matrices `E1`, `E2` and the noise covariances. Realizations of `Δ` stay on
//! the truth side.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::linalg;

/// Nominal (or true) per-node dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    /// `[0.9 x₁ + sin(ω x₂), 0.9 x₂ − sin(ω x₁)]`; the reference network uses
    /// `ω = 0.5`. Two-dimensional state only.
    Sine { freq: f64 },
    /// `x ↦ A x`.
    Linear(DMatrix<f64>),
}

impl Dynamics {
    pub const PAPER_SINE_FREQ: f64 = 0.5;
    const SINE_GAIN: f64 = 0.9;

    pub fn paper_sine() -> Self {
        Dynamics::Sine {
            freq: Self::PAPER_SINE_FREQ,
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            Dynamics::Sine { freq } => {
                if n != 2 {
                    return Err(Error::dim("sine dynamics", 2, n));
                }
                if !freq.is_finite() {
                    return Err(Error::Validation("sine frequency must be finite".into()));
                }
            }
            Dynamics::Linear(a) => {
                if a.shape() != (n, n) {
                    return Err(Error::dim("linear dynamics", format!("{n}×{n}"), format!("{:?}", a.shape())));
                }
                if !linalg::is_finite(a) {
                    return Err(Error::Validation("linear dynamics matrix must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Dynamics::Sine { freq } => {
                if x.len() != 2 {
                    return Err(Error::dim("sine dynamics", 2, x.len()));
                }
                Ok(DVector::from_vec(vec![
                    Self::SINE_GAIN * x[0] + (freq * x[1]).sin(),
                    Self::SINE_GAIN * x[1] - (freq * x[0]).sin(),
                ]))
            }
            Dynamics::Linear(a) => {
                if x.len() != a.ncols() {
                    return Err(Error::dim("linear dynamics", a.ncols(), x.len()));
                }
                Ok(a * x)
            }
        }
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            Dynamics::Sine { freq } => {
                if x.len() != 2 {
                    return Err(Error::dim("sine jacobian", 2, x.len()));
                }
                Ok(DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        Self::SINE_GAIN,
                        freq * (freq * x[1]).cos(),
                        -freq * (freq * x[0]).cos(),
                        Self::SINE_GAIN,
                    ],
                ))
            }
            Dynamics::Linear(a) => {
                if x.len() != a.ncols() {
                    return Err(Error::dim("linear jacobian", a.ncols(), x.len()));
                }
                Ok(a.clone())
            }
        }
    }
}

/// Raw description of a network; validated into a [`NetworkModel`].
#[derive(Debug, Clone)]
pub struct ModelSpec {
    /// Coupling coefficient `a > 0`. `a = 0` is accepted to express the
    /// uncoupled reduction.
    pub coupling: f64,
    /// N×N coupling strengths; `π_ij ≠ 0` iff `j` couples into `i`.
    pub pi: DMatrix<f64>,
    /// n×n inner-coupling matrix.
    pub g: DMatrix<f64>,
    pub nominal: Dynamics,
    /// Dynamics used for the simulated truth; `None` means the nominal model.
    pub truth: Option<Dynamics>,
    pub h: Vec<DMatrix<f64>>,
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub e1: Vec<DMatrix<f64>>,
    pub e2: Vec<DMatrix<f64>>,
    /// Suppresses process and measurement noise draws. `Q`, `R` remain PD.
    pub noiseless: bool,
}

/// Validated network description. Read-only after construction.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    spec: ModelSpec,
    n: usize,
    q_chol: Vec<DMatrix<f64>>,
    r_chol: Vec<DMatrix<f64>>,
    coupled: Vec<Vec<usize>>,
    comm: Vec<Vec<usize>>,
}

impl NetworkModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let nodes = spec.pi.nrows();
        if nodes == 0 || !spec.pi.is_square() {
            return Err(Error::Validation(format!(
                "coupling matrix must be square and non-empty, got {:?}",
                spec.pi.shape()
            )));
        }
        if !(spec.coupling >= 0.0 && spec.coupling.is_finite()) {
            return Err(Error::Validation(format!(
                "coupling coefficient must be finite and non-negative, got {}",
                spec.coupling
            )));
        }
        if !linalg::is_finite(&spec.pi) {
            return Err(Error::Validation("coupling strengths must be finite".into()));
        }
        let n = spec.g.nrows();
        if n == 0 || !spec.g.is_square() {
            return Err(Error::dim("inner coupling G", "n×n", format!("{:?}", spec.g.shape())));
        }
        spec.nominal.check_dim(n)?;
        if let Some(t) = &spec.truth {
            t.check_dim(n)?;
        }
        for (name, list) in [("H", &spec.h), ("Q", &spec.q), ("R", &spec.r), ("E1", &spec.e1), ("E2", &spec.e2)] {
            if list.len() != nodes {
                return Err(Error::Validation(format!(
                    "{name} must have one entry per node ({nodes}), got {}",
                    list.len()
                )));
            }
        }

        let mut q_chol = Vec::with_capacity(nodes);
        let mut r_chol = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let h = &spec.h[i];
            let r_dim = h.nrows();
            if h.ncols() != n || r_dim == 0 {
                return Err(Error::dim("H_i", format!("r×{n}"), format!("{:?} (node {i})", h.shape())));
            }
            if spec.q[i].shape() != (n, n) {
                return Err(Error::dim("Q_i", format!("{n}×{n}"), format!("{:?} (node {i})", spec.q[i].shape())));
            }
            if spec.r[i].shape() != (r_dim, r_dim) {
                return Err(Error::dim("R_i", format!("{r_dim}×{r_dim}"), format!("{:?} (node {i})", spec.r[i].shape())));
            }
            if spec.e1[i].nrows() != n || spec.e2[i].nrows() != n {
                return Err(Error::dim(
                    "E1_i/E2_i",
                    format!("{n} rows"),
                    format!("{:?}/{:?} (node {i})", spec.e1[i].shape(), spec.e2[i].shape()),
                ));
            }
            for (name, m) in [("H", h), ("E1", &spec.e1[i]), ("E2", &spec.e2[i])] {
                if !linalg::is_finite(m) {
                    return Err(Error::Validation(format!("{name} of node {i} must be finite")));
                }
            }
            if !linalg::is_spd(&spec.q[i]) {
                return Err(Error::Validation(format!("Q of node {i} must be symmetric positive definite")));
            }
            if !linalg::is_spd(&spec.r[i]) {
                return Err(Error::Validation(format!("R of node {i} must be symmetric positive definite")));
            }
            q_chol.push(spec.q[i].clone().cholesky().expect("checked SPD").l());
            r_chol.push(spec.r[i].clone().cholesky().expect("checked SPD").l());
        }

        let coupled: Vec<Vec<usize>> = (0..nodes)
            .map(|i| (0..nodes).filter(|&j| j != i && spec.pi[(i, j)] != 0.0).collect())
            .collect();
        for (i, nb) in coupled.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let sum: f64 = nb.iter().map(|&j| spec.pi[(i, j)]).sum();
            if sum <= 0.0 {
                return Err(Error::Validation(format!(
                    "node {i}: sum of off-diagonal coupling strengths must be positive, got {sum}"
                )));
            }
        }
        let comm: Vec<Vec<usize>> = (0..nodes)
            .map(|i| {
                (0..nodes)
                    .filter(|&j| j == i || spec.pi[(i, j)] != 0.0 || spec.pi[(j, i)] != 0.0)
                    .collect()
            })
            .collect();

        Ok(Self {
            spec,
            n,
            q_chol,
            r_chol,
            coupled,
            comm,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn nodes(&self) -> usize {
        self.spec.pi.nrows()
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn meas_dim(&self, i: usize) -> usize {
        self.spec.h[i].nrows()
    }

    pub fn coupling(&self) -> f64 {
        self.spec.coupling
    }

    pub fn pi(&self) -> &DMatrix<f64> {
        &self.spec.pi
    }

    pub fn pi_ij(&self, i: usize, j: usize) -> f64 {
        self.spec.pi[(i, j)]
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.spec.g
    }

    pub fn h(&self, i: usize) -> &DMatrix<f64> {
        &self.spec.h[i]
    }

    pub fn q(&self, i: usize) -> &DMatrix<f64> {
        &self.spec.q[i]
    }

    pub fn r(&self, i: usize) -> &DMatrix<f64> {
        &self.spec.r[i]
    }

    pub fn e1(&self, i: usize) -> &DMatrix<f64> {
        &self.spec.e1[i]
    }

    pub fn e2(&self, i: usize) -> &DMatrix<f64> {
        &self.spec.e2[i]
    }

    /// `E_i = [E1_i, E2_i]`.
    pub fn e(&self, i: usize) -> DMatrix<f64> {
        linalg::hcat(&[&self.spec.e1[i], &self.spec.e2[i]])
    }

    pub fn nominal(&self) -> &Dynamics {
        &self.spec.nominal
    }

    pub fn truth_dynamics(&self) -> &Dynamics {
        self.spec.truth.as_ref().unwrap_or(&self.spec.nominal)
    }

    pub fn noiseless(&self) -> bool {
        self.spec.noiseless
    }

    /// Nodes `j ≠ i` with `π_ij ≠ 0`, ascending.
    pub fn coupled_neighbors(&self, i: usize) -> &[usize] {
        &self.coupled[i]
    }

    /// `Σ_{j≠i} π_ij` over coupled neighbors (0 for isolated nodes).
    pub fn neighbor_pi_sum(&self, i: usize) -> f64 {
        self.coupled[i].iter().map(|&j| self.spec.pi[(i, j)]).sum()
    }

    /// Communication neighborhood of `i`: itself plus every node coupled to
    /// it in either direction, ascending.
    pub fn comm_neighbors(&self, i: usize) -> &[usize] {
        &self.comm[i]
    }

    /// `F + a π_ii G`.
    pub fn shifted_jacobian(&self, i: usize, f: &DMatrix<f64>) -> DMatrix<f64> {
        f + self.spec.g.clone() * (self.spec.coupling * self.spec.pi[(i, i)])
    }

    /// `max_{i,j} π_ij`.
    pub fn pi_max(&self) -> f64 {
        self.spec.pi.max()
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.nodes() {
            return Err(Error::Validation(format!("node id {i} out of range 0..{}", self.nodes())));
        }
        Ok(())
    }
}

/// Stacked true states at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub k: usize,
    pub x: Vec<DVector<f64>>,
}

impl GlobalState {
    pub fn new(x: Vec<DVector<f64>>) -> Self {
        Self { k: 0, x }
    }
}

/// How `Δ1`, `Δ2` are realized in the truth simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum UncertaintyMode {
    Zero,
    /// User-supplied per-node matrices, each with spectral norm ≤ 1.
    Fixed {
        delta1: Vec<DMatrix<f64>>,
        delta2: Vec<DMatrix<f64>>,
    },
    /// Fresh random matrices every step, rescaled to a norm `u ~ U[0, 1]`.
    RandomPerStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyDraw {
    pub delta1: Vec<DMatrix<f64>>,
    pub delta2: Vec<DMatrix<f64>>,
}

/// Slack allowed on `‖Δ‖₂ ≤ 1`.
pub const DELTA_NORM_TOL: f64 = 1e-12;

impl UncertaintyDraw {
    pub fn zero(model: &NetworkModel) -> Self {
        let n = model.dim();
        Self {
            delta1: (0..model.nodes()).map(|i| DMatrix::zeros(model.e1(i).ncols(), n)).collect(),
            delta2: (0..model.nodes()).map(|i| DMatrix::zeros(model.e2(i).ncols(), n)).collect(),
        }
    }
}

pub fn eval_nominal_f(model: &NetworkModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != model.dim() {
        return Err(Error::dim("eval_nominal_f", model.dim(), x.len()));
    }
    model.nominal().eval(x)
}

/// Jacobian of the nominal dynamics.
pub fn eval_jacobian_f(model: &NetworkModel, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    if x.len() != model.dim() {
        return Err(Error::dim("eval_jacobian_f", model.dim(), x.len()));
    }
    model.nominal().jacobian(x)
}

fn gaussian<R: Rng + ?Sized>(chol: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(chol.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    chol * z
}

/// Advance the true network one step.
pub fn step_truth<R: Rng + ?Sized>(
    model: &NetworkModel,
    s: &GlobalState,
    draw: &UncertaintyDraw,
    rng: &mut R,
) -> Result<GlobalState> {
    let nodes = model.nodes();
    if s.x.len() != nodes {
        return Err(Error::dim("step_truth: state count", nodes, s.x.len()));
    }
    if draw.delta1.len() != nodes || draw.delta2.len() != nodes {
        return Err(Error::dim("step_truth: uncertainty draw", nodes, draw.delta1.len()));
    }
    let a = model.coupling();
    let truth = model.truth_dynamics();
    let mut next = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let xi = &s.x[i];
        if xi.len() != model.dim() {
            return Err(Error::dim("step_truth: state", model.dim(), xi.len()));
        }
        let mut x = truth.eval(xi)?;
        x += model.e1(i) * (&draw.delta1[i] * xi);
        let mut coupled = DVector::zeros(model.dim());
        for j in 0..nodes {
            let p = model.pi_ij(i, j);
            if p != 0.0 {
                coupled += &s.x[j] * p;
            }
        }
        x += model.g() * coupled * a;
        if !model.noiseless() {
            x += gaussian(&model.q_chol[i], rng);
        }
        if !linalg::is_finite_vec(&x) {
            return Err(Error::Divergence { step: s.k + 1, node: i });
        }
        next.push(x);
    }
    Ok(GlobalState { k: s.k + 1, x: next })
}

/// `y = H_i x_i + ν`.
pub fn measure<R: Rng + ?Sized>(
    model: &NetworkModel,
    i: usize,
    x_i: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    model.check_node(i)?;
    if x_i.len() != model.dim() {
        return Err(Error::dim("measure", model.dim(), x_i.len()));
    }
    let mut y = model.h(i) * x_i;
    if !model.noiseless() {
        y += gaussian(&model.r_chol[i], rng);
    }
    Ok(y)
}

fn random_contraction<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(rows, cols);
    }
    let m = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = linalg::spectral_norm(&m);
    let u: f64 = rng.sample(Uniform::new_inclusive(0.0, 1.0).expect("valid range"));
    if norm > 0.0 {
        m * (u / norm)
    } else {
        m
    }
}

pub fn sample_uncertainty<R: Rng + ?Sized>(
    model: &NetworkModel,
    mode: &UncertaintyMode,
    rng: &mut R,
) -> Result<UncertaintyDraw> {
    let n = model.dim();
    match mode {
        UncertaintyMode::Zero => Ok(UncertaintyDraw::zero(model)),
        UncertaintyMode::Fixed { delta1, delta2 } => {
            validate_fixed(model, delta1, delta2)?;
            Ok(UncertaintyDraw {
                delta1: delta1.clone(),
                delta2: delta2.clone(),
            })
        }
        UncertaintyMode::RandomPerStep => {
            let mut d1 = Vec::with_capacity(model.nodes());
            let mut d2 = Vec::with_capacity(model.nodes());
            for i in 0..model.nodes() {
                d1.push(random_contraction(model.e1(i).ncols(), n, rng));
                d2.push(random_contraction(model.e2(i).ncols(), n, rng));
            }
            Ok(UncertaintyDraw { delta1: d1, delta2: d2 })
        }
    }
}

/// Shape and norm checks for user-supplied `Δ` matrices.
pub fn validate_fixed(model: &NetworkModel, delta1: &[DMatrix<f64>], delta2: &[DMatrix<f64>]) -> Result<()> {
    let n = model.dim();
    if delta1.len() != model.nodes() || delta2.len() != model.nodes() {
        return Err(Error::Validation(format!(
            "fixed uncertainty needs one Δ1 and one Δ2 per node ({})",
            model.nodes()
        )));
    }
    for i in 0..model.nodes() {
        for (name, d, cols) in [("Δ1", &delta1[i], model.e1(i).ncols()), ("Δ2", &delta2[i], model.e2(i).ncols())] {
            if d.shape() != (cols, n) {
                return Err(Error::dim("fixed uncertainty", format!("{cols}×{n}"), format!("{name} {:?} (node {i})", d.shape())));
            }
            let norm = linalg::spectral_norm(d);
            if norm > 1.0 + DELTA_NORM_TOL {
                return Err(Error::Validation(format!(
                    "{name} of node {i} has spectral norm {norm}, must be ≤ 1"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(dynamics: Dynamics, n: usize) -> NetworkModel {
        NetworkModel::new(ModelSpec {
            coupling: 0.0,
            pi: DMatrix::from_element(1, 1, 1.0),
            g: DMatrix::zeros(n, n),
            nominal: dynamics,
            truth: None,
            h: vec![DMatrix::identity(1, n)],
            q: vec![DMatrix::identity(n, n)],
            r: vec![DMatrix::identity(1, 1)],
            e1: vec![DMatrix::zeros(n, 1)],
            e2: vec![DMatrix::zeros(n, 1)],
            noiseless: true,
        })
        .unwrap()
    }

    #[test]
    fn nominal_f_examples() {
        let m = single(Dynamics::paper_sine(), 2);
        let y = eval_nominal_f(&m, &DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0]);

        let lin = single(Dynamics::Linear(DMatrix::identity(2, 2)), 2);
        let y = eval_nominal_f(&lin, &DVector::from_vec(vec![3.0, -1.0])).unwrap();
        assert_eq!(y.as_slice(), &[3.0, -1.0]);

        // Scalar oracle: 0.9·2 + sin(0.5·(−2.8)), 0.9·(−2.8) − sin(0.5·2).
        let expected = [1.8 + (-1.4f64).sin(), -2.52 - 1.0f64.sin()];
        let y = eval_nominal_f(&m, &DVector::from_vec(vec![2.0, -2.8])).unwrap();
        assert!((y[0] - expected[0]).abs() < 1e-15);
        assert!((y[1] - expected[1]).abs() < 1e-15);
        assert!((y[0] - 0.814_550_270_011_539_9).abs() < 1e-12);
        assert!((y[1] + 3.361_470_984_807_896_3).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = single(Dynamics::paper_sine(), 2);
        assert!(matches!(
            eval_nominal_f(&m, &DVector::zeros(3)),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            eval_jacobian_f(&m, &DVector::zeros(1)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn jacobian_at_origin() {
        let m = single(Dynamics::paper_sine(), 2);
        let f = eval_jacobian_f(&m, &DVector::zeros(2)).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.9, 0.5, -0.5, 0.9]);
        assert!(linalg::max_abs_diff(&f, &want) < 1e-15);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let m = single(Dynamics::paper_sine(), 2);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let f = eval_jacobian_f(&m, &x).unwrap();
        let h = 1e-6;
        for c in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let d = (eval_nominal_f(&m, &xp).unwrap() - eval_nominal_f(&m, &xm).unwrap()) / (2.0 * h);
            for r in 0..2 {
                assert!((f[(r, c)] - d[r]).abs() <= 1e-8, "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn zero_noise_fixed_point() {
        let m = single(Dynamics::paper_sine(), 2);
        let s = GlobalState::new(vec![DVector::zeros(2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let next = step_truth(&m, &s, &UncertaintyDraw::zero(&m), &mut rng).unwrap();
        assert_eq!(next.k, 1);
        assert_eq!(next.x[0].as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn measurement_examples() {
        let mut spec = single(Dynamics::paper_sine(), 2).spec().clone();
        spec.h = vec![DMatrix::from_row_slice(1, 2, &[0.90, 0.25])];
        let m = NetworkModel::new(spec.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = measure(&m, 0, &DVector::from_vec(vec![1.0, 0.0]), &mut rng).unwrap();
        assert!((y[0] - 0.90).abs() < 1e-15);

        spec.h = vec![DMatrix::zeros(1, 2)];
        let m = NetworkModel::new(spec).unwrap();
        let y = measure(&m, 0, &DVector::from_vec(vec![4.0, -7.0]), &mut rng).unwrap();
        assert_eq!(y[0], 0.0);
        assert!(measure(&m, 5, &DVector::zeros(2), &mut rng).is_err());
    }

    #[test]
    fn uncertainty_modes() {
        let mut spec = single(Dynamics::paper_sine(), 2).spec().clone();
        spec.e1 = vec![DMatrix::identity(2, 2)];
        spec.e2 = vec![DMatrix::identity(2, 2)];
        let m = NetworkModel::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);

        let z = sample_uncertainty(&m, &UncertaintyMode::Zero, &mut rng).unwrap();
        assert!(z.delta1[0].iter().all(|v| *v == 0.0));
        assert!(z.delta2[0].iter().all(|v| *v == 0.0));

        let too_big = UncertaintyMode::Fixed {
            delta1: vec![DMatrix::identity(2, 2) * 2.0],
            delta2: vec![DMatrix::zeros(2, 2)],
        };
        assert!(matches!(
            sample_uncertainty(&m, &too_big, &mut rng),
            Err(Error::Validation(_))
        ));

        for _ in 0..1000 {
            let d = sample_uncertainty(&m, &UncertaintyMode::RandomPerStep, &mut rng).unwrap();
            // SVD oracle per draw.
            for mat in d.delta1.iter().chain(d.delta2.iter()) {
                let s = mat.clone().svd(false, false).singular_values;
                assert!(s.max() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_models() {
        let good = single(Dynamics::paper_sine(), 2).spec().clone();
        let mut bad = good.clone();
        bad.q = vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])];
        assert!(matches!(NetworkModel::new(bad), Err(Error::Validation(_))));

        let mut bad = good.clone();
        bad.h = vec![DMatrix::zeros(1, 3)];
        assert!(matches!(NetworkModel::new(bad), Err(Error::Dimension { .. })));

        let mut bad = good;
        bad.coupling = -1.0;
        assert!(NetworkModel::new(bad).is_err());
    }
}

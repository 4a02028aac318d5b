#![allow(dead_code)]

pub mod oracle;
pub mod props;

use std::sync::Arc;

use drea::comms::{InfoPackage, RoundBus};
use drea::estimator::{node_step, NodeBelief, StepIntermediates};
use drea::harness::config::builtin_paper;
use drea::harness::Scenario;
use drea::model::{Dynamics, ModelSpec, NetworkModel};
use drea::tuner::TunerConfig;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn randv(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `M Mᵀ + shift·I`.
pub fn random_spd(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = randn(n, n, rng);
    &m * m.transpose() + DMatrix::identity(n, n) * shift
}

pub fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).abs().max()
}

pub fn max_diff_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    (a - b).abs().max()
}

/// Dense inverse through LU, independent of the crate helpers.
pub fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("invertible")
}

pub fn paper() -> Scenario {
    builtin_paper().build().unwrap()
}

/// Identity coupling matrix, so no node has a coupled neighbor.
pub fn decoupled_linear(nodes: usize, a_mat: DMatrix<f64>, h: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> NetworkModel {
    let n = a_mat.nrows();
    NetworkModel::new(ModelSpec {
        coupling: 0.0,
        pi: DMatrix::identity(nodes, nodes),
        g: DMatrix::zeros(n, n),
        nominal: Dynamics::Linear(a_mat),
        truth: None,
        h: vec![h; nodes],
        q: vec![q; nodes],
        r: vec![r; nodes],
        e1: vec![DMatrix::zeros(n, 1); nodes],
        e2: vec![DMatrix::zeros(n, 1); nodes],
        noiseless: false,
    })
    .unwrap()
}

/// Textbook covariance-form Kalman step.
pub fn kalman_step(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let xp = a * x;
    let pp = a * p * a.transpose() + q;
    let s = h * &pp * h.transpose() + r;
    let k = &pp * h.transpose() * inv(&s);
    let x_new = &xp + &k * (y - h * &xp);
    let i = DMatrix::identity(p.nrows(), p.nrows());
    let ikh = &i - &k * h;
    let p_new = &ikh * &pp * ikh.transpose() + &k * r * k.transpose();
    (x_new, p_new)
}

/// One synchronous round of every node through the bus.
pub fn drea_round(
    beliefs: &[NodeBelief],
    ys: &[DVector<f64>],
    model: &NetworkModel,
    bus: &RoundBus,
    cfg: &TunerConfig,
) -> (Vec<NodeBelief>, Vec<StepIntermediates>) {
    for b in beliefs {
        bus.publish(b.package().unwrap()).unwrap();
    }
    let mut next = Vec::new();
    let mut inter = Vec::new();
    for (i, b) in beliefs.iter().enumerate() {
        let pkgs = bus.collect(i).unwrap();
        let (nb, st) = node_step(b, &pkgs, &ys[i], model, cfg).unwrap();
        next.push(nb);
        inter.push(st);
    }
    bus.advance_round().unwrap();
    (next, inter)
}

pub fn packages(beliefs: &[NodeBelief]) -> Vec<Arc<InfoPackage>> {
    beliefs.iter().map(|b| Arc::new(b.package().unwrap())).collect()
}

/// Initial beliefs of the paper scenario from the fixed starting states
/// offset by a seeded perturbation.
pub fn paper_beliefs(sc: &Scenario, seed: u64) -> Vec<NodeBelief> {
    let mut r = rng(seed);
    (0..sc.model.nodes())
        .map(|i| {
            let x = sc.x0[i].add_scalar(0.2 * (i + 1) as f64 * r.sample::<f64, _>(StandardNormal));
            NodeBelief::initial(&sc.model, i, x, &sc.breve_p0, sc.config.tuner.beta).unwrap()
        })
        .collect()
}

/// Noisy measurements of the given true states.
pub fn measure_all(model: &NetworkModel, xs: &[DVector<f64>], rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..model.nodes())
        .map(|i| drea::model::measure(model, i, &xs[i], rng).unwrap())
        .collect()
}

/// Largest per-entry gaps `(x, P)` between the estimator and a textbook
/// Kalman filter on a two-node decoupled linear network over `steps`.
pub fn kalman_equivalence(steps: usize, seed: u64) -> (f64, f64) {
    use drea::model::{step_truth, GlobalState, UncertaintyDraw};
    use drea::tuner::{AlphaPolicy, LambdaPolicy};
    let a = DMatrix::from_row_slice(2, 2, &[0.95, 0.1, -0.05, 0.9]);
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.3]);
    let q = DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.01]);
    let r = DMatrix::from_element(1, 1, 0.04);
    let model = decoupled_linear(2, a.clone(), h.clone(), q.clone(), r.clone());
    let cfg = TunerConfig {
        alpha_policy: AlphaPolicy::Fixed(0.0),
        lambda_policy: LambdaPolicy::Rule13,
        ..TunerConfig::default()
    };
    let mut g = rng(seed);
    let breve_p0 = DMatrix::identity(2, 2) * 0.5;
    let x0 = vec![DVector::from_vec(vec![1.0, -1.0]), DVector::from_vec(vec![-0.5, 2.0])];
    let mut truth = GlobalState::new(x0);
    let mut beliefs: Vec<NodeBelief> = (0..2)
        .map(|i| NodeBelief::initial(&model, i, DVector::zeros(2), &breve_p0, cfg.beta).unwrap())
        .collect();
    let p0 = inv(&(inv(&breve_p0) + h.transpose() * inv(&r) * &h));
    let mut kf: Vec<(DVector<f64>, DMatrix<f64>)> = (0..2).map(|_| (DVector::zeros(2), p0.clone())).collect();
    let (mut gx, mut gp) = (0.0_f64, max_diff(&beliefs[0].p, &p0));
    let bus = RoundBus::for_model(&model, 0);
    let zero = UncertaintyDraw::zero(&model);
    for _ in 0..steps {
        truth = step_truth(&model, &truth, &zero, &mut g).unwrap();
        let ys = measure_all(&model, &truth.x, &mut g);
        let (next, inter) = drea_round(&beliefs, &ys, &model, &bus, &cfg);
        beliefs = next;
        for i in 0..2 {
            assert_eq!(inter[i].tuner.lambda_bar, 0.0);
            assert_eq!(inter[i].tuner.alpha, 0.0);
            kf[i] = kalman_step(&kf[i].0, &kf[i].1, &a, &h, &q, &r, &ys[i]);
            gx = gx.max(max_diff_v(&beliefs[i].x_hat, &kf[i].0));
            gp = gp.max(max_diff(&beliefs[i].p, &kf[i].1));
        }
    }
    (gx, gp)
}

/// Largest per-entry gap between the crate and the transcription oracle
/// over `steps` steps of the given scenario (fixed α, rule-13 λ̄), across
/// estimates, covariances and both gains.
pub fn transcription_gap(sc: &Scenario, steps: usize, seed: u64) -> f64 {
    use drea::model::{step_truth, GlobalState, UncertaintyDraw};
    use drea::tuner::AlphaPolicy;
    let model = &sc.model;
    let alpha = match sc.config.tuner.alpha_policy {
        AlphaPolicy::Fixed(a) => a,
        _ => panic!("transcription oracle needs a fixed α"),
    };
    let beta = sc.config.tuner.beta;
    let mut beliefs = paper_beliefs(sc, seed);
    let mut xs: Vec<DVector<f64>> = beliefs.iter().map(|b| b.x_hat.clone()).collect();
    let mut ps: Vec<DMatrix<f64>> = (0..model.nodes())
        .map(|i| oracle::initial_p(model, i, &sc.breve_p0, beta))
        .collect();
    let mut gap = (0..model.nodes()).map(|i| max_diff(&beliefs[i].p, &ps[i])).fold(0.0, f64::max);
    let mut g = rng(seed ^ 0x5eed);
    let mut truth = GlobalState::new(sc.x0.clone());
    let zero = UncertaintyDraw::zero(model);
    let bus = RoundBus::for_model(model, 0);
    for _ in 0..steps {
        truth = step_truth(model, &truth, &zero, &mut g).unwrap();
        let ys = measure_all(model, &truth.x, &mut g);
        let (next, inter) = drea_round(&beliefs, &ys, model, &bus, &sc.config.tuner);
        let orc = oracle::step(model, 0.5, &xs, &ps, &ys, alpha, beta);
        for i in 0..model.nodes() {
            let o = &orc[i];
            assert!((inter[i].tuner.lambda_bar - o.lambda_bar).abs() <= 1e-12 * o.lambda_bar.max(1.0));
            assert_eq!(inter[i].tuner.alpha, alpha);
            gap = gap
                .max(max_diff_v(&next[i].x_hat, &o.x))
                .max(max_diff(&next[i].p, &o.p))
                .max(max_diff(&inter[i].k1, &o.k1));
            assert_eq!(inter[i].k2.len(), o.k2.len());
            for ((j1, k1), (j2, k2)) in inter[i].k2.iter().zip(&o.k2) {
                assert_eq!(j1, j2);
                gap = gap.max(max_diff(k1, k2));
            }
        }
        xs = orc.iter().map(|o| o.x.clone()).collect();
        ps = orc.into_iter().map(|o| o.p).collect();
        beliefs = next;
    }
    gap
}

/// Random coupled linear network: every off-diagonal `π_ij > 0`, random
/// `G`, `H`, `E`, SPD `Q`, `R`.
pub fn random_network(g: &mut ChaCha8Rng, nodes: usize, n: usize, r: usize, with_e: bool) -> NetworkModel {
    let a = g.random_range(0.05..0.5);
    let pi = DMatrix::from_fn(nodes, nodes, |i, j| {
        if i == j {
            -g.random_range(0.0..0.5)
        } else {
            g.random_range(0.05..0.3)
        }
    });
    let e_scale = if with_e { 0.3 } else { 0.0 };
    NetworkModel::new(ModelSpec {
        coupling: a,
        pi,
        g: randn(n, n, g) * 0.3,
        nominal: Dynamics::Linear(randn(n, n, g) * 0.5),
        truth: None,
        h: (0..nodes).map(|_| randn(r, n, g)).collect(),
        q: (0..nodes).map(|_| random_spd(n, 0.1, g) * 0.1).collect(),
        r: (0..nodes).map(|_| random_spd(r, 0.1, g) * 0.1).collect(),
        e1: (0..nodes).map(|_| randn(n, n, g) * e_scale).collect(),
        e2: (0..nodes).map(|_| randn(n, n, g) * e_scale).collect(),
        noiseless: false,
    })
    .unwrap()
}

pub fn random_beliefs(model: &NetworkModel, g: &mut ChaCha8Rng) -> Vec<NodeBelief> {
    (0..model.nodes())
        .map(|i| NodeBelief {
            node: i,
            k: 0,
            x_hat: randv(model.dim(), g),
            p: random_spd(model.dim(), 0.2, g) * 0.3,
        })
        .collect()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

/// Single-node scalar network `x⁺ = f x + w`, `y = h x + v`.
pub fn scalar_network(f: f64, h: f64, q: f64, r: f64, e1: f64, e2: f64) -> NetworkModel {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    NetworkModel::new(ModelSpec {
        coupling: 0.0,
        pi: one(1.0),
        g: one(0.0),
        nominal: Dynamics::Linear(one(f)),
        truth: None,
        h: vec![one(h)],
        q: vec![one(q)],
        r: vec![one(r)],
        e1: vec![one(e1)],
        e2: vec![one(e2)],
        noiseless: false,
    })
    .unwrap()
}

/// The reference network with coupling coefficient `a` and sine frequency.
pub fn sine_network(a: f64) -> NetworkModel {
    let sc = paper();
    let mut spec = sc.model.spec().clone();
    spec.coupling = a;
    NetworkModel::new(spec).unwrap()
}

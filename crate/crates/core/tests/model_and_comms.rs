mod common;

use common::*;
use drea::comms::RoundBus;
use drea::harness::config::{builtin_paper, preset_pi, Topology};
use drea::model::{measure, step_truth, GlobalState, NetworkModel, UncertaintyDraw};
use nalgebra::{DMatrix, DVector};

fn noiseless(model: &NetworkModel) -> NetworkModel {
    let mut spec = model.spec().clone();
    spec.noiseless = true;
    NetworkModel::new(spec).unwrap()
}

#[test]
fn reference_step_matches_hand_computation() {
    let sc = paper();
    let m = noiseless(&sc.model);
    let s = GlobalState::new(sc.x0.clone());
    let next = step_truth(&m, &s, &UncertaintyDraw::zero(&m), &mut rng(0)).unwrap();
    let x0: [[f64; 2]; 4] = [[2.0, -2.8], [2.5, -2.5], [2.5, -2.0], [2.0, -2.0]];
    for i in 0..4 {
        let (u, v) = (x0[i][0], x0[i][1]);
        let mut want = [0.9 * u + (0.5 * v).sin(), 0.9 * v - (0.5 * u).sin()];
        for j in 0..4 {
            let pij = if i == j { -0.3 } else { 0.1 };
            want[0] += 0.1 * pij * 0.2 * x0[j][0];
            want[1] += 0.1 * pij * 0.2 * x0[j][1];
        }
        assert!((next.x[i][0] - want[0]).abs() < 1e-14);
        assert!((next.x[i][1] - want[1]).abs() < 1e-14);
    }
}

#[test]
fn process_noise_has_configured_covariance() {
    let sc = paper();
    let quiet = noiseless(&sc.model);
    let s = GlobalState::new(sc.x0.clone());
    let zero = UncertaintyDraw::zero(&sc.model);
    let mean = step_truth(&quiet, &s, &zero, &mut rng(0)).unwrap().x[0].clone();
    let mut g = rng(400);
    let reps = 10_000;
    let mut cov = DMatrix::zeros(2, 2);
    for _ in 0..reps {
        let d = step_truth(&sc.model, &s, &zero, &mut g).unwrap().x[0].clone() - &mean;
        cov += &d * d.transpose();
    }
    cov /= reps as f64;
    assert!((cov[(0, 0)] / 0.001 - 1.0).abs() < 0.1);
    assert!((cov[(1, 1)] / 0.001 - 1.0).abs() < 0.1);
    assert!(cov[(0, 1)].abs() < 0.1 * 0.001);
}

#[test]
fn measurement_noise_has_configured_variance() {
    let sc = paper();
    let x = DVector::from_vec(vec![1.0, 2.0]);
    let hx = (sc.model.h(1) * &x)[0];
    let mut g = rng(401);
    let reps = 10_000;
    let var = (0..reps)
        .map(|_| (measure(&sc.model, 1, &x, &mut g).unwrap()[0] - hx).powi(2))
        .sum::<f64>()
        / reps as f64;
    assert!((var / 0.01 - 1.0).abs() < 0.1, "{var}");
}

#[test]
fn reference_topology_delivers_four_packages_every_round() {
    let sc = paper();
    let bus = RoundBus::for_model(&sc.model, 0);
    let mut beliefs = paper_beliefs(&sc, 1);
    for k in 0..100 {
        for b in &beliefs {
            bus.publish(b.package().unwrap()).unwrap();
        }
        let counts: Vec<usize> = (0..4).map(|i| bus.collect(i).unwrap().len()).collect();
        assert_eq!(counts, vec![4; 4]);
        assert_eq!(bus.delivered(), 16);
        assert_eq!(bus.advance_round().unwrap(), k + 1);
        for b in &mut beliefs {
            b.k += 1;
        }
    }
}

#[test]
fn chain_neighborhoods() {
    let mut cfg = builtin_paper();
    cfg.model.topology = Topology::Chain;
    let sc = cfg.build().unwrap();
    let pi = preset_pi(Topology::Chain, 4).unwrap();
    assert_eq!(pi[(1, 0)], 0.1);
    assert_eq!(pi[(0, 2)], 0.0);
    let bus = RoundBus::for_model(&sc.model, 0);
    for b in paper_beliefs(&sc, 2) {
        bus.publish(b.package().unwrap()).unwrap();
    }
    let senders: Vec<usize> = bus.collect(0).unwrap().iter().map(|p| p.sender).collect();
    assert_eq!(senders, vec![0, 1]);
    let senders: Vec<usize> = bus.collect(2).unwrap().iter().map(|p| p.sender).collect();
    assert!(!senders.contains(&0));
}

//! Synchronous-round exchange of `(x̂, P)` packages between neighbors.
//!
//! A round is: every node publishes exactly one package, the barrier is
//! reached, every node collects its mailbox, then the bus advances.

use std::sync::{Arc, Mutex, MutexGuard};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::NetworkModel;

/// Immutable snapshot of one node's estimate at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoPackage {
    pub sender: usize,
    pub k: usize,
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl InfoPackage {
    pub fn new(sender: usize, k: usize, x_hat: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != x_hat.len() || !p.is_square() {
            return Err(Error::dim("InfoPackage", format!("{0}×{0}", x_hat.len()), format!("{:?}", p.shape())));
        }
        if !linalg::is_symmetric(&p, linalg::SYMMETRY_TOL) {
            return Err(Error::Protocol(format!("package from node {sender} carries a non-symmetric P")));
        }
        if !linalg::is_spd(&p) || !linalg::is_finite_vec(&x_hat) {
            return Err(Error::Protocol(format!(
                "package from node {sender} carries a non-finite estimate or non-PD P"
            )));
        }
        Ok(Self { sender, k, x_hat, p })
    }
}

#[derive(Debug)]
struct BusState {
    round: usize,
    mailboxes: Vec<Vec<Arc<InfoPackage>>>,
    published: Vec<bool>,
    collected: Vec<bool>,
    delivered: usize,
}

/// In-process message bus. All methods take `&self` so node tasks may publish
/// concurrently.
#[derive(Debug)]
pub struct RoundBus {
    /// `receivers[s]`: nodes whose neighborhood contains `s`.
    receivers: Vec<Vec<usize>>,
    neighborhoods: Vec<Vec<usize>>,
    state: Mutex<BusState>,
}

impl RoundBus {
    /// `neighborhoods[i]` is the set of senders node `i` listens to; `i` is
    /// added when missing.
    pub fn new(mut neighborhoods: Vec<Vec<usize>>, start_round: usize) -> Result<Self> {
        let nodes = neighborhoods.len();
        let mut receivers = vec![Vec::new(); nodes];
        for (i, nb) in neighborhoods.iter_mut().enumerate() {
            if !nb.contains(&i) {
                nb.push(i);
            }
            nb.sort_unstable();
            nb.dedup();
            for &j in nb.iter() {
                if j >= nodes {
                    return Err(Error::Validation(format!("neighborhood of node {i} names unknown node {j}")));
                }
                receivers[j].push(i);
            }
        }
        Ok(Self {
            receivers,
            neighborhoods,
            state: Mutex::new(BusState {
                round: start_round,
                mailboxes: vec![Vec::new(); nodes],
                published: vec![false; nodes],
                collected: vec![false; nodes],
                delivered: 0,
            }),
        })
    }

    /// Bus over the model's communication graph (coupling links in either
    /// direction, plus self).
    pub fn for_model(model: &NetworkModel, start_round: usize) -> Self {
        let nb = (0..model.nodes()).map(|i| model.comm_neighbors(i).to_vec()).collect();
        Self::new(nb, start_round).expect("model neighborhoods are in range")
    }

    pub fn nodes(&self) -> usize {
        self.neighborhoods.len()
    }

    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    fn lock(&self) -> MutexGuard<'_, BusState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn round(&self) -> usize {
        self.lock().round
    }

    /// Packages delivered in the current round so far.
    pub fn delivered(&self) -> usize {
        self.lock().delivered
    }

    /// Deliver `pkg` to every node listening to its sender. Returns the
    /// number of mailboxes it reached.
    pub fn publish(&self, pkg: InfoPackage) -> Result<usize> {
        let mut st = self.lock();
        if pkg.sender >= self.nodes() {
            return Err(Error::Protocol(format!("unknown sender {}", pkg.sender)));
        }
        if pkg.k != st.round {
            return Err(Error::RoundMismatch {
                expected: st.round,
                got: pkg.k,
            });
        }
        if st.published[pkg.sender] {
            return Err(Error::Protocol(format!(
                "node {} already published in round {}",
                pkg.sender, st.round
            )));
        }
        st.published[pkg.sender] = true;
        let pkg = Arc::new(pkg);
        let targets = &self.receivers[pkg.sender];
        for &j in targets {
            st.mailboxes[j].push(Arc::clone(&pkg));
        }
        st.delivered += targets.len();
        Ok(targets.len())
    }

    /// Packages addressed to `i` this round, ordered by sender id.
    pub fn collect(&self, i: usize) -> Result<Vec<Arc<InfoPackage>>> {
        let mut st = self.lock();
        if i >= self.nodes() {
            return Err(Error::Protocol(format!("unknown node {i}")));
        }
        let published = st.published.iter().filter(|p| **p).count();
        if published < self.nodes() {
            return Err(Error::NotReady {
                round: st.round,
                published,
                expected: self.nodes(),
            });
        }
        st.collected[i] = true;
        let mut out = st.mailboxes[i].clone();
        out.sort_by_key(|p| p.sender);
        Ok(out)
    }

    pub fn advance_round(&self) -> Result<usize> {
        let mut st = self.lock();
        if let Some(i) = st.collected.iter().position(|c| !c) {
            return Err(Error::Protocol(format!(
                "cannot advance round {}: node {i} has not collected",
                st.round
            )));
        }
        for m in st.mailboxes.iter_mut() {
            m.clear();
        }
        st.published.iter_mut().for_each(|p| *p = false);
        st.collected.iter_mut().for_each(|c| *c = false);
        st.delivered = 0;
        st.round += 1;
        Ok(st.round)
    }
}

//! Iteration bound for exact IPF: the marginal gap
//! `KL(pi_0 | s_0^(k)) + KL(pi_T | s_T^(k))` drops below `eps` within
//! `ceil(KL(S | Q) / eps)` half-bridges.
//!
//! Half-bridge `k` is `S^(2i) = Q^(i)` (only the terminal marginal is off)
//! or `S^(2i+1) = P^(i+1)` (only the initial marginal is off).

use alloc::vec::Vec;

use super::exact::{path_kl, LqgBridge, LqgIpfState};
use crate::error::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Result {
    pub epsilon: f64,
    /// First `k >= 1` whose marginal gap is below `epsilon`.
    pub k_star: usize,
    /// `KL(S | Q)` against the converged bridge.
    pub kl_bridge: f64,
    pub bound: usize,
    pub pass: bool,
    /// Marginal gaps for `k = 1..=k_star`.
    pub gaps: Vec<f64>,
}

/// Marginal gap of half-bridge `k >= 1` given the states `i = 0..`.
fn gap(bridge: &LqgBridge, states: &[LqgIpfState], k: usize) -> Result<f64, Error> {
    let i = k / 2;
    if k % 2 == 0 {
        let q = bridge.q_marginals(&states[i]);
        bridge.terminal.kl(q.last().unwrap())
    } else {
        bridge.initial.kl(&states[i + 1].p0)
    }
}

/// `KL(S | Q)` where `S` is approximated by `converge_iters` IPF iterations.
pub fn bridge_kl(bridge: &LqgBridge, converge_iters: usize) -> Result<f64, Error> {
    let mut state = bridge.initial_state();
    for _ in 0..converge_iters {
        state = bridge.step(&state)?;
    }
    path_kl(&bridge.initial, &state.kernels, &bridge.kernels)
}

pub fn prop1_bound_check(bridge: &LqgBridge, epsilon: f64, converge_iters: usize, max_half_bridges: usize) -> Result<Prop1Result, Error> {
    let kl_bridge = bridge_kl(bridge, converge_iters)?;
    let bound = libm::ceil(kl_bridge / epsilon) as usize;
    let mut states = alloc::vec![bridge.initial_state()];
    let mut gaps = Vec::new();
    for k in 1..=max_half_bridges {
        while states.len() < k / 2 + 2 {
            let next = bridge.step(states.last().unwrap())?;
            states.push(next);
        }
        let g = gap(bridge, &states, k)?;
        gaps.push(g);
        if g < epsilon {
            return Ok(Prop1Result { epsilon, k_star: k, kl_bridge, bound, pass: k <= bound, gaps });
        }
    }
    Ok(Prop1Result { epsilon, k_star: usize::MAX, kl_bridge, bound, pass: false, gaps })
}

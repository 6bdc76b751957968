//! Estimation of `d pi_end / d q_end^psi` at a terminal point by conditional
//! importance sampling over the backward kernels.
//!
//! The chain `X^(0), ..., X^(M)` on `x_{start:end-1}` keeps the conditional
//! `Q^psi(. | x_end)` invariant. The estimate is the average of
//! `dH/dQ^psi(X^(m))` with `H = gamma_end(x_end) prod L`.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use super::segment::{backward_trajectory_log_ratio, trajectory_log_ratio, Segment};
use crate::error::Error;
use crate::kernels::{EmKernel, TwistedStep};
use crate::linalg::log_sum_exp;
use crate::rng::StreamRng;
use crate::targets::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RnEstimate {
    /// Log of the estimate.
    pub value: f64,
    pub m_used: usize,
}

/// Runs `m` iterations with `p` candidates each, starting from `traj`
/// (`(len + 1) * d` states; its prefix is overwritten by the last chain state).
#[allow(clippy::too_many_arguments)]
pub fn rn_estimate_csmc<P: Path + ?Sized>(
    path: &P,
    kernel: &EmKernel,
    seg: Segment,
    steps: &[TwistedStep],
    traj: &mut [f64],
    p: usize,
    m: usize,
    rng: &mut StreamRng,
) -> Result<RnEstimate, Error> {
    let mut ratios = Vec::with_capacity(m + 1);
    let mut current = trajectory_log_ratio(path, kernel, seg, steps, traj);
    ratios.push(current);
    if m > 0 && p < 2 {
        return Err(Error::InvalidConfig(alloc::format!("conditional sampling needs P >= 2, got {p}")));
    }
    let w = traj.len();
    let mut cands = alloc::vec![0.0; p.saturating_sub(1) * w];
    let mut log_r = alloc::vec![0.0; p];
    for _ in 0..m {
        for q in 0..p - 1 {
            let c = &mut cands[q * w..(q + 1) * w];
            c.copy_from_slice(traj);
            log_r[q] = backward_trajectory_log_ratio(path, kernel, seg, steps, c, rng);
        }
        log_r[p - 1] = current;
        // selection weights dQ^psi/dH = exp(-log_r)
        let sel: Vec<f64> = log_r.iter().map(|r| if r.is_nan() { f64::NEG_INFINITY } else { -r }).collect();
        let norm = log_sum_exp(&sel);
        if !norm.is_finite() {
            return Err(Error::DegenerateWeights { t: seg.end });
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = p - 1;
        for (q, s) in sel.iter().enumerate() {
            acc += (s - norm).exp();
            if u < acc {
                pick = q;
                break;
            }
        }
        if pick < p - 1 {
            traj.copy_from_slice(&cands[pick * w..(pick + 1) * w]);
            current = log_r[pick];
        }
        ratios.push(current);
    }
    let value = log_sum_exp(&ratios) - ((m + 1) as f64).ln();
    Ok(RnEstimate { value, m_used: m })
}

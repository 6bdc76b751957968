//! Backward least-squares fit of the policy refinement `phi` from sampled
//! trajectories and terminal log-ratio estimates.
//!
//! `phi_end` is fit to the terminal estimates. For earlier times the target at
//! `X_t` is `log M_{t+1}^psi(phi_{t+1})(X_t)`, computed as
//! `log M_{t+1}(psi phi)(X_t) - log M_{t+1}(psi)(X_t)` under the twist mode
//! in use. The product `psi phi` is kept integrable, and the refinement is
//! reported as the difference it actually applies.

use alloc::vec::Vec;

use super::segment::SegmentSample;
use crate::error::Error;
use crate::exec;
use crate::kernels::{TwistMode, TwistedStep};
use crate::policy::{fit_quadratic, PolicyMode, QuadraticPolicy};

#[derive(Debug, Clone)]
pub struct AdpResult {
    /// Effective refinements `phi_t`, indexed like the segment policies.
    pub refinement: Vec<QuadraticPolicy>,
    /// Updated policies `psi_t phi_t`.
    pub updated: Vec<QuadraticPolicy>,
    /// Particles dropped for non-finite terminal targets.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdpOptions {
    pub h: f64,
    pub twist: TwistMode,
    pub mode: PolicyMode,
    pub ridge: f64,
}

fn product(psi: &QuadraticPolicy, phi: &QuadraticPolicy, h: f64) -> QuadraticPolicy {
    let mut p = psi.multiply(phi);
    p.clamp_integrable(h);
    p
}

/// Fits refinements on `sample`, drawn with the current `policies`.
pub fn adp_sweep(sample: &SegmentSample, log_phi_end: &[f64], policies: &[QuadraticPolicy], opts: &AdpOptions) -> Result<AdpResult, Error> {
    let len = sample.len;
    let d = sample.d;
    if policies.len() != len {
        return Err(Error::DimensionMismatch { expected: len, got: policies.len() });
    }
    if log_phi_end.len() != sample.n {
        return Err(Error::DimensionMismatch { expected: sample.n, got: log_phi_end.len() });
    }
    let mut refinement = alloc::vec![QuadraticPolicy::identity(d, opts.mode); len];
    let mut updated = policies.to_vec();

    let mut xs = Vec::with_capacity(sample.n * d);
    let mut ys = Vec::with_capacity(sample.n);
    for n in 0..sample.n {
        if log_phi_end[n].is_finite() {
            xs.extend_from_slice(sample.state(n, len));
            ys.push(log_phi_end[n]);
        }
    }
    let dropped = sample.n - ys.len();
    let mut phi = fit_quadratic(&xs, d, &ys, opts.mode, opts.ridge)?;

    for j in (0..len).rev() {
        updated[j] = product(&policies[j], &phi, opts.h);
        refinement[j] = QuadraticPolicy::combine(&[(1.0, &updated[j]), (-1.0, &policies[j])]);
        if j == 0 {
            break;
        }
        // targets at X_{t-1}, t = time of policy j
        let with = TwistedStep::new(opts.h, &updated[j], opts.twist)?;
        let without = TwistedStep::new(opts.h, &policies[j], opts.twist)?;
        let targets = exec::map(sample.n, |n| {
            let x = sample.state(n, j);
            let m = sample.base_mean(n, j);
            with.log_normalizer(m, x) - without.log_normalizer(m, x)
        });
        let xj = sample.column(j);
        phi = fit_quadratic(&xj, d, &targets, opts.mode, opts.ridge)?;
    }
    Ok(AdpResult { refinement, updated, dropped })
}

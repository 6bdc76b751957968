//! Iterative proportional fitting: exact for linear-Gaussian problems and
//! particle-based otherwise.

pub mod adp;
pub mod approx;
pub mod csmc;
pub mod early_stop;
pub mod exact;
pub mod prop1;
pub mod segment;

pub use adp::{adp_sweep, AdpOptions, AdpResult};
pub use approx::{approximate_ipf, IpfOutput, TerminalOverride};
pub use csmc::{rn_estimate_csmc, RnEstimate};
pub use early_stop::{early_stop_check, StopDecision};
pub use exact::{exact_lqg_ipf, forward_marginals, LqgBridge, LqgIpfState, Moments};
pub use prop1::{prop1_bound_check, Prop1Result};
pub use segment::{propagate_segment, twisted_steps, Segment, SegmentSample};

use crate::error::Error;
use crate::kernels::TwistMode;
use crate::policy::{PolicyMode, DEFAULT_RIDGE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub window_cap: usize,
    pub min_iters: usize,
    pub alpha: f64,
    pub bh: bool,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { window_cap: 15, min_iters: 3, alpha: 0.05, bh: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Always run `max_iters` iterations.
    Fixed,
    /// Parameter-stationarity tests.
    EarlyStop(EarlyStop),
    /// Stop once the ESS reaches `target * N`, or once it gained less than
    /// `min_gain * N` over the last `patience` iterations.
    Ess { target: f64, min_gain: f64, patience: usize },
}

impl StopRule {
    pub fn ess_default() -> Self {
        StopRule::Ess { target: 0.9, min_gain: 0.01, patience: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpfConfig {
    /// Maximum number of IPF iterations `I`.
    pub max_iters: usize,
    /// Conditional sampling iterations `M` per terminal estimate.
    pub csmc_iters: usize,
    /// Candidates `P` per conditional sampling iteration.
    pub csmc_particles: usize,
    pub stop: StopRule,
    pub twist: TwistMode,
    pub policy_mode: PolicyMode,
    pub ridge: f64,
    /// MALA step size for rejuvenating the segment's initial particles
    /// before every iteration.
    pub rejuvenation: Option<f64>,
    /// Keep the policies of every iteration in the output.
    pub keep_iterates: bool,
}

impl Default for IpfConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            csmc_iters: 0,
            csmc_particles: 128,
            stop: StopRule::EarlyStop(EarlyStop::default()),
            twist: TwistMode::Exact,
            policy_mode: PolicyMode::Full,
            ridge: DEFAULT_RIDGE,
            rejuvenation: None,
            keep_iterates: false,
        }
    }
}

impl IpfConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.csmc_iters > 0 && self.csmc_particles < 2 {
            return Err(Error::InvalidConfig("csmc_particles must be at least 2 when csmc_iters > 0".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge must be non-negative".into()));
        }
        if let Some(eps) = self.rejuvenation {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::InvalidConfig("rejuvenation step must be finite and non-negative".into()));
            }
        }
        match self.stop {
            StopRule::EarlyStop(e) if !(e.alpha > 0.0 && e.alpha < 1.0) || e.window_cap < 2 => {
                Err(Error::InvalidConfig("early stop needs alpha in (0, 1) and a window of at least 2".into()))
            }
            StopRule::Ess { target, patience, .. } if !(target > 0.0 && target <= 1.0) || patience == 0 => {
                Err(Error::InvalidConfig("ESS stop needs target in (0, 1] and positive patience".into()))
            }
            _ => Ok(()),
        }
    }
}

//! The sequential Schrödinger bridge sampler and the plain SMC sampler it
//! reduces to with identity policies.

pub mod weights;
pub mod sampler;

pub use weights::{ess, estimate, first_ess_breach, incremental_log_weight, log_mean_weight, normalized, systematic_resample};

pub use sampler::{
    adaptive_bridge_trigger, initial_particles, smc_sampler, ssb_sampler, twisted_smc, BridgeSet, ParticleEnsemble, Resample, SegmentReport, SsbConfig, SsbOutput,
    WarmStart,
};

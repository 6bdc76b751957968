//! Sequential bridge sampler over a bridge set `{0, T} ⊆ K ⊆ [0:T]`.
//!
//! For each segment `[t_k:t_{k+1}]` the policies are learned by approximate
//! IPF from the current particles, which are then moved through the twisted
//! kernels and weighted against the backward kernels. Weights accumulate
//! until a resampling event; `log Z_t` accumulates the log mean weight at
//! each resampling.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use super::weights::{ess, log_mean_weight, systematic_resample};
use crate::error::Error;
use crate::ipf::{approximate_ipf, propagate_segment, twisted_steps, IpfConfig, Segment};
use crate::kernels::{EmKernel, TwistedStep};
use crate::policy::{warm_start, PolicyMode, PolicySequence, QuadraticPolicy};
use crate::rng;
use crate::targets::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum BridgeSet {
    /// `K = [0:T]`.
    Every,
    /// Sorted times containing `0` and `T`.
    Fixed(Vec<usize>),
    /// Open a segment at the first `t` whose ESS falls below `threshold * N`
    /// under the untwisted kernels.
    Adaptive { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resample {
    Never,
    /// After every segment.
    Every,
    /// After a segment whose ESS is below `fraction * N`.
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    None,
    /// Start from the previous step's policy.
    Copy,
    /// Start from `2 psi_{t-1} - psi_{t-2}`.
    Extrapolate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsbConfig {
    pub particles: usize,
    pub bridges: BridgeSet,
    pub ipf: IpfConfig,
    pub resample: Resample,
    pub warm_start: WarmStart,
    /// Re-run the sampler with the learned policies frozen for an unbiased
    /// normalizing-constant estimate.
    pub rerun: bool,
    /// Keep every time slice of particles and weights.
    pub keep_states: bool,
}

impl SsbConfig {
    pub fn validate(&self, steps: usize) -> Result<(), Error> {
        if self.particles == 0 {
            return Err(Error::InvalidConfig("particles must be positive".into()));
        }
        self.ipf.validate()?;
        match &self.bridges {
            BridgeSet::Fixed(k) => {
                let sorted = k.windows(2).all(|w| w[0] < w[1]);
                if !sorted || k.first() != Some(&0) || k.last() != Some(&steps) {
                    return Err(Error::InvalidConfig(alloc::format!("bridge set must be strictly increasing from 0 to {steps}")));
                }
            }
            BridgeSet::Adaptive { threshold } if !(*threshold > 0.0 && *threshold <= 1.0) => {
                return Err(Error::InvalidConfig("adaptive threshold must be in (0, 1]".into()));
            }
            _ => {}
        }
        if let Resample::Threshold(f) = self.resample {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig("resampling threshold must be in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub n: usize,
    pub d: usize,
    /// Final particles, flat `N x d`.
    pub states: Vec<f64>,
    /// Log weights accumulated since the last resampling.
    pub log_weights: Vec<f64>,
    /// `log Z_t` estimates, `t = 0..=T`.
    pub log_z: Vec<f64>,
    /// ESS of the accumulated weights at `t = 0..=T`, before resampling.
    pub ess: Vec<f64>,
    /// Times at which resampling happened and the chosen ancestors.
    pub resample_times: Vec<usize>,
    pub ancestry: Vec<Vec<usize>>,
    /// Per-time particles and log weights (before resampling) when kept.
    pub slices: Vec<Vec<f64>>,
    pub slice_log_weights: Vec<Vec<f64>>,
}

impl ParticleEnsemble {
    pub fn log_z_final(&self) -> f64 {
        *self.log_z.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub start: usize,
    pub end: usize,
    pub iterations: usize,
    pub stopped_early: bool,
    pub ipf_ess: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SsbOutput {
    pub ensemble: ParticleEnsemble,
    pub policies: PolicySequence,
    pub segments: Vec<SegmentReport>,
    /// `log Z_T` from the frozen-policy re-run, when requested.
    pub rerun_log_z: Option<f64>,
    pub rerun: Option<ParticleEnsemble>,
}

impl SsbOutput {
    /// IPF iterations used by the segment ending at each `t = 1..=T` (0 elsewhere).
    pub fn iterations_per_time(&self, steps: usize) -> Vec<usize> {
        let mut out = alloc::vec![0; steps + 1];
        for s in &self.segments {
            out[s.end] = s.iterations;
        }
        out
    }
}

/// Whether the weights call for a new segment at the current time.
pub fn adaptive_bridge_trigger(log_w: &[f64], threshold: f64) -> bool {
    ess(log_w).map_or(true, |e| e < threshold * log_w.len() as f64)
}

/// `n` draws from `pi_0`, particle `i` on the stream `(seed, [INIT, i])`.
pub fn initial_particles<P: Path + ?Sized>(path: &P, n: usize, seed: u64) -> Vec<f64> {
    let d = path.dim();
    let mut x = alloc::vec![0.0; n * d];
    crate::exec::rows_mut(&mut x, d, |i, row| {
        let mut r = rng::stream(seed, &[rng::INIT, i as u64]);
        path.sample_initial(&mut r, row);
    });
    x
}

fn warm_policy(policies: &PolicySequence, t: usize, ws: WarmStart, mode: PolicyMode, d: usize) -> QuadraticPolicy {
    match ws {
        _ if t < 2 => QuadraticPolicy::identity(d, mode),
        WarmStart::None => QuadraticPolicy::identity(d, mode),
        WarmStart::Copy => policies.get(t - 1).clone(),
        WarmStart::Extrapolate if t < 3 => policies.get(t - 1).clone(),
        WarmStart::Extrapolate => warm_start(policies.get(t - 1), policies.get(t - 2)),
    }
}

/// First time after `start` at which the untwisted propagation breaches the
/// threshold, or `T`.
fn next_adaptive_end<P: Path + ?Sized>(
    path: &P,
    kernel: &EmKernel,
    start: usize,
    x: &[f64],
    carried: &[f64],
    threshold: f64,
    seed: u64,
) -> Result<usize, Error> {
    let steps = path.steps();
    let d = path.dim();
    let seg = Segment::new(start, steps)?;
    let id: Vec<TwistedStep> = (0..seg.len()).map(|_| TwistedStep::untwisted(kernel.h, d)).collect();
    let trial = propagate_segment(path, kernel, seg, &id, x, seed, &[rng::TRIAL, start as u64]);
    let mut lw = carried.to_vec();
    for j in 0..seg.len() {
        for (n, l) in lw.iter_mut().enumerate() {
            *l += trial.increment(n, j);
        }
        if adaptive_bridge_trigger(&lw, threshold) {
            return Ok(seg.time(j));
        }
    }
    Ok(steps)
}

struct Run<'a> {
    cfg: &'a SsbConfig,
    frozen: Option<&'a PolicySequence>,
    tag: u64,
}

fn run<P: Path + ?Sized>(path: &P, kernel: &EmKernel, r: Run, seed: u64) -> Result<(ParticleEnsemble, PolicySequence, Vec<SegmentReport>), Error> {
    let cfg = r.cfg;
    let steps = path.steps();
    cfg.validate(steps)?;
    let d = path.dim();
    let n = cfg.particles;
    let mode = cfg.ipf.policy_mode;
    let mut policies = match r.frozen {
        Some(p) => p.clone(),
        None => PolicySequence::identity(steps, d, mode),
    };
    let mut x = initial_particles(path, n, seed);
    let mut log_w = alloc::vec![0.0; n];
    let mut log_z_base = 0.0;
    let mut ens = ParticleEnsemble {
        n,
        d,
        states: Vec::new(),
        log_weights: Vec::new(),
        log_z: alloc::vec![0.0],
        ess: alloc::vec![n as f64],
        resample_times: Vec::new(),
        ancestry: Vec::new(),
        slices: Vec::new(),
        slice_log_weights: Vec::new(),
    };
    if cfg.keep_states {
        ens.slices.push(x.clone());
        ens.slice_log_weights.push(log_w.clone());
    }
    let mut reports = Vec::new();
    let mut start = 0;
    let mut k_idx = 0;
    while start < steps {
        let end = match (&cfg.bridges, r.frozen) {
            (BridgeSet::Every, _) => start + 1,
            (BridgeSet::Fixed(k), _) => {
                k_idx += 1;
                k[k_idx]
            }
            (BridgeSet::Adaptive { threshold }, None) => next_adaptive_end(path, kernel, start, &x, &log_w, *threshold, seed)?,
            (BridgeSet::Adaptive { .. }, Some(_)) => {
                return Err(Error::InvalidConfig("frozen policies need a fixed bridge set".into()));
            }
        };
        let seg = Segment::new(start, end)?;
        if r.frozen.is_none() && cfg.ipf.max_iters > 0 {
            let init_pols: Vec<QuadraticPolicy> = if seg.len() == 1 {
                alloc::vec![warm_policy(&policies, end, cfg.warm_start, mode, d)]
            } else {
                (start + 1..=end).map(|_| QuadraticPolicy::identity(d, mode)).collect()
            };
            let out = approximate_ipf(path, kernel, seg, &x, Some(init_pols), &cfg.ipf, seed, None)?;
            for (j, p) in out.policies.into_iter().enumerate() {
                policies.policies[seg.time(j)] = p;
            }
            x = out.particles;
            reports.push(SegmentReport { start, end, iterations: out.iterations, stopped_early: out.stopped_early, ipf_ess: out.ess });
        } else {
            reports.push(SegmentReport { start, end, iterations: 0, stopped_early: false, ipf_ess: Vec::new() });
        }
        let mut seg_pols: Vec<QuadraticPolicy> = (start + 1..=end).map(|t| policies.get(t).clone()).collect();
        let twist = twisted_steps(kernel.h, &mut seg_pols, cfg.ipf.twist)?;
        let sample = propagate_segment(path, kernel, seg, &twist, &x, seed, &[r.tag, start as u64]);
        for j in 0..seg.len() {
            for (i, l) in log_w.iter_mut().enumerate() {
                *l += sample.increment(i, j);
            }
            let t = seg.time(j);
            let e = ess(&log_w).map_err(|_| Error::DegenerateWeights { t })?;
            ens.ess.push(e);
            ens.log_z.push(log_z_base + log_mean_weight(&log_w));
            if cfg.keep_states {
                ens.slices.push(sample.column(j + 1));
                ens.slice_log_weights.push(log_w.clone());
            }
        }
        x = sample.terminal();
        let resample = match cfg.resample {
            Resample::Never => false,
            Resample::Every => true,
            Resample::Threshold(f) => *ens.ess.last().unwrap() < f * n as f64,
        };
        if resample && end < steps {
            let mut rr = rng::stream(seed, &[rng::RESAMPLE, r.tag, end as u64]);
            let idx = systematic_resample(&log_w, &mut rr).map_err(|_| Error::DegenerateWeights { t: end })?;
            let mut nx = Vec::with_capacity(n * d);
            for &a in &idx {
                nx.extend_from_slice(&x[a * d..(a + 1) * d]);
            }
            x = nx;
            log_z_base = *ens.log_z.last().unwrap();
            log_w.iter_mut().for_each(|l| *l = 0.0);
            ens.resample_times.push(end);
            ens.ancestry.push(idx);
        }
        start = end;
    }
    ens.states = x;
    ens.log_weights = log_w;
    Ok((ens, policies, reports))
}

/// The sequential bridge sampler.
pub fn ssb_sampler<P: Path + ?Sized>(path: &P, kernel: &EmKernel, cfg: &SsbConfig, seed: u64) -> Result<SsbOutput, Error> {
    let (ensemble, policies, segments) = run(path, kernel, Run { cfg, frozen: None, tag: rng::PROPAGATE }, seed)?;
    let (rerun, rerun_log_z) = if cfg.rerun {
        let bridges = match &cfg.bridges {
            BridgeSet::Adaptive { .. } => BridgeSet::Fixed(core::iter::once(0).chain(segments.iter().map(|s| s.end)).collect()),
            b => b.clone(),
        };
        let rcfg = SsbConfig { bridges, ..cfg.clone() };
        let (e, _, _) = run(path, kernel, Run { cfg: &rcfg, frozen: Some(&policies), tag: rng::RERUN }, rng::derive(seed, &[rng::RERUN]))?;
        let z = e.log_z_final();
        (Some(e), Some(z))
    } else {
        (None, None)
    };
    Ok(SsbOutput { ensemble, policies, segments, rerun_log_z, rerun })
}

/// Plain SMC sampler with the untwisted kernels.
pub fn smc_sampler<P: Path + ?Sized>(path: &P, kernel: &EmKernel, n: usize, resample: Resample, seed: u64) -> Result<ParticleEnsemble, Error> {
    let cfg = SsbConfig {
        particles: n,
        bridges: BridgeSet::Every,
        ipf: IpfConfig { max_iters: 0, ..IpfConfig::default() },
        resample,
        warm_start: WarmStart::None,
        rerun: false,
        keep_states: false,
    };
    Ok(run(path, kernel, Run { cfg: &cfg, frozen: None, tag: rng::PROPAGATE }, seed)?.0)
}

/// SMC with frozen policies (no learning).
pub fn twisted_smc<P: Path + ?Sized>(path: &P, kernel: &EmKernel, cfg: &SsbConfig, policies: &PolicySequence, seed: u64) -> Result<ParticleEnsemble, Error> {
    Ok(run(path, kernel, Run { cfg, frozen: Some(policies), tag: rng::PROPAGATE }, seed)?.0)
}

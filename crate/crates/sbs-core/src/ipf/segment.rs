//! Propagation of particles through the twisted kernels of one segment
//! `[start:end]`, with importance weights against the backward kernels.
//!
//! Policies of a segment are indexed `j = 0..len` for times `start + 1 + j`.
//! The weight of a trajectory is
//! `gamma_end(x_end) prod L / (gamma_start(x_start) prod M^psi)`, which is also
//! the single-term estimate of `d pi_end / d q_end^psi` at `x_end`.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::Error;
use crate::exec;
use crate::kernels::{backward_logpdf, backward_mean, backward_sample, EmKernel, TwistMode, TwistedStep, LN_2PI};
use crate::policy::QuadraticPolicy;
use crate::rng::{self, StreamRng};
use crate::targets::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Result<Self, Error> {
        if end <= start {
            return Err(Error::InvalidConfig(alloc::format!("empty segment [{start}:{end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Time of policy `j`.
    pub fn time(&self, j: usize) -> usize {
        self.start + 1 + j
    }
}

/// Twisted kernels for `policies`, clamping a policy into the integrable
/// region when the exact twist would fail.
pub fn twisted_steps(h: f64, policies: &mut [QuadraticPolicy], mode: TwistMode) -> Result<Vec<TwistedStep>, Error> {
    policies
        .iter_mut()
        .map(|p| match TwistedStep::new(h, p, mode) {
            Err(Error::TwistNotIntegrable) => {
                p.clamp_integrable(h);
                TwistedStep::new(h, p, mode)
            }
            other => other,
        })
        .collect()
}

/// `N` trajectories over a segment, stored per particle.
#[derive(Debug, Clone)]
pub struct SegmentSample {
    pub n: usize,
    pub d: usize,
    pub len: usize,
    /// `(len + 1) * d` states per particle, times `start..=end`.
    pub states: Vec<f64>,
    /// `len * d` untwisted means `m_t(x_{t-1})` per particle.
    pub base_means: Vec<f64>,
    /// `len` incremental log weights per particle.
    pub log_increments: Vec<f64>,
    /// Segment log weights.
    pub log_weights: Vec<f64>,
}

impl SegmentSample {
    pub fn state(&self, n: usize, j: usize) -> &[f64] {
        let o = (n * (self.len + 1) + j) * self.d;
        &self.states[o..o + self.d]
    }

    pub fn trajectory(&self, n: usize) -> &[f64] {
        let w = (self.len + 1) * self.d;
        &self.states[n * w..(n + 1) * w]
    }

    /// `m_{start+1+j}(X_{start+j})`.
    pub fn base_mean(&self, n: usize, j: usize) -> &[f64] {
        let o = (n * self.len + j) * self.d;
        &self.base_means[o..o + self.d]
    }

    pub fn increment(&self, n: usize, j: usize) -> f64 {
        self.log_increments[n * self.len + j]
    }

    /// All particles at offset `j` (time `start + j`), flat `N x d`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.d);
        for n in 0..self.n {
            out.extend_from_slice(self.state(n, j));
        }
        out
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.column(self.len)
    }
}

struct Particle {
    states: Vec<f64>,
    means: Vec<f64>,
    incs: Vec<f64>,
    log_w: f64,
}

/// One trajectory from `x0` at `seg.start`.
fn propagate_one<P: Path + ?Sized>(path: &P, kernel: &EmKernel, seg: Segment, steps: &[TwistedStep], x0: &[f64], rng: &mut StreamRng) -> Particle {
    let d = x0.len();
    let len = seg.len();
    let mut states = Vec::with_capacity((len + 1) * d);
    states.extend_from_slice(x0);
    let mut means = alloc::vec![0.0; len * d];
    let mut incs = alloc::vec![0.0; len];
    let mut y = alloc::vec![0.0; d];
    let lg_start = path.log_gamma(seg.start, x0);
    let mut lg_prev = lg_start;
    let mut log_w = 0.0;
    for j in 0..len {
        let t = seg.time(j);
        let x_prev = &states[j * d..(j + 1) * d];
        let m = &mut means[j * d..(j + 1) * d];
        kernel.mean(path, t, x_prev, m);
        steps[j].sample(m, x_prev, rng, &mut y);
        let log_fwd = steps[j].logpdf(m, x_prev, &y);
        let log_bwd = backward_logpdf(kernel, path, t - 1, steps[j].policy(), &y, x_prev);
        let lg = path.log_gamma(t, &y);
        incs[j] = lg - lg_prev + log_bwd - log_fwd;
        log_w += log_bwd - log_fwd;
        lg_prev = lg;
        states.extend_from_slice(&y);
    }
    log_w += lg_prev - lg_start;
    Particle { states, means, incs, log_w }
}

/// Propagates `init` (flat `N x d`) through the segment; particle `n` uses
/// the stream `(seed, [tags.., n])`.
pub fn propagate_segment<P: Path + ?Sized>(
    path: &P,
    kernel: &EmKernel,
    seg: Segment,
    steps: &[TwistedStep],
    init: &[f64],
    seed: u64,
    tags: &[u64],
) -> SegmentSample {
    let d = path.dim();
    let n = init.len() / d;
    let len = seg.len();
    let parts = exec::map(n, |i| {
        let mut rng = rng::stream(seed, &with_index(tags, i));
        propagate_one(path, kernel, seg, steps, &init[i * d..(i + 1) * d], &mut rng)
    });
    let mut out = SegmentSample {
        n,
        d,
        len,
        states: Vec::with_capacity(n * (len + 1) * d),
        base_means: Vec::with_capacity(n * len * d),
        log_increments: Vec::with_capacity(n * len),
        log_weights: Vec::with_capacity(n),
    };
    for p in parts {
        out.states.extend_from_slice(&p.states);
        out.base_means.extend_from_slice(&p.means);
        out.log_increments.extend_from_slice(&p.incs);
        out.log_weights.push(p.log_w);
    }
    out
}

pub(crate) fn with_index(tags: &[u64], i: usize) -> Vec<u64> {
    let mut v = Vec::with_capacity(tags.len() + 1);
    v.extend_from_slice(tags);
    v.push(i as u64);
    v
}

/// `log dH/dQ^psi` of a full segment trajectory (`(len + 1) * d` states),
/// with `H = gamma_end(x_end) prod L` and `Q^psi = gamma_start prod M^psi`.
pub fn trajectory_log_ratio<P: Path + ?Sized>(path: &P, kernel: &EmKernel, seg: Segment, steps: &[TwistedStep], traj: &[f64]) -> f64 {
    let d = path.dim();
    let len = seg.len();
    let mut m = alloc::vec![0.0; d];
    let mut acc = path.log_gamma(seg.end, &traj[len * d..]) - path.log_gamma(seg.start, &traj[..d]);
    for j in 0..len {
        let t = seg.time(j);
        let x_prev = &traj[j * d..(j + 1) * d];
        let x = &traj[(j + 1) * d..(j + 2) * d];
        kernel.mean(path, t, x_prev, &mut m);
        acc += backward_logpdf(kernel, path, t - 1, steps[j].policy(), x, x_prev) - steps[j].logpdf(&m, x_prev, x);
    }
    acc
}

/// Draws `x_{start:end-1}` backwards from `traj[end]` through the backward
/// kernels, overwriting the first `len * d` entries of `traj`.
pub fn backward_trajectory<P: Path + ?Sized>(path: &P, kernel: &EmKernel, seg: Segment, steps: &[TwistedStep], traj: &mut [f64], rng: &mut StreamRng) {
    let d = path.dim();
    for j in (0..seg.len()).rev() {
        let t = seg.time(j);
        let (lo, hi) = traj.split_at_mut((j + 1) * d);
        backward_sample(kernel, path, t - 1, steps[j].policy(), &hi[..d], rng, &mut lo[j * d..]);
    }
}

/// [`backward_trajectory`] followed by [`trajectory_log_ratio`] in one pass.
pub fn backward_trajectory_log_ratio<P: Path + ?Sized>(path: &P, kernel: &EmKernel, seg: Segment, steps: &[TwistedStep], traj: &mut [f64], rng: &mut StreamRng) -> f64 {
    let d = path.dim();
    let len = seg.len();
    let sd = kernel.h.sqrt();
    let bwd_norm = -0.5 * d as f64 * (LN_2PI + kernel.h.ln());
    let mut m = alloc::vec![0.0; d];
    let mut acc = path.log_gamma(seg.end, &traj[len * d..]);
    for j in (0..len).rev() {
        let t = seg.time(j);
        let (lo, hi) = traj.split_at_mut((j + 1) * d);
        let (x, x_prev) = (&hi[..d], &mut lo[j * d..]);
        backward_mean(kernel, path, t - 1, steps[j].policy(), x, x_prev);
        let mut q = 0.0;
        for o in x_prev.iter_mut() {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            *o += sd * z;
            q += z * z;
        }
        kernel.mean(path, t, x_prev, &mut m);
        acc += bwd_norm - 0.5 * q - steps[j].logpdf(&m, x_prev, x);
    }
    acc - path.log_gamma(seg.start, &traj[..d])
}

//! Counter-based random streams.
//!
//! Every draw comes from a stream named by a master seed and a list of
//! integer tags, e.g. `(seed, [PROPAGATE, t, n])`. The stream seed is the
//! master seed with each tag folded in through the SplitMix64 finalizer, so
//! particle `n` at step `t` sees the same numbers whichever thread runs it
//! and in whatever order. Replication seeds are derived the same way from
//! the experiment seed: `rep_seed = derive(master, [REPLICATION, r])`.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

pub const REPLICATION: u64 = 1;
pub const INIT: u64 = 2;
pub const PROPAGATE: u64 = 3;
pub const RESAMPLE: u64 = 4;
pub const IPF_SAMPLE: u64 = 5;
pub const CSMC: u64 = 6;
pub const MALA: u64 = 7;
pub const TRIAL: u64 = 8;
pub const RERUN: u64 = 9;
pub const SIMULATE: u64 = 10;

pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(seed);
    for &tag in tags {
        s = splitmix64(s ^ splitmix64(tag ^ 0x632B_E59B_D9B4_E019));
    }
    s
}

pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive(seed, tags))
}

pub fn standard_normals(rng: &mut StreamRng, out: &mut [f64]) {
    use rand::Rng;
    for v in out.iter_mut() {
        *v = rng.sample(rand_distr::StandardNormal);
    }
}

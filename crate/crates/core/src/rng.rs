//! Seedable random substreams.
//!
//! Every stochastic component owns its own ChaCha stream, derived from the
//! experiment's master seed and a fixed tag, so that filters, observation
//! networks and the nature run never share draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Stream tags used by the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    NatureSpinUp = 1,
    InitialEnsemble = 2,
    ObsNetwork = 3,
    ObsNoise = 4,
    Shocks = 5,
    Filter = 6,
}

/// Builds the substream `tag` of `seed`, offset by `index` (e.g. the cycle).
pub fn substream(seed: u64, tag: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 40) ^ index);
    rng
}

/// Independent child stream, seeded from draws of `parent`.
pub fn child<R: Rng + ?Sized>(parent: &mut R) -> StreamRng {
    ChaCha8Rng::seed_from_u64(parent.random())
}

pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    fill_standard_normal(rng, &mut v);
    v
}

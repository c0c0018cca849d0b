//! Counter-based random streams.
//!
//! Every `(seed, particle, step)` triple is hashed into the key of a fresh
//! generator, so a particle's noise does not depend on which thread advances it
//! or in what order particles are visited.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

/// Mixes the user seed so initial conditions and step noise use unrelated keys.
const INIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(x: u64) -> u64 {
    SplitMix64::seed_from_u64(x).next_u64()
}

/// Generator for the noise of `particle` at `step`.
#[inline]
pub fn step_rng(seed: u64, particle: u64, step: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(mix(mix(mix(seed) ^ particle) ^ step))
}

/// Stream used to draw the initial position of `particle`.
pub fn init_rng(seed: u64, particle: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
    rng.set_stream(particle);
    rng
}

/// Fills `out` with independent standard normals, in index order.
pub fn fill_normals<R: Rng>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Uniform draw on `[0, 1)`.
#[inline]
pub fn uniform<R: Rng>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

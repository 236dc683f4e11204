//! Seed derivation for reproducible, parallel Monte Carlo.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by
//! `(master seed, run index, stream id)`. The run seed is a SplitMix64 hash
//! of the master seed and the run index; the stream id selects an
//! independent ChaCha stream under that key. Inside a realization:
//!
//! * stream `0` carries regressors and measurement noise for all nodes,
//! * stream `1 + 3j` the fading coefficients of directed link `j`,
//! * stream `2 + 3j` the pilot noise of link `j`,
//! * stream `3 + 3j` the data-transmission noise of link `j`.
//!
//! Slots are consumed sequentially inside each stream, so a realization is
//! a pure function of `(master, run)` and runs can be scheduled on any
//! number of workers.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

pub const DATA_STREAM: u64 = 0;

/// Offsets of the per-link streams.
#[derive(Debug, Clone, Copy)]
pub enum LinkStream {
    Fading = 1,
    Pilot = 2,
    Noise = 3,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key for run `run` under `master`.
pub fn run_key(master: u64, run: u64) -> u64 {
    splitmix64(splitmix64(master) ^ run.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn stream(key: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream_id);
    rng
}

pub fn link_stream(key: u64, link: usize, kind: LinkStream) -> StreamRng {
    stream(key, 3 * link as u64 + kind as u64)
}

/// Circularly-symmetric complex Gaussian with total variance `variance`:
/// independent real and imaginary parts, each of variance `variance / 2`.
#[inline]
pub fn complex_normal<R: rand::Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

//! Counter-addressed randomness.
//!
//! Every draw is identified by a key `(substream, index)`. The generator is
//! ChaCha20 seeded from the run seed; the key selects the ChaCha stream id
//! and the word position, so a draw never depends on how many other draws
//! happened before it or in which order streams were evaluated.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Substream for a `laplace(..)` term: stream index and term index within its expression.
pub fn term_substream(stream: usize, term: u32) -> u64 {
    ((stream as u64) << 32) | term as u64
}

/// Substream for tree nodes of one tree release site at a given level.
pub fn tree_substream(stream: usize, site: u32, level: u32) -> u64 {
    (1u64 << 63) | ((stream as u64 & 0x7fff_ffff) << 32) | ((site as u64 & 0xffff) << 16) | (level as u64 & 0xffff)
}

#[derive(Clone)]
pub struct KeyedRng {
    rng: ChaCha20Rng,
}

impl KeyedRng {
    pub fn new(seed: u64) -> Self {
        KeyedRng { rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// 64 random bits at `(substream, index)`.
    pub fn bits(&mut self, substream: u64, index: u64) -> u64 {
        self.rng.set_stream(substream);
        self.rng.set_word_pos(index as u128 * 2);
        self.rng.next_u64()
    }

    /// Uniform in the open interval (−½, ½), never 0.
    pub fn centered_uniform(&mut self, substream: u64, index: u64) -> f64 {
        let b = self.bits(substream, index) >> 11;
        (b as f64 + 0.5) / (1u64 << 53) as f64 - 0.5
    }

    pub fn laplace(&mut self, scale: f64, substream: u64, index: u64) -> f64 {
        if scale == 0.0 {
            return 0.0;
        }
        laplace_from_uniform(scale, self.centered_uniform(substream, index))
    }
}

/// Inverse CDF of Lap(0, scale) at `u − ½` for `u` ∈ (0, 1).
pub fn laplace_from_uniform(scale: f64, u: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    -scale * u.signum() * libm::log(1.0 - 2.0 * u.abs())
}

/// Sequential sampler over one substream.
pub fn sample_laplace(scale: f64, rng: &mut KeyedRng, substream: u64, counter: &mut u64) -> f64 {
    let v = rng.laplace(scale, substream, *counter);
    *counter += 1;
    v
}

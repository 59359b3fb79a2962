//! Reproducible Gaussian streams.
//!
//! Every Monte Carlo path draws from its own ChaCha8 stream. The 64-bit
//! stream id is derived from `(seed, path index)` with a SplitMix64 fold, and
//! rows are laid out at fixed word offsets so row `r` of a stream can be
//! regenerated without touching rows `0..r`.
//!
//! Normals come from the Box–Muller transform. Each pair of normals consumes
//! exactly two `u64` words, so a row of width `w` always spans
//! `4 * ceil(w / 2)` 32-bit ChaCha words.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a seed and any number of indices into a stream id.
pub fn stream_id(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed.wrapping_add(GOLDEN)), |acc, &p| {
            splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN)))
        })
}

/// Maps the top 53 bits of `x` to the open interval (0, 1).
fn open_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Number of 32-bit words one row of `width` normals occupies.
    pub fn words_per_row(width: usize) -> u128 {
        4 * width.div_ceil(2) as u128
    }

    /// Positions the stream at the start of `row` for rows of `width` normals.
    pub fn seek_row(&mut self, row: u64, width: usize) {
        self.rng
            .set_word_pos(row as u128 * Self::words_per_row(width));
    }

    /// Fills `out` with independent standard normals.
    pub fn fill_row(&mut self, out: &mut [f64]) {
        for chunk in out.chunks_mut(2) {
            let u1 = open_unit(self.rng.next_u64());
            let u2 = open_unit(self.rng.next_u64());
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            chunk[0] = r * theta.cos();
            if let Some(second) = chunk.get_mut(1) {
                *second = r * theta.sin();
            }
        }
    }
}

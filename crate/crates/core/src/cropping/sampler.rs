//! Counter-based crop position sampler.
//!
//! Positions come from ChaCha20 keyed by `(seed, height, width, size)` as
//! four little-endian u64 words. The ChaCha stream id is the index of the
//! plan primitive doing the drawing, and draw `i` reads the two 64-bit words
//! at word position `4 * i` (top, then left). A draw therefore depends only on
//! `(seed, dims, stream, i)`, which makes a plan of `n` random crops a prefix
//! of a plan of `n + k` crops with the same key.
//!
//! Integers in `0..n` are taken with a 128-bit multiply-high of the raw word,
//! so every implementation with a ChaCha20 core reproduces the same plans.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const WORDS_PER_DRAW: u128 = 4;

#[derive(Debug, Clone)]
pub struct CropSampler {
    rng: ChaCha20Rng,
}

impl CropSampler {
    pub fn new(seed: u64, height: usize, width: usize, size: usize, stream: u64) -> Self {
        let mut key = [0u8; 32];
        for (chunk, word) in key
            .chunks_exact_mut(8)
            .zip([seed, height as u64, width as u64, size as u64])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Top-left offset of draw `index`, uniform over `0..top_choices` x `0..left_choices`.
    pub fn position(&mut self, index: u64, top_choices: usize, left_choices: usize) -> (usize, usize) {
        self.rng.set_word_pos(u128::from(index) * WORDS_PER_DRAW);
        let top = bounded(self.rng.next_u64(), top_choices as u64);
        let left = bounded(self.rng.next_u64(), left_choices as u64);
        (top as usize, left as usize)
    }
}

#[inline]
fn bounded(word: u64, choices: u64) -> u64 {
    ((u128::from(word) * u128::from(choices)) >> 64) as u64
}

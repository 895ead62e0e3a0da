//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha20 keystream
//! (20 rounds, 64-bit block counter starting at zero, zero nonce). The
//! 256-bit key is built from two 64-bit words: bytes `0..8` hold the
//! little-endian seed, bytes `8..16` the little-endian stream tag, and the
//! remaining bytes are zero. `next_u64` consumes two consecutive 32-bit
//! keystream words, low word first.
//!
//! Uniforms use the top 53 bits of a `u64`. Normal draws use the Box-Muller
//! transform on a pair of uniforms and return both the cosine and the sine
//! branch, in that order.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream tags. Each seeded object draws from its own stream so that adding
/// a new consumer never perturbs existing ones.
pub mod tags {
    pub const TOKEN_MATRIX: u64 = 0x01;
    pub const POSITIONAL: u64 = 0x02;
    pub const PROJECTOR: u64 = 0x03;
    pub const OFFSETS: u64 = 0x10;
    pub const DENOISER_A: u64 = 0x20;
    pub const DENOISER_B: u64 = 0x21;
    pub const NOISE: u64 = 0x30;
    pub const ALIGNMENT_MAP: u64 = 0x40;
    pub const GRADCHECK: u64 = 0x50;
    /// Prompt-encoder layers use `ENCODER_LAYER_BASE + 16 * layer + slot`.
    pub const ENCODER_LAYER_BASE: u64 = 0x1000;
}

/// Indexed families of streams use `tag + (index << LANE_SHIFT)`.
pub const LANE_SHIFT: u32 = 32;

pub struct Stream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64, tag: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&tag.to_le_bytes());
        Self {
            rng: ChaCha20Rng::from_seed(key),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn normals(&mut self, len: usize, std: f64) -> Vec<f64> {
        (0..len).map(|_| self.normal() * std).collect()
    }
}

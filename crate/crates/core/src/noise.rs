//! Counter-based standard normal streams.
//!
//! Every normal is a pure function of `(seed, replica, lane, counter)`: the
//! ChaCha key is derived from `(seed, replica)`, the stream id is `lane`, and
//! the counter fixes the word position. Counters `2q` and `2q+1` share one
//! Box-Muller pair, so any sub-range can be regenerated independently.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key(seed: u64, replica: u64) -> [u8; 32] {
    let words =
        [mix64(seed), mix64(seed ^ 0x5851_f42d_4c95_7f2d), mix64(replica), mix64(replica ^ 0x1405_7b7e_f767_814f)];
    let mut out = [0u8; 32];
    for (chunk, w) in out.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    out
}

/// Uniform on `(0, 1]` from the top 53 bits.
fn open_unit(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, replica: u64, lane: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key(seed, replica));
        rng.set_stream(lane);
        Self { rng }
    }

    /// Writes the normals with counters `start, start+1, ...` into `out`.
    pub fn fill(&mut self, start: u64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        let pair = start / 2;
        self.rng.set_word_pos(pair as u128 * 4);
        let mut i = 0;
        let mut skip_first = start % 2 == 1;
        while i < out.len() {
            let u1 = open_unit(self.rng.next_u64());
            let u2 = open_unit(self.rng.next_u64());
            let rad = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            if !skip_first {
                out[i] = rad * c;
                i += 1;
            }
            skip_first = false;
            if i < out.len() {
                out[i] = rad * s;
                i += 1;
            }
        }
    }

    pub fn normals(&mut self, start: u64, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.fill(start, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subranges_agree_with_full_range() {
        let full = NoiseStream::new(7, 3, 11).normals(100, 64);
        for start in [100u64, 101, 117, 150] {
            let part = NoiseStream::new(7, 3, 11).normals(start, 10);
            let off = (start - 100) as usize;
            assert_eq!(&full[off..off + 10], &part[..]);
        }
    }

    #[test]
    fn keys_separate_streams() {
        let a = NoiseStream::new(1, 0, 0).normals(0, 4);
        let b = NoiseStream::new(1, 1, 0).normals(0, 4);
        let c = NoiseStream::new(1, 0, 1).normals(0, 4);
        let d = NoiseStream::new(2, 0, 0).normals(0, 4);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn moments_are_standard() {
        let z = NoiseStream::new(42, 0, 0).normals(0, 200_000);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
    }
}

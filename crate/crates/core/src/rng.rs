//! Named, splittable random streams.
//!
//! Every stream is a ChaCha8 keystream addressed by a 256-bit key and a
//! 64-bit stream id. Child streams are derived by mixing a label and an
//! index into the parent key, so a draw is fully determined by
//! `(seed, path of labels/indices, counter)` regardless of the order in
//! which sibling streams are consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct StreamRng {
    key: [u64; 4],
    stream: u64,
    inner: ChaCha8Rng,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl StreamRng {
    /// Root stream for a run seed.
    pub fn new(seed: u64) -> Self {
        let mut key = [0u64; 4];
        let mut s = seed;
        for k in key.iter_mut() {
            s = splitmix(s);
            *k = s;
        }
        Self::from_parts(key, 0)
    }

    fn from_parts(key: [u64; 4], stream: u64) -> Self {
        let mut bytes = [0u8; 32];
        for (chunk, k) in bytes.chunks_exact_mut(8).zip(key.iter()) {
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(bytes);
        inner.set_stream(stream);
        Self { key, stream, inner }
    }

    /// Child stream identified by `(label, index)`. Independent of how many
    /// values have been drawn from `self`.
    pub fn derive(&self, label: &str, index: u64) -> Self {
        let tag = fnv1a(label);
        let mut key = [0u64; 4];
        for (i, k) in key.iter_mut().enumerate() {
            let lane = self.key[i] ^ splitmix(self.stream.wrapping_add(i as u64));
            *k = splitmix(lane ^ splitmix(tag.wrapping_add((i as u64).wrapping_mul(GOLDEN))));
        }
        Self::from_parts(key, splitmix(index ^ tag.rotate_left(17)))
    }

    pub fn gaussian(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    /// Uniform in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.random_range(0..n)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }

    pub fn coin(&mut self) -> bool {
        self.random::<bool>()
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let mut a = StreamRng::new(11);
        let mut b = StreamRng::new(11);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derive_ignores_parent_position() {
        let a = StreamRng::new(3);
        let mut b = StreamRng::new(3);
        for _ in 0..17 {
            b.next_u64();
        }
        let mut ca = a.derive("episode", 5);
        let mut cb = b.derive("episode", 5);
        assert_eq!(ca.next_u64(), cb.next_u64());
    }

    #[test]
    fn siblings_differ() {
        let root = StreamRng::new(3);
        let mut x = root.derive("episode", 0);
        let mut y = root.derive("episode", 1);
        let mut z = root.derive("sample", 0);
        let (vx, vy, vz) = (x.next_u64(), y.next_u64(), z.next_u64());
        assert_ne!(vx, vy);
        assert_ne!(vx, vz);
        assert_ne!(vy, vz);
    }

    #[test]
    fn gaussian_moments() {
        let mut r = StreamRng::new(1);
        let n = 50_000;
        let xs: Vec<f64> = (0..n).map(|_| r.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.03, "{var}");
    }
}

//! Counter-based splittable random number generation.
//!
//! Every random draw in the system (latents, camera poses, ray jitter,
//! initialization) is a pure function of an [`RngKey`]. Keys split into
//! disjoint child streams by tag, so parallel or reordered sampling cannot
//! change results: same key, bit-identical sequence.

/// A key identifying one random stream. Cheap to copy; never mutated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngKey {
    seed: u64,
    stream: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngKey {
    pub fn new(seed: u64) -> Self {
        RngKey {
            seed: mix(seed ^ GOLDEN),
            stream: mix(seed),
        }
    }

    /// Derive a child key on a disjoint stream. `child(a) != child(b)` for
    /// `a != b`, and children never collide with the parent stream.
    pub fn child(&self, tag: u64) -> Self {
        RngKey {
            seed: mix(self.seed ^ tag.wrapping_mul(GOLDEN)),
            stream: mix(self.stream.wrapping_add(tag) ^ GOLDEN),
        }
    }

    /// Raw 64-bit output at counter position `i`.
    #[inline]
    pub fn bits(&self, i: u64) -> u64 {
        mix(self.seed ^ i.wrapping_mul(GOLDEN).wrapping_add(self.stream))
    }

    /// Stateful draw cursor over this key's stream.
    pub fn stream(&self) -> RngStream {
        RngStream { key: *self, ctr: 0 }
    }
}

/// Iterator-style cursor over one key's stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    key: RngKey,
    ctr: u64,
}

impl RngStream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.key.bits(self.ctr);
        self.ctr += 1;
        v
    }

    /// Uniform draw in [0, 1).f64 so both element widths get full mantissas.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        // top 53 bits -> [0,1)
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_scaled(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.normal()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let a: Vec<u64> = RngKey::new(7).stream().take_u64(32);
        let b: Vec<u64> = RngKey::new(7).stream().take_u64(32);
        assert_eq!(a, b);
    }

    #[test]
    fn children_are_disjoint() {
        let k = RngKey::new(3);
        let a: Vec<u64> = k.child(0).stream().take_u64(64);
        let b: Vec<u64> = k.child(1).stream().take_u64(64);
        let p: Vec<u64> = k.stream().take_u64(64);
        assert_ne!(a, b);
        assert_ne!(a, p);
        for (x, y) in a.iter().zip(&b) {
            assert_ne!(x, y);
        }
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = RngKey::new(11).stream();
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = RngKey::new(5).stream();
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    impl RngStream {
        fn take_u64(mut self, n: usize) -> Vec<u64> {
            (0..n).map(|_| self.next_u64()).collect()
        }
    }
}

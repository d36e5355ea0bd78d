//! Deterministic counter-based random number generation.
//!
//! Every random draw in this crate is addressed by an explicit (key, counter)
//! pair, so any value in a stream can be regenerated independently of the
//! others. That is what makes direction sampling parallel and lets a run with
//! K = 500 directions share its first 50 directions bit for bit with a
//! K = 50 run.
//!
//! The generator is SplitMix64 applied to `key ^ mix(counter)`; its output
//! quality is more than sufficient for Monte Carlo direction sampling and
//! data shuffling.

/// SplitMix64 finalizer: a bijective scramble of a 64-bit word.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child key from a parent key and a stream index.
///
/// Used to fan a master seed out into independent streams (one per
/// direction, per epoch, per row, ...).
pub fn derive_key(key: u64, index: u64) -> u64 {
    splitmix64(key ^ splitmix64(index.wrapping_add(0x510e527fade682d1)))
}

/// Raw counter-addressed 64-bit output.
#[inline]
pub fn value_at(key: u64, counter: u64) -> u64 {
    splitmix64(key.wrapping_add(splitmix64(counter)))
}

/// Uniform f64 in [0, 1), addressed by (key, counter).
#[inline]
pub fn uniform_at(key: u64, counter: u64) -> f64 {
    // 53 high bits -> [0, 1) with full double precision.
    (value_at(key, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw addressed by (key, counter).
///
/// Box-Muller on two counter-addressed uniforms; each normal consumes
/// counters 2i and 2i+1 so draws stay independently addressable.
#[inline]
pub fn normal_at(key: u64, counter: u64) -> f64 {
    let u1 = uniform_at(key, 2 * counter);
    let u2 = uniform_at(key, 2 * counter + 1);
    // Guard u1 = 0; 2^-53 keeps the log finite.
    let u1 = u1.max(f64::EPSILON / 2.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Sequential convenience stream over the counter-based core.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(key: u64) -> Self {
        Stream { key, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = value_at(self.key, self.counter);
        self.counter += 1;
        v
    }

    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_uniform().max(f64::EPSILON / 2.0);
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in [0, n) by rejection, bias-free.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let v = self.next_u64();
            if v >= threshold {
                return v % n;
            }
        }
    }

    /// Deterministic Fisher-Yates permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            perm.swap(i, j);
        }
        perm
    }
}

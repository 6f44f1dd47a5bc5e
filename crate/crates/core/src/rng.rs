//! Splittable counter-based pseudo-random generator.
//!
//! Every sampling operation in this crate takes an explicit 64-bit seed and
//! draws from one generator family so that results are bit-identical across
//! platforms and thread counts. The construction is stateless: draw `n` of
//! stream `key` is `mix(key, n)`, where `mix` is the SplitMix64 finalizer
//! applied twice over the keyed counter. Child streams are derived by
//! rehashing the key with a label under a salt that separates the derivation
//! domain from the output domain:
//!
//! ```text
//! output_n  = mix(key, n)
//! child_key = mix(key ^ SPLIT_SALT, label)
//! ```
//!
//! The split rule is the contract for parallel callers: derive one child per
//! independent unit of work (iteration, task, episode, trajectory) and never
//! share a stream between units. Splitting does not advance the parent.
//!
//! Not cryptographically secure; simulation use only.

const GOLDEN: u64 = 0x9E3779B97F4A7C15;
const SPLIT_SALT: u64 = 0x5851F42D4C957F2D;

#[inline]
fn mix(key: u64, counter: u64) -> u64 {
    let mut z = counter.wrapping_mul(GOLDEN).wrapping_add(key);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= key.rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Counter-based stream with an explicit split rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRng {
    key: u64,
    counter: u64,
}

impl SplitRng {
    /// Stream rooted at a user seed.
    pub fn new(seed: u64) -> Self {
        SplitRng {
            key: mix(SPLIT_SALT, seed),
            counter: 0,
        }
    }

    /// Derive an independent child stream. Pure: the parent position is
    /// untouched, and equal `(key, label)` always yields the same child.
    #[must_use]
    pub fn split(&self, label: u64) -> SplitRng {
        SplitRng {
            key: mix(self.key ^ SPLIT_SALT, label),
            counter: 0,
        }
    }

    /// Derive a child stream down a path of labels.
    #[must_use]
    pub fn split_path(&self, labels: &[u64]) -> SplitRng {
        let mut r = self.clone();
        for &l in labels {
            r = r.split(l);
        }
        r
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64) / DEN
    }

    /// Uniform index in `[0, n)` via widening multiply.
    #[inline]
    pub fn uniform_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Sample an index from an (unnormalized is tolerated) nonnegative
    /// weight vector by inverse CDF. Falls back to the last positive-weight
    /// index so rounding at the top of the CDF cannot escape the support.
    pub fn sample_index(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        let u = self.next_f64() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = i;
            }
            acc += w;
            if u < acc {
                return i;
            }
        }
        last_positive
    }
}

/// Fill `out` with a uniform sample from the probability simplex
/// (Dirichlet with unit concentration): exponentials, normalized.
pub fn sample_simplex(rng: &mut SplitRng, out: &mut [f64]) {
    let mut total = 0.0;
    for x in out.iter_mut() {
        let u = rng.next_f64();
        let g = -crate::math::ln(1.0 - u);
        *x = g;
        total += g;
    }
    if total <= 0.0 {
        // All draws hit u = 0 exactly; fall back to uniform weights.
        let w = 1.0 / out.len() as f64;
        for x in out.iter_mut() {
            *x = w;
        }
        return;
    }
    for x in out.iter_mut() {
        *x /= total;
    }
}

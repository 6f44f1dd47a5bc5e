//! Thin wrappers over `libm` plus small vector helpers.
//!
//! Routing every transcendental through `libm` keeps the crate `no_std` and,
//! more importantly, makes all floating-point results bit-identical across
//! platforms, which the reproducibility contract of this crate depends on.

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Dot product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Euclidean norm.
#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Clamp to `[lo, hi]`.
#[inline]
pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Total variation distance between two finite distributions,
/// `0.5 * sum |p_i - q_i|`. Callers validate that the inputs are
/// distributions; this is the raw kernel used in hot loops.
#[inline]
pub fn tv_raw(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for i in 0..p.len() {
        acc += abs(p[i] - q[i]);
    }
    0.5 * acc
}

/// FNV-1a over the raw bits of a float slice; used for content provenance
/// tags, not for cryptographic purposes.
pub fn content_tag(parts: &[usize], data: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    };
    for &p in parts {
        for b in (p as u64).to_le_bytes() {
            eat(b);
        }
    }
    for &x in data {
        for b in x.to_bits().to_le_bytes() {
            eat(b);
        }
    }
    h
}

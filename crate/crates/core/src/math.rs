//! Float helpers that `core` does not provide.

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Number of entries selected by a fraction of `n`, rounded up.
///
/// Products that land within rounding noise of an integer count as that
/// integer, so `0.4 * 5` selects 2 rather than 3.
pub(crate) fn fraction_count(fraction: f64, n: usize) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    let x = fraction * n as f64;
    let r = round(x);
    let count = if (x - r).abs() <= 1e-9 * r.max(1.0) { r } else { ceil(x) };
    (count as usize).min(n)
}

/// Smallest f32 strictly greater than `x` (finite `x` only).
pub(crate) fn next_up_f32(x: f32) -> f32 {
    if x == 0.0 {
        return f32::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f32::from_bits(bits + 1)
    } else {
        f32::from_bits(bits - 1)
    }
}

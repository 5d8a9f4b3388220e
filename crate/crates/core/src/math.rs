//! Float helpers backed by `libm`, so results do not depend on the host libm.

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub(crate) fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// Relative closeness with an absolute floor at zero.
#[inline]
pub(crate) fn close(a: f64, b: f64, rel: f64) -> bool {
    let scale = abs(a).max(abs(b));
    abs(a - b) <= rel * scale || a == b
}

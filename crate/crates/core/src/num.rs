//! Float helpers for the `no_std` core.
//!
//! Transcendental functions go through `libm` so results do not depend on
//! the host math library; this keeps printed problems and emitted files
//! identical across platforms.

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn max(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

pub fn min(a: f64, b: f64) -> f64 {
    if a < b {
        a
    } else {
        b
    }
}

pub fn is_int(x: f64) -> bool {
    libm::trunc(x) == x
}

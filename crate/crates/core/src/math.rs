//! Float functions that `core` does not provide.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// `tanh` through one `exp`; libm's version is reserved for small `|x|`,
/// where `1 - e` would cancel.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.02 {
        return libm::tanh(x);
    }
    if a > 20.0 {
        return x.signum();
    }
    let e = libm::exp(-2.0 * a);
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Rounds half away from zero.
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn tanh_matches_libm() {
        let mut x = -25.0;
        while x < 25.0 {
            let (a, b) = (super::tanh(x), libm::tanh(x));
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300) + 1e-16, "{x}: {a} vs {b}");
            x += 0.0137;
        }
    }
}

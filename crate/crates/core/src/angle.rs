//! Angle helpers. Everything inside the crate is in radians.

use std::f64::consts::{PI, TAU};

/// Wraps into `[0, 2π)`.
pub fn wrap_two_pi(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Wraps into `[-π, π)`.
pub fn wrap_pi(angle: f64) -> f64 {
    let a = wrap_two_pi(angle + PI) - PI;
    if a >= PI {
        -PI
    } else {
        a
    }
}

/// Wraps into `[0, π)`, for axis-like quantities.
pub fn wrap_half_turn(angle: f64) -> f64 {
    let a = angle.rem_euclid(PI);
    if a >= PI {
        0.0
    } else {
        a
    }
}

/// Smallest signed difference `a - b` on the circle.
pub fn circular_diff(a: f64, b: f64) -> f64 {
    wrap_pi(a - b)
}

pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

pub fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraps_stay_in_range() {
        for k in -20..20 {
            let x = k as f64 * 0.77 - 1e-17;
            let w = wrap_two_pi(x);
            assert!((0.0..TAU).contains(&w));
            let p = wrap_pi(x);
            assert!((-PI..PI).contains(&p));
            let h = wrap_half_turn(x);
            assert!((0.0..PI).contains(&h));
        }
        assert_eq!(wrap_pi(PI), -PI);
        assert!((circular_diff(0.1, TAU - 0.1) - 0.2).abs() < 1e-15);
    }
}

#![allow(dead_code)]

use eisr::field::{ChargeSet, GaussianCharge};
use eisr::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_point(rng: &mut impl Rng, half: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

/// Charges in [-0.4, 0.4]^3 with Q in [0.2, 2] and sigma in [0.03, 0.2].
pub fn random_set(rng: &mut impl Rng, k: usize) -> ChargeSet {
    let charges = (0..k)
        .map(|_| {
            GaussianCharge::new(
                random_point(rng, 0.4),
                rng.random_range(0.2..2.0),
                rng.random_range(0.03..0.2),
            )
            .unwrap()
        })
        .collect();
    ChargeSet::with_defaults(charges).unwrap()
}

/// Composite Simpson rule on [a, b] with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Bisection root of a sign-changing function on [lo, hi].
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) < 0.0, "no sign change");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Independent single-charge potential using a quadrature erf, eps0 = 1.
pub fn reference_potential(q: f64, sigma: f64, r: f64) -> f64 {
    let erf = simpson(|t| (-t * t).exp(), 0.0, r / (2f64.sqrt() * sigma), 2000) * 2.0 / std::f64::consts::PI.sqrt();
    q * erf / (4.0 * std::f64::consts::PI * r)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

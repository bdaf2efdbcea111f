mod common;

use std::f64::consts::PI;

use common::*;
use eisr::field::{erf, potential_radial, ChargeSet, GaussianCharge};
use eisr::isosurface::{evaluate_grid, GridSpec};
use eisr::{Execution, Vec3};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn erf_matches_quadrature() {
    for i in 0..=60 {
        let z = i as f64 * 0.1;
        let oracle = simpson(|t| (-t * t).exp(), 0.0, z, 4000) * 2.0 / PI.sqrt();
        assert!((erf(z) - oracle).abs() < 1e-14, "z = {z}");
        assert_eq!(erf(-z), -erf(z));
    }
}

#[test]
fn potential_matches_independent_reference() {
    for &(q, sigma) in &[(1.0, 0.05), (0.3, 0.2), (2.5, 0.01)] {
        for &r in &[0.1 * sigma, sigma, 3.0 * sigma, 10.0 * sigma, 0.7] {
            let v = potential_radial(q, sigma, r, 1.0);
            assert!(rel_err(v, reference_potential(q, sigma, r)) < 1e-12);
        }
    }
}

#[test]
fn density_integrates_to_charge() {
    let (q, sigma) = (0.7, 0.08);
    let c = GaussianCharge::new(Vec3::ZERO, q, sigma).unwrap();
    let total = simpson(
        |r| 4.0 * PI * r * r * c.eval_density(Vec3::new(r, 0.0, 0.0)),
        0.0,
        12.0 * sigma,
        4000,
    );
    assert!(rel_err(total, q) < 1e-10);
}

#[test]
fn far_field_and_center_limit() {
    let (q, sigma) = (1.3, 0.04);
    let c = GaussianCharge::new(Vec3::new(0.1, -0.2, 0.05), q, sigma).unwrap();
    let r = 100.0 * sigma;
    let far = c.eval_potential(c.location + Vec3::new(0.0, r, 0.0), 1.0);
    assert!(rel_err(far, q / (4.0 * PI * r)) < 1e-8);
    let center = c.eval_potential(c.location, 1.0);
    assert!(rel_err(center, q * (2.0 / PI).sqrt() / (4.0 * PI * sigma)) < 1e-8);
}

#[test]
fn permittivity_scales_inversely() {
    let c = GaussianCharge::new(Vec3::ZERO, 1.0, 0.1).unwrap();
    let x = Vec3::new(0.2, 0.1, 0.0);
    assert!(rel_err(c.eval_potential(x, 4.0), c.eval_potential(x, 1.0) / 4.0) < 1e-15);
}

fn laplacian(set: &ChargeSet, x: Vec3, h: f64) -> f64 {
    let f0 = set.eval_field(x);
    let mut sum = -6.0 * f0;
    for axis in 0..3 {
        let mut e = [0.0; 3];
        e[axis] = h;
        let e = Vec3::from(e);
        sum += set.eval_field(x + e) + set.eval_field(x - e);
    }
    sum / (h * h)
}

/// Central-difference Laplacian equals -rho/eps0 where the density is
/// significant (within ~2 sigma of some charge).
#[test]
fn poisson_equation_holds() {
    let mut rng = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(1..=16);
        let set = random_set(&mut rng, k);
        let h = 1e-3 * set.min_spread();
        for _ in 0..1000 {
            let c = set.charges()[rng.random_range(0..k)];
            let s = c.spread();
            let x = c.location + random_point(&mut rng, 1.0) * (1.5 * s);
            let rhs = -set.eval_density_total(x) / set.permittivity();
            worst = worst.max(rel_err(laplacian(&set, x, h), rhs));
        }
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

fn fd<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = rng(5);
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let set = random_set(&mut rng, k);
        // Stay away from the series core so the difference quotient is clean.
        let x = loop {
            let x = random_point(&mut rng, 0.5);
            if set.charges().iter().all(|c| c.location.distance(x) > 0.02) {
                break x;
            }
        };
        let g = set.eval_param_gradients(x, 1.0);
        let h = 1e-6;
        let perturbed = |i: usize, f: &dyn Fn(&mut GaussianCharge, f64), d: f64| {
            let mut s = set.clone();
            f(&mut s.charges_mut()[i], d);
            s.eval_field(x)
        };
        for i in 0..k {
            let dq = fd(|d| perturbed(i, &|c, d| c.magnitude_raw += d, d), 0.0, h);
            let ds = fd(|d| perturbed(i, &|c, d| c.spread_raw += d, d), 0.0, h);
            let scale = g.d_magnitude_raw[i].abs().max(g.d_spread_raw[i].abs());
            assert!((dq - g.d_magnitude_raw[i]).abs() <= 1e-5 * scale, "dQ {dq} vs {}", g.d_magnitude_raw[i]);
            assert!((ds - g.d_spread_raw[i]).abs() <= 1e-5 * scale, "dsigma {ds} vs {}", g.d_spread_raw[i]);
            let mut num = [0.0; 3];
            for (axis, n) in num.iter_mut().enumerate() {
                *n = fd(
                    |d| {
                        perturbed(
                            i,
                            &|c, d| {
                                let mut e = [0.0; 3];
                                e[axis] = d;
                                c.location += Vec3::from(e);
                            },
                            d,
                        )
                    },
                    0.0,
                    h,
                );
            }
            let num = Vec3::from(num);
            let ana = g.d_location[i];
            assert!((num - ana).norm() <= 1e-5 * ana.norm(), "ds {num:?} vs {ana:?}");
        }

        let gx = set.eval_field_gradient_x(x);
        let num = Vec3::new(
            fd(|d| set.eval_field(x + Vec3::new(d, 0.0, 0.0)), 0.0, h),
            fd(|d| set.eval_field(x + Vec3::new(0.0, d, 0.0)), 0.0, h),
            fd(|d| set.eval_field(x + Vec3::new(0.0, 0.0, d)), 0.0, h),
        );
        assert!((num - gx).norm() <= 1e-5 * gx.norm(), "dx {num:?} vs {gx:?}");
        // Location gradient is the negated spatial gradient, summed over charges.
        let sum = g.d_location.iter().fold(Vec3::ZERO, |a, &b| a + b);
        assert!((sum + gx).norm() <= 1e-12 * gx.norm());
    }
}

/// The field of positive charges has no interior minimum: every strict grid
/// minimum lies on the boundary of the sampled box.
#[test]
fn minimum_principle_on_grids() {
    let mut rng = rng(21);
    for _ in 0..10 {
        let k = rng.random_range(1..=16);
        let set = random_set(&mut rng, k);
        let spec = GridSpec::centered_cube(0.6, 24).unwrap();
        let grid = evaluate_grid(&set, &spec, Execution::Sequential).unwrap();
        assert!(grid.strict_interior_minima().is_empty());
    }
}

fn arb_charge() -> impl Strategy<Value = GaussianCharge> {
    (
        -0.5..0.5f64,
        -0.5..0.5f64,
        -0.5..0.5f64,
        1e-3..10.0f64,
        1e-3..0.5f64,
    )
        .prop_map(|(x, y, z, q, s)| GaussianCharge::new(Vec3::new(x, y, z), q, s).unwrap())
}

fn arb_point() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn superposition(a in prop::collection::vec(arb_charge(), 1..8),
                     b in prop::collection::vec(arb_charge(), 1..8),
                     x in arb_point()) {
        let sa = ChargeSet::with_defaults(a).unwrap();
        let sb = ChargeSet::with_defaults(b).unwrap();
        let both = sa.concat(&sb).eval_field(x);
        let sum = sa.eval_field(x) + sb.eval_field(x);
        prop_assert!((both - sum).abs() <= 1e-13 * sum);
    }

    #[test]
    fn potential_is_positive_and_radially_decreasing(c in arb_charge(), dir in arb_point(),
                                                     r in 0.0..2.0f64, dr in 1e-6..0.5f64) {
        let Some(u) = dir.normalized() else { return Ok(()) };
        let near = c.eval_potential(c.location + u * r, 1.0);
        let far = c.eval_potential(c.location + u * (r + dr), 1.0);
        prop_assert!(near > 0.0 && far > 0.0);
        prop_assert!(far < near);
    }

    #[test]
    fn potential_is_rotation_invariant(c in arb_charge(), x in arb_point()) {
        let d = x - c.location;
        let swapped = c.location + Vec3::new(d.y, d.z, -d.x);
        let a = c.eval_potential(x, 1.0);
        let b = c.eval_potential(swapped, 1.0);
        prop_assert!((a - b).abs() <= 1e-13 * a);
    }

    #[test]
    fn json_round_trip_is_exact(cs in prop::collection::vec(arb_charge(), 1..6), tau in 0.1..5.0f64) {
        let set = ChargeSet::new(cs, 1.0, tau).unwrap();
        let back = ChargeSet::from_json(&set.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), set.to_json());
        prop_assert_eq!(back.charges(), set.charges());
    }
}

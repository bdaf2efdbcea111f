mod common;

use common::*;
use eisr::field::{ChargeSet, GaussianCharge};
use eisr::mesh::shapes::icosphere;
use eisr::mesh::SpatialIndex;
use eisr::optimizer::{
    cosine_lr, fit, init_charges, loss_bc, loss_cr, total_loss, Adam, FitConfig, FitError,
};
use eisr::{Execution, Vec3};
use proptest::prelude::*;
use rand::Rng;

fn bc_value(set: &ChargeSet, pts: &[Vec3]) -> f64 {
    let tau = set.iso_value();
    pts.iter().map(|&x| (set.eval_field(x) - tau).powi(2)).sum::<f64>() / pts.len() as f64
}

fn cr_value(set: &ChargeSet, interior: &[Vec3]) -> f64 {
    set.charges()
        .iter()
        .map(|c| interior.iter().map(|&y| c.location.distance_squared(y)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / set.len() as f64
}

/// Central differences of `value` over every raw parameter of `set`, in the
/// order (location x, y, z, ln Q, ln sigma) per charge.
fn numeric_gradient(set: &ChargeSet, value: impl Fn(&ChargeSet) -> f64) -> Vec<[f64; 5]> {
    let h = 1e-6;
    (0..set.len())
        .map(|i| {
            let mut out = [0.0; 5];
            for (p, o) in out.iter_mut().enumerate() {
                let shifted = |d: f64| {
                    let mut s = set.clone();
                    let c = &mut s.charges_mut()[i];
                    match p {
                        0..=2 => {
                            let mut e = [0.0; 3];
                            e[p] = d;
                            c.location += Vec3::from(e);
                        }
                        3 => c.magnitude_raw += d,
                        _ => c.spread_raw += d,
                    }
                    value(&s)
                };
                *o = (shifted(h) - shifted(-h)) / (2.0 * h);
            }
            out
        })
        .collect()
}

fn analytic(g: &eisr::FieldGradient, i: usize) -> [f64; 5] {
    let l = g.d_location[i];
    [l.x, l.y, l.z, g.d_magnitude_raw[i], g.d_spread_raw[i]]
}

fn assert_close(num: &[[f64; 5]], g: &eisr::FieldGradient, tol: f64) {
    let scale = (0..num.len())
        .flat_map(|i| analytic(g, i))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, n) in num.iter().enumerate() {
        let a = analytic(g, i);
        for p in 0..5 {
            assert!(
                (n[p] - a[p]).abs() <= tol * scale,
                "charge {i} param {p}: numeric {} analytic {}",
                n[p],
                a[p]
            );
        }
    }
}

#[test]
fn boundary_loss_gradient_matches_finite_differences() {
    let mut rng = rng(3);
    for _ in 0..10 {
        let k = rng.random_range(1..=6);
        let set = random_set(&mut rng, k);
        let batch: Vec<Vec3> = (0..50).map(|_| random_point(&mut rng, 0.6)).collect();
        let (value, grad) = loss_bc(&set, &batch, Execution::Sequential);
        assert!(rel_err(value, bc_value(&set, &batch)) < 1e-12);
        assert_close(&numeric_gradient(&set, |s| bc_value(s, &batch)), &grad, 1e-4);
    }
}

#[test]
fn restriction_loss_gradient_matches_finite_differences() {
    let mut rng = rng(4);
    for _ in 0..10 {
        let k = rng.random_range(1..=6);
        let set = random_set(&mut rng, k);
        let interior: Vec<Vec3> = (0..200).map(|_| random_point(&mut rng, 0.3)).collect();
        let index = SpatialIndex::new(interior.clone());
        let (value, grad) = loss_cr(&set, &index);
        assert!(rel_err(value, cr_value(&set, &interior)) < 1e-12);
        assert!(grad.d_magnitude_raw.iter().chain(&grad.d_spread_raw).all(|&v| v == 0.0));
        assert_close(&numeric_gradient(&set, |s| cr_value(s, &interior)), &grad, 1e-4);
    }
}

#[test]
fn total_loss_is_weighted_sum() {
    let mut rng = rng(6);
    let set = random_set(&mut rng, 5);
    let batch: Vec<Vec3> = (0..40).map(|_| random_point(&mut rng, 0.6)).collect();
    let index = SpatialIndex::new((0..100).map(|_| random_point(&mut rng, 0.3)).collect());
    let (bc, g_bc) = loss_bc(&set, &batch, Execution::Sequential);
    let (cr, g_cr) = loss_cr(&set, &index);
    let (l, g) = total_loss(&set, &batch, &index, 2e-2, Execution::Sequential);
    assert_eq!(l.total, bc + 0.02 * cr);
    for i in 0..5 {
        let expect = g_bc.d_location[i] + g_cr.d_location[i] * 0.02;
        assert!((g.d_location[i] - expect).norm() <= 1e-15 * expect.norm().max(1e-300));
    }
    let (l0, g0) = total_loss(&set, &batch, &index, 0.0, Execution::Sequential);
    assert_eq!(l0.total, bc);
    assert_eq!(g0, g_bc);
}

#[test]
fn adam_matches_reference_on_three_scalar_steps() {
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
    let grads = [0.3, -1.2, 0.05];
    let mut adam = Adam::new(1, b1, b2, eps);
    let mut p = [2.0];
    let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 2.0f64);
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        x -= lr * m_hat / (v_hat.sqrt() + eps);
        adam.update(&mut p, &[g], lr);
        assert_eq!(p[0], x, "step {t}");
    }
    assert_eq!(adam.steps(), 3);
    // Hand-evaluated: three steps of size ~lr with signs +, -, +.
    assert!((p[0] - 2.0).abs() < 3.0 * lr);
}

#[test]
fn cosine_schedule_shape() {
    let config = FitConfig {
        steps: 101,
        ..FitConfig::default()
    };
    assert_eq!(cosine_lr(0, &config), 1e-3);
    assert!(rel_err(cosine_lr(100, &config), 1e-7) < 1e-12);
    assert!(rel_err(cosine_lr(50, &config), 0.5 * (1e-3 + 1e-7)) < 1e-12);
    for t in 1..101 {
        assert!(cosine_lr(t, &config) <= cosine_lr(t - 1, &config));
    }
}

#[test]
fn init_is_seeded_and_within_ranges() {
    let config = FitConfig {
        num_charges: 500,
        seed: 9,
        ..FitConfig::default()
    };
    let a = init_charges(&config).unwrap();
    let b = init_charges(&config).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    for c in a.charges() {
        assert!(c.location.to_array().iter().all(|v| (-0.5..=0.5).contains(v)));
        // ln Q is stored, so exp(ln 1e-7) is 1e-7 up to a few ulps.
        assert!(rel_err(c.magnitude(), 1e-7) < 1e-14);
        assert_eq!(c.magnitude_raw, 1e-7f64.ln());
        assert!(c.spread() >= 1e-3);
    }
    let other = init_charges(&FitConfig { seed: 10, ..config }).unwrap();
    assert_ne!(a.to_json(), other.to_json());
}

#[test]
fn huge_learning_rate_aborts_with_snapshot() {
    let target = icosphere(2, 0.4);
    let config = FitConfig {
        num_charges: 4,
        steps: 50,
        lr_start: 1e6,
        lr_end: 1e5,
        surface_pool: 500,
        batch: 100,
        interior_pool: 200,
        ..FitConfig::default()
    };
    match fit(&target, &config, Execution::Sequential, &mut |_| {}) {
        Err(FitError::Diverged(snap)) => {
            assert!(snap.charges.is_finite());
            assert!(snap.step < 50);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn fit_history_is_ordered_and_finite() {
    let target = icosphere(2, 0.4);
    let config = FitConfig {
        num_charges: 16,
        steps: 300,
        lr_start: 5e-2,
        init_q: 0.05,
        surface_pool: 2000,
        batch: 256,
        interior_pool: 500,
        record_every: 25,
        seed: 1,
        ..FitConfig::default()
    };
    let mut progress = 0;
    let out = fit(&target, &config, Execution::Parallel, &mut |_| progress += 1).unwrap();
    let h = &out.report.history;
    assert_eq!(progress, h.len());
    assert!(h.windows(2).all(|w| w[0].step < w[1].step));
    assert!(h.iter().all(|e| e.total.is_finite() && e.bc.is_finite() && e.cr.is_finite()));
    assert!(out.report.late_median_loss < out.report.early_median_loss);
    assert!(out.charges.charges().iter().all(|c| c.magnitude() > 0.0 && c.spread() > 0.0));
}

proptest! {
    #[test]
    fn zero_loss_at_exact_minimum(q in 0.1..3.0f64, sigma in 0.01..0.3f64, r in 0.05..1.0f64) {
        // Points on the analytic iso-sphere of one charge with tau = phi(r).
        let c = GaussianCharge::new(Vec3::ZERO, q, sigma).unwrap();
        let tau = c.eval_potential(Vec3::new(r, 0.0, 0.0), 1.0);
        let set = ChargeSet::new(vec![c], 1.0, tau).unwrap();
        let pts = [Vec3::new(r, 0.0, 0.0), Vec3::new(0.0, r, 0.0), Vec3::new(0.0, 0.0, -r)];
        let (v, g) = loss_bc(&set, &pts, Execution::Sequential);
        prop_assert!(v < 1e-28);
        prop_assert!(g.d_magnitude_raw[0].abs() < 1e-13);
        let index = SpatialIndex::new(vec![Vec3::ZERO]);
        let (cr, gcr) = loss_cr(&set, &index);
        prop_assert_eq!(cr, 0.0);
        prop_assert_eq!(gcr.d_location[0], Vec3::ZERO);
    }
}

//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stdout (bypassing the harness capture) and then asserts.
//!
//! The bunny run takes hours on a CPU and only runs with
//! `EISR_ACCEPTANCE_BUNNY=/path/to/bunny.{obj,ply}` and `--ignored`.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use common::*;
use eisr::field::{ChargeSet, GaussianCharge};
use eisr::isosurface::{evaluate_grid, marching_cubes, GridSpec, ScalarGrid};
use eisr::mesh::shapes::{cuboid, icosphere};
use eisr::mesh::{load_mesh, sample_surface, InsideTester, SpatialIndex, TriangleMesh};
use eisr::metrics::{chamfer, evaluate_pair, f1_score, hausdorff, iou_voxel, normal_consistency, MetricConfig};
use eisr::optimizer::{fit, fit_from, init_charges, FitConfig, FitOutcome};
use eisr::spectral::{charge_stats, numeric_spectrum};
use eisr::{Execution, Vec3};
use rand::Rng;

fn report(n: u32, name: &str, ok: bool, started: Instant, budget: &str, detail: String) {
    let line = format!(
        "{} criterion {n:>2} {name}: {detail} [{:.2} s, budget {budget}]",
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    assert!(ok, "{line}");
}

fn laplacian(set: &ChargeSet, x: Vec3, h: f64) -> f64 {
    let mut sum = -6.0 * set.eval_field(x);
    for e in [Vec3::new(h, 0.0, 0.0), Vec3::new(0.0, h, 0.0), Vec3::new(0.0, 0.0, h)] {
        sum += set.eval_field(x + e) + set.eval_field(x - e);
    }
    sum / (h * h)
}

#[test]
fn c01_poisson_equation() {
    let t = Instant::now();
    let mut rng = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(1..=16);
        let set = random_set(&mut rng, k);
        let h = 1e-3 * set.min_spread();
        for _ in 0..1000 {
            // Points where the density is significant: within 1.5 sigma of a charge.
            let c = set.charges()[rng.random_range(0..k)];
            let x = c.location + random_point(&mut rng, 1.0) * (1.5 * c.spread());
            let rhs = -set.eval_density_total(x) / set.permittivity();
            worst = worst.max(rel_err(laplacian(&set, x, h), rhs));
        }
    }
    report(1, "Laplacian = -rho/eps0", worst <= 1e-3, t, "10 s", format!("worst rel err {worst:.3e} <= 1e-3 over 20x1000 points"));
}

#[test]
fn c02_closed_form_limits() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for &(q, sigma) in &[(1.0, 0.1), (1.3, 0.04), (0.02, 0.3), (7.0, 0.005)] {
        let c = GaussianCharge::new(Vec3::new(0.1, -0.2, 0.05), q, sigma).unwrap();
        let r = 100.0 * sigma;
        let far = c.eval_potential(c.location + Vec3::new(0.0, 0.0, r), 1.0);
        let center = c.eval_potential(c.location, 1.0);
        worst = worst
            .max(rel_err(far, q / (4.0 * PI * r)))
            .max(rel_err(center, q * (2.0 / PI).sqrt() / (4.0 * PI * sigma)));
    }
    report(2, "far field and center value", worst <= 1e-8, t, "1 s", format!("worst rel err {worst:.3e} <= 1e-8"));
}

#[test]
fn c03_gradient_oracle() {
    let t = Instant::now();
    let mut rng = rng(103);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let set = random_set(&mut rng, k);
        let x = loop {
            let x = random_point(&mut rng, 0.5);
            if set.charges().iter().all(|c| c.location.distance(x) > 0.02) {
                break x;
            }
        };
        let g = set.eval_param_gradients(x, 1.0);
        let at = |i: usize, p: usize, d: f64| {
            let mut s = set.clone();
            let c = &mut s.charges_mut()[i];
            match p {
                0 => c.location.x += d,
                1 => c.location.y += d,
                2 => c.location.z += d,
                3 => c.magnitude_raw += d,
                _ => c.spread_raw += d,
            }
            s.eval_field(x)
        };
        for i in 0..k {
            let l = g.d_location[i];
            let analytic = [l.x, l.y, l.z, g.d_magnitude_raw[i], g.d_spread_raw[i]];
            let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (p, a) in analytic.iter().enumerate() {
                let num = (at(i, p, h) - at(i, p, -h)) / (2.0 * h);
                worst = worst.max((num - a).abs() / scale);
            }
        }
        let gx = set.eval_field_gradient_x(x);
        let axis = |e: Vec3| (set.eval_field(x + e * h) - set.eval_field(x - e * h)) / (2.0 * h);
        let num = Vec3::new(axis(Vec3::new(1.0, 0.0, 0.0)), axis(Vec3::new(0.0, 1.0, 0.0)), axis(Vec3::new(0.0, 0.0, 1.0)));
        worst = worst.max((num - gx).norm() / gx.norm());
    }
    report(3, "gradients vs finite differences", worst <= 1e-5, t, "5 s", format!("worst rel err {worst:.3e} <= 1e-5 over 100 configs"));
}

#[test]
fn c04_single_charge_iso_sphere() {
    let t = Instant::now();
    let (q, sigma, tau) = (4.0 * PI * 0.3, 0.08, 1.0);
    let center = Vec3::new(0.013, -0.021, 0.007);
    let set = ChargeSet::new(vec![GaussianCharge::new(center, q, sigma).unwrap()], 1.0, tau).unwrap();
    // Q erf(r/(sqrt2 sigma)) = 4 pi tau r, with a quadrature erf.
    let r_star = bisect(|r| reference_potential(q, sigma, r) - tau, 1e-6, 10.0);
    let spec = GridSpec::centered_cube(0.55, 128).unwrap();
    let mesh = marching_cubes(&evaluate_grid(&set, &spec, Execution::Parallel).unwrap(), tau);
    let worst = mesh
        .vertices()
        .iter()
        .map(|v| (v.distance(center) - r_star).abs() / r_star)
        .fold(0.0f64, f64::max);
    let ok = !mesh.is_empty() && mesh.is_watertight() && worst <= 0.01;
    report(
        4,
        "K=1 iso-surface at 128^3",
        ok,
        t,
        "30 s",
        format!(
            "r* = {r_star:.6}, worst vertex rel dev {worst:.2e} <= 1e-2, {} faces, watertight {}",
            mesh.faces().len(),
            mesh.is_watertight()
        ),
    );
}

/// Unit sphere normalized into the unit cube: radius 0.5.
fn target_sphere(subdivisions: u32) -> TriangleMesh {
    let (mesh, _) = icosphere(subdivisions, 1.0).normalize_to_unit_cube().unwrap();
    mesh
}

fn extract(set: &ChargeSet, half_extent: f64, resolution: usize) -> (ScalarGrid, TriangleMesh) {
    let spec = GridSpec::centered_cube(half_extent, resolution).unwrap();
    let grid = evaluate_grid(set, &spec, Execution::Parallel).unwrap();
    let mesh = marching_cubes(&grid, set.iso_value());
    (grid, mesh)
}

fn surface_index(mesh: &TriangleMesh, n: usize) -> SpatialIndex {
    SpatialIndex::new(sample_surface(mesh, n, 99).unwrap().into_iter().map(|s| s.position).collect())
}

fn median_surface_distance(set: &ChargeSet, surface: &SpatialIndex) -> f64 {
    charge_stats(set, surface).distance_quantiles.p50
}

#[test]
fn c05_sphere_pipeline() {
    let t = Instant::now();
    let target = target_sphere(5);
    let config = FitConfig {
        num_charges: 200,
        steps: 5000,
        lr_start: 1e-2,
        surface_pool: 50_000,
        batch: 1000,
        interior_pool: 10_000,
        seed: 5,
        ..FitConfig::default()
    };
    let initial = init_charges(&config).unwrap();
    let FitOutcome { charges, report: fit_report } = fit(&target, &config, Execution::Parallel, &mut |_| {}).unwrap();
    let (grid, mesh) = extract(&charges, 0.6, 128);
    let metrics = evaluate_pair(
        &mesh,
        &target,
        &MetricConfig {
            points: 100_000,
            iou_resolution: Some(128),
            ..MetricConfig::default()
        },
    )
    .unwrap();
    let minima = grid.strict_interior_minima().len();
    let surface = surface_index(&target, 100_000);
    let (d0, d1) = (median_surface_distance(&initial, &surface), median_surface_distance(&charges, &surface));
    let interior0 = fit_report.initial_stats.interior_distance.mean;
    let interior1 = fit_report.final_stats.interior_distance.mean;
    let iou = metrics.iou.unwrap();
    let bc = fit_report.final_losses.bc;
    let ok = iou >= 0.95
        && metrics.f1 >= 95.0
        && bc < 1e-3
        && minima == 0
        && mesh.is_watertight()
        && interior1 < interior0
        && fit_report.late_median_loss < fit_report.early_median_loss;
    report(
        5,
        "sphere fit K=200, 5000 steps",
        ok,
        t,
        "10 min on 8 cores",
        format!(
            "IoU {iou:.4} >= 0.95, F1 {:.2} >= 95, NC {:.4}, final bc {bc:.3e} < 1e-3, interior minima {minima}, \
             mean charge-interior distance {interior0:.4} -> {interior1:.4}, \
             median charge-surface distance {d0:.4} -> {d1:.4} (recorded), loss median {:.3e} -> {:.3e}, fit {:.1} s",
            metrics.f1,
            metrics.normal_consistency,
            fit_report.early_median_loss,
            fit_report.late_median_loss,
            fit_report.wall_clock_seconds
        ),
    );
}

#[test]
#[ignore = "hours on a CPU; set EISR_ACCEPTANCE_BUNNY to a bunny mesh and pass --ignored"]
fn c06_bunny_full_scale() {
    let t = Instant::now();
    let Ok(path) = std::env::var("EISR_ACCEPTANCE_BUNNY") else {
        let _ = writeln!(std::io::stdout(), "SKIP criterion  6 bunny K=1000, 60k steps: EISR_ACCEPTANCE_BUNNY not set");
        return;
    };
    let (target, _) = load_mesh(&path).unwrap().normalize_to_unit_cube().unwrap();
    let config = FitConfig {
        num_charges: 1000,
        seed: 6,
        ..FitConfig::default()
    };
    let mut last = Instant::now();
    let out = fit(&target, &config, Execution::Parallel, &mut |e| {
        if let eisr::optimizer::FitEvent::Progress(h) = e {
            if last.elapsed().as_secs() >= 60 {
                last = Instant::now();
                eprintln!("step {} loss {:.3e}", h.step, h.total);
            }
        }
    })
    .unwrap();
    let (_, mesh) = extract(&out.charges, 0.6, 256);
    let m = evaluate_pair(&mesh, &target, &MetricConfig::default()).unwrap();
    let iou = m.iou.unwrap_or(f64::NAN);
    let ok = m.f1 >= 95.0 && iou >= 0.95 && m.normal_consistency >= 0.98;
    report(
        6,
        "bunny K=1000, 60k steps",
        ok,
        t,
        "hours",
        format!("F1 {:.3} >= 95, IoU {iou:.4} >= 0.95, NC {:.4} >= 0.98", m.f1, m.normal_consistency),
    );
}

fn brute_directed(a: &[Vec3], b: &[Vec3]) -> Vec<(f64, usize)> {
    a.iter()
        .map(|&q| {
            let mut best = (f64::INFINITY, 0);
            for (i, p) in b.iter().enumerate() {
                let d = q.distance_squared(*p);
                if d < best.0 {
                    best = (d, i);
                }
            }
            (best.0.sqrt(), best.1)
        })
        .collect()
}

#[test]
fn c07_metric_oracles() {
    let t = Instant::now();
    let mut rng = rng(107);
    let mut exact = true;
    for _ in 0..5 {
        let a: Vec<Vec3> = (0..500).map(|_| random_point(&mut rng, 0.5)).collect();
        let b: Vec<Vec3> = (0..500).map(|_| random_point(&mut rng, 0.5)).collect();
        let na: Vec<Vec3> = (0..500).map(|_| random_point(&mut rng, 1.0).normalized().unwrap()).collect();
        let nb: Vec<Vec3> = (0..500).map(|_| random_point(&mut rng, 1.0).normalized().unwrap()).collect();
        let ab = brute_directed(&a, &b);
        let ba = brute_directed(&b, &a);
        let mean = |v: &[(f64, usize)]| v.iter().map(|x| x.0).sum::<f64>() / v.len() as f64;
        let cd = 0.5 * mean(&ab) + 0.5 * mean(&ba);
        let hd = ab.iter().chain(&ba).map(|x| x.0).fold(0.0, f64::max);
        let thr = 0.04;
        let p = 100.0 * ab.iter().filter(|x| x.0 <= thr).count() as f64 / 500.0;
        let r = 100.0 * ba.iter().filter(|x| x.0 <= thr).count() as f64 / 500.0;
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let nc_side = |from: &[(f64, usize)], fn_: &[Vec3], tn: &[Vec3]| {
            from.iter().zip(fn_).map(|(&(_, j), n)| n.dot(tn[j]).abs()).sum::<f64>() / 500.0
        };
        let nc = 0.5 * nc_side(&ab, &na, &nb) + 0.5 * nc_side(&ba, &nb, &na);
        let samples = |p: &[Vec3], n: &[Vec3]| {
            p.iter()
                .zip(n)
                .map(|(&position, &normal)| eisr::mesh::PointSample {
                    position,
                    normal: Some(normal),
                    source_face: None,
                })
                .collect::<Vec<_>>()
        };
        let got_f1 = f1_score(&a, &b, thr).unwrap();
        exact &= chamfer(&a, &b).unwrap() == cd
            && hausdorff(&a, &b).unwrap() == hd
            && (got_f1.precision, got_f1.recall) == (p, r)
            && got_f1.f1 == f1
            && normal_consistency(&samples(&a, &na), &samples(&b, &nb)).unwrap() == nc;
    }
    let iou = iou_voxel(
        &cuboid(Vec3::ZERO, Vec3::splat(1.0)),
        &cuboid(Vec3::new(0.5, 0.0, 0.0), Vec3::new(1.5, 1.0, 1.0)),
        128,
    )
    .unwrap();
    // One voxel layer: the voxel box spans the union's 1.5 extent with a small margin.
    let layer = 1.5 * 1.04 / 128.0;
    let ok = exact && (iou - 1.0 / 3.0).abs() <= layer;
    report(
        7,
        "metric oracles",
        ok,
        t,
        "10 s",
        format!("brute force exact on 5x500 points: {exact}; half-overlap IoU {iou:.5} = 1/3 +- {layer:.4}"),
    );
}

#[test]
fn c08_spectral_identity() {
    let t = Instant::now();
    let single = |sigma: f64| ChargeSet::with_defaults(vec![GaussianCharge::new(Vec3::ZERO, 1.0, sigma).unwrap()]).unwrap();
    let profile = numeric_spectrum(&single(0.1), 64, 2.0).unwrap();
    let (lo, hi) = profile.mid_band_ratio_range().unwrap();
    // sigma = 0.05 needs a finer grid to be resolved; compare both at 128^3.
    let nu_min = 4.0;
    let wide = numeric_spectrum(&single(0.1), 128, 2.0).unwrap().band_energy_share(nu_min);
    let narrow = numeric_spectrum(&single(0.05), 128, 2.0).unwrap().band_energy_share(nu_min);
    let ok = lo >= 0.9 && hi <= 1.1 && narrow > wide;
    report(
        8,
        "spectral identity",
        ok,
        t,
        "30 s",
        format!(
            "sigma 0.1 at 64^3: mid-band ratio in [{lo:.6}, {hi:.6}] within [0.9, 1.1]; \
             energy share at |nu| >= {nu_min}: sigma 0.1 {wide:.3e} < sigma 0.05 {narrow:.3e}"
        ),
    );
}

#[test]
fn c09_determinism() {
    let t = Instant::now();
    let target = target_sphere(3);
    let config = FitConfig {
        num_charges: 16,
        steps: 200,
        lr_start: 1e-2,
        init_q: 0.05,
        surface_pool: 4000,
        batch: 500,
        interior_pool: 1000,
        seed: 9,
        ..FitConfig::default()
    };
    let run = || fit(&target, &config, Execution::Sequential, &mut |_| {}).unwrap().charges.to_json();
    let (a, b) = (run(), run());
    let same_fit = a == b;

    let set = ChargeSet::from_json(&a).unwrap();
    let spec = GridSpec::centered_cube(0.6, 48).unwrap();
    let reference = evaluate_grid(&set, &spec, Execution::Sequential).unwrap();
    let mut same_grid = true;
    let mut same_parallel_fit = true;
    for threads in [1, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            for exec in [Execution::Sequential, Execution::Parallel] {
                let g = evaluate_grid(&set, &spec, exec).unwrap();
                same_grid &= g.values().iter().zip(reference.values()).all(|(x, y)| x.to_bits() == y.to_bits());
            }
            let p = fit(&target, &config, Execution::Parallel, &mut |_| {}).unwrap().charges.to_json();
            same_parallel_fit &= p == a;
        });
    }
    let ok = same_fit && same_grid && same_parallel_fit;
    report(
        9,
        "determinism",
        ok,
        t,
        "-",
        format!(
            "seeded fit JSON byte-identical: {same_fit}; grid bit-identical across 1/2/4 threads: {same_grid}; \
             parallel fit matches sequential: {same_parallel_fit}"
        ),
    );
}

/// A converged 24-charge fit of the sphere plus 8 negligible charges on a
/// shell well outside it. Added to a fitted field, the outside charges feel
/// only the residual of the boundary loss.
fn fitted_plus_outside(target: &TriangleMesh, base: &FitConfig) -> ChargeSet {
    let warm = FitConfig {
        num_charges: 24,
        steps: 1500,
        lr_start: 1e-2,
        init_q: 0.05,
        ..base.clone()
    };
    let fitted = fit(target, &warm, Execution::Parallel, &mut |_| {}).unwrap().charges;
    let mut rng = rng(110);
    let mut charges = fitted.charges().to_vec();
    for _ in 0..8 {
        let dir = loop {
            if let Some(d) = random_point(&mut rng, 1.0).normalized() {
                break d;
            }
        };
        charges.push(GaussianCharge::new(dir * 0.8, base.init_q, base.init_sigma_std).unwrap());
    }
    ChargeSet::new(charges, 1.0, base.tau).unwrap()
}

#[test]
fn c10_charge_restriction_ablation() {
    let t = Instant::now();
    let target = target_sphere(4);
    let inside = InsideTester::new(&target).unwrap();
    let surface = surface_index(&target, 50_000);
    let base = FitConfig {
        steps: 2000,
        lr_start: 1e-3,
        surface_pool: 20_000,
        batch: 1000,
        interior_pool: 5000,
        seed: 10,
        ..FitConfig::default()
    };
    let initial = fitted_plus_outside(&target, &base);
    let outside_at_start = initial.charges().iter().filter(|c| !inside.contains(c.location)).count();
    let d0 = median_surface_distance(&initial, &surface);
    let run = |lambda_cr: f64| {
        let config = FitConfig {
            num_charges: initial.len(),
            lambda_cr,
            ..base.clone()
        };
        fit_from(&target, initial.clone(), &config, Execution::Parallel, &mut |_| {}).unwrap()
    };
    let free = run(0.0);
    let restricted = run(2e-2);
    let outside_free = free.charges.charges().iter().filter(|c| !inside.contains(c.location)).count();
    let outside_restricted = restricted.charges.charges().iter().filter(|c| !inside.contains(c.location)).count();
    let d1 = median_surface_distance(&restricted.charges, &surface);
    let ok = outside_at_start == 8 && outside_free >= 1 && d1 < d0;
    report(
        10,
        "charge restriction ablation",
        ok,
        t,
        "-",
        format!(
            "outside charges: start {outside_at_start}, lambda 0 -> {outside_free} (>= 1), lambda 2e-2 -> {outside_restricted}; \
             median charge-surface distance {d0:.4} -> {d1:.4} with lambda 2e-2; final bc {:.2e} / {:.2e}",
            free.report.final_losses.bc, restricted.report.final_losses.bc
        ),
    );
}

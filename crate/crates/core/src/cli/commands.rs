use std::path::Path;

use serde_json::json;

use eisr::field::ChargeSet;
use eisr::isosurface::{evaluate_grid, marching_cubes_with, slice_field, GridSpec};
use eisr::mesh::{load_mesh, sample_surface, save_obj, MeshError, Similarity, SpatialIndex, TriangleMesh};
use eisr::metrics::{evaluate_pair, MetricError};
use eisr::optimizer::{fit_from, init_charges, FitError, FitEvent};
use eisr::spectral::{charge_stats, numeric_spectrum};
use eisr::summary::Quantiles;

use super::args::{AnalyzeArgs, ExtractArgs, FitArgs, MetricsArgs, SliceArgs};
use super::run_dir::{ManifestBuilder, RunDir};
use super::{CliError, Context};

/// Resolution of the self-extracted surface used by `analyze` without `--mesh`.
const ANALYZE_SURFACE_RESOLUTION: usize = 128;

fn manifest(ctx: &Context, command: &str) -> ManifestBuilder {
    let mut m = ManifestBuilder::new(command, ctx.threads, ctx.deterministic);
    if let Some(p) = &ctx.config_path {
        m.inputs.push(p.clone());
    }
    m
}

fn mesh_error(err: MeshError) -> CliError {
    match err {
        MeshError::NotWatertight { .. } | MeshError::Empty | MeshError::ZeroArea | MeshError::InteriorRejection { .. } => {
            CliError::Precondition(err.to_string())
        }
        other => CliError::Io(other.to_string()),
    }
}

fn read_charges(path: &Path) -> Result<ChargeSet, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ChargeSet::from_json(&text).map_err(|e| CliError::io(path, e))
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn checkpoint_name(step: usize) -> String {
    format!("checkpoints/step_{step:08}.json")
}

pub fn fit(ctx: &Context, a: FitArgs) -> Result<(), CliError> {
    let mut config = ctx.config.fit.clone().unwrap_or_default();
    let set_usize = |dst: &mut usize, v: Option<u64>| {
        if let Some(v) = v {
            *dst = v as usize;
        }
    };
    set_usize(&mut config.num_charges, a.charges);
    set_usize(&mut config.steps, a.steps);
    set_usize(&mut config.batch, a.batch);
    set_usize(&mut config.surface_pool, a.surface_pool);
    set_usize(&mut config.interior_pool, a.interior_pool);
    set_usize(&mut config.checkpoint_every, a.checkpoint_every);
    for (dst, v) in [
        (&mut config.lr_start, a.lr_start),
        (&mut config.lr_end, a.lr_end),
        (&mut config.lambda_cr, a.lambda),
        (&mut config.tau, a.tau),
        (&mut config.init_q, a.init_q),
        (&mut config.init_sigma_std, a.init_sigma_std),
    ] {
        if let Some(v) = v {
            *dst = v;
        }
    }
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mesh = load_mesh(&a.input).map_err(mesh_error)?;
    let (target, transform) = if a.no_normalize {
        (mesh, Similarity::IDENTITY)
    } else {
        mesh.normalize_to_unit_cube().map_err(mesh_error)?
    };
    target.check_watertight().map_err(mesh_error)?;

    let mut run = RunDir::create(&a.out, ctx.force)?;
    let mut m = manifest(ctx, "fit");
    m.inputs.push(a.input.clone());
    m.seed = Some(config.seed);
    m.config = to_value(&config);
    run.write("transform.json", &(serde_json::to_string_pretty(&transform).expect("serializable") + "\n"))?;

    let initial = init_charges(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut sink_error: Option<CliError> = None;
    let result = {
        let run = &mut run;
        let sink_error = &mut sink_error;
        let mut sink = |event: FitEvent<'_>| match event {
            FitEvent::Progress(h) => eprintln!(
                "step {:>7}  lr {:.3e}  loss {:.6e}  bc {:.6e}  cr {:.6e}",
                h.step, h.learning_rate, h.total, h.bc, h.cr
            ),
            FitEvent::Checkpoint { step, charges } => {
                if let Err(e) = run.write(&checkpoint_name(step), &charges.to_json()) {
                    sink_error.get_or_insert(e);
                }
            }
        };
        fit_from(&target, initial, &config, ctx.exec(), &mut sink)
    };
    if let Some(e) = sink_error {
        return Err(e);
    }
    match result {
        Ok(outcome) => {
            run.write("charges.json", &outcome.charges.to_json())?;
            let report = serde_json::to_string_pretty(&outcome.report).expect("serializable");
            run.write("report.json", &(report + "\n"))?;
            m.details = json!({
                "final_losses": outcome.report.final_losses,
                "wall_clock_seconds": outcome.report.wall_clock_seconds,
            });
            run.finish(m)
        }
        Err(FitError::Diverged(snapshot)) => {
            let msg = format!(
                "loss became non-finite at step {} (lr {:.3e}); last finite charges in {}",
                snapshot.step,
                snapshot.learning_rate,
                run.path("diverged.json").display()
            );
            run.write("diverged.json", &snapshot.charges.to_json())?;
            m.notes.push(msg.clone());
            run.finish(m)?;
            Err(CliError::Diverged(msg))
        }
        Err(FitError::Mesh(e)) => Err(mesh_error(e)),
        Err(e) => Err(CliError::Usage(e.to_string())),
    }
}

pub fn extract(ctx: &Context, a: ExtractArgs) -> Result<(), CliError> {
    let mut set = read_charges(&a.charges)?;
    if let Some(tau) = a.tau {
        set.set_iso_value(tau).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let spec = GridSpec::centered_cube(a.half_extent, a.resolution).map_err(|e| CliError::Usage(e.to_string()))?;
    let transform = if !a.unnormalize {
        None
    } else {
        let path = a
            .transform
            .clone()
            .unwrap_or_else(|| a.charges.parent().unwrap_or(Path::new(".")).join("transform.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let t: Similarity = serde_json::from_str(&text).map_err(|e| CliError::io(&path, e))?;
        Some((path, t))
    };

    let mut run = RunDir::create(&a.out, ctx.force)?;
    let mut m = manifest(ctx, "extract");
    m.inputs.push(a.charges.clone());
    let tau = set.iso_value();
    m.config = json!({"tau": tau, "resolution": a.resolution, "half_extent": a.half_extent});

    let grid = evaluate_grid(&set, &spec, ctx.exec()).map_err(|e| CliError::Precondition(e.to_string()))?;
    let mut mesh = marching_cubes_with(&grid, tau, ctx.exec());
    if mesh.is_empty() {
        let msg = format!("iso-value {tau} is outside the sampled field range; the mesh is empty");
        eprintln!("warning: {msg}");
        m.notes.push(msg);
    }
    let watertight = mesh.is_empty() || mesh.is_watertight();
    if !watertight {
        let msg = "the iso-surface reaches the sampling box and is open; raise --half-extent".to_string();
        eprintln!("warning: {msg}");
        m.notes.push(msg);
    }
    let field = set.prepare();
    let residuals: Vec<f64> = mesh.vertices().iter().map(|&v| (field.value(v) - tau).abs()).collect();
    m.details = json!({
        "vertices": mesh.vertices().len(),
        "faces": mesh.faces().len(),
        "watertight": watertight,
        "field_residual": Quantiles::of(&residuals),
    });
    if let Some((path, t)) = transform {
        mesh = mesh.transformed(&t.inverse());
        m.inputs.push(path);
    }
    let out = run.path("mesh.obj");
    save_obj(&mesh, &out).map_err(|e| CliError::Io(e.to_string()))?;
    run.record(out);
    run.finish(m)
}

fn metric_error(e: MetricError) -> CliError {
    match e {
        MetricError::Mesh { which, source } => match mesh_error(source) {
            CliError::Precondition(msg) => CliError::Precondition(format!(
                "{which} mesh: {msg} (IoU needs watertight meshes; --no-iou skips it)"
            )),
            other => other,
        },
        other => CliError::Usage(other.to_string()),
    }
}

pub fn metrics(ctx: &Context, a: MetricsArgs) -> Result<(), CliError> {
    let mut config = ctx.config.metrics.clone().unwrap_or_default();
    if let Some(p) = a.points {
        config.points = p as usize;
    }
    if let Some(r) = a.iou_resolution {
        config.iou_resolution = Some(r as usize);
    }
    if a.no_iou {
        config.iou_resolution = None;
    }
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    let pred = load_mesh(&a.pred).map_err(mesh_error)?;
    let mut gt = load_mesh(&a.gt).map_err(mesh_error)?;
    if a.normalize_gt {
        gt = gt.normalize_to_unit_cube().map_err(mesh_error)?.0;
    }

    let mut run = RunDir::create(&a.out, ctx.force)?;
    let mut m = manifest(ctx, "metrics");
    m.inputs.extend([a.pred.clone(), a.gt.clone()]);
    m.seed = Some(config.seed);
    m.config = to_value(&config);
    let report = evaluate_pair(&pred, &gt, &config).map_err(metric_error)?;
    run.write("metrics.json", &(serde_json::to_string_pretty(&report).expect("serializable") + "\n"))?;
    let line = report.tsv_line();
    run.write("metrics.tsv", &format!("{line}\n"))?;
    println!("{line}");
    run.finish(m)
}

pub fn slice(ctx: &Context, a: SliceArgs) -> Result<(), CliError> {
    let set = read_charges(&a.charges)?;
    let img = slice_field(&set, a.axis, a.offset, a.resolution, a.extent, ctx.exec()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut run = RunDir::create(&a.out, ctx.force)?;
    let mut m = manifest(ctx, "slice");
    m.inputs.push(a.charges.clone());
    m.config = json!({"axis": a.axis, "offset": a.offset, "resolution": a.resolution, "extent": a.extent});
    run.write("slice.pgm", &img.to_pgm())?;
    run.write("slice.json", &(img.sidecar_json() + "\n"))?;
    m.details = json!({
        "min": img.min,
        "max": img.max,
        "contours": img.contours.len(),
        "closed_contours": img.contours.iter().filter(|c| c.closed).count(),
    });
    run.finish(m)
}

pub fn analyze(ctx: &Context, a: AnalyzeArgs) -> Result<(), CliError> {
    let set = read_charges(&a.charges)?;
    let seed = ctx.seed.unwrap_or(0);
    let mut m = manifest(ctx, "analyze");
    m.inputs.push(a.charges.clone());
    m.seed = Some(seed);

    let surface: TriangleMesh = match &a.mesh {
        Some(p) => {
            m.inputs.push(p.clone());
            let mesh = load_mesh(p).map_err(mesh_error)?;
            if a.raw_mesh {
                mesh
            } else {
                mesh.normalize_to_unit_cube().map_err(mesh_error)?.0
            }
        }
        None => {
            let spec = GridSpec::centered_cube(eisr::isosurface::DEFAULT_HALF_EXTENT, ANALYZE_SURFACE_RESOLUTION)
                .expect("valid default grid");
            let grid = evaluate_grid(&set, &spec, ctx.exec()).map_err(|e| CliError::Precondition(e.to_string()))?;
            m.notes.push(format!(
                "surface distances measured to the set's own iso-surface (resolution {ANALYZE_SURFACE_RESOLUTION})"
            ));
            marching_cubes_with(&grid, set.iso_value(), ctx.exec())
        }
    };
    if surface.is_empty() {
        return Err(CliError::Precondition("no surface to measure charge distances against; pass --mesh".into()));
    }
    let samples = sample_surface(&surface, a.points, seed).map_err(mesh_error)?;
    let index = SpatialIndex::new(samples.into_iter().map(|s| s.position).collect());

    let spectrum = if a.spectrum {
        let (idx, charge) = set
            .charges()
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.magnitude_raw.total_cmp(&b.magnitude_raw))
            .map(|(i, c)| (i, *c))
            .expect("charge sets are never empty");
        let single = ChargeSet::new(vec![charge], set.permittivity(), set.iso_value()).expect("charge from a valid set");
        let profile = numeric_spectrum(&single, a.spectrum_resolution, a.spectrum_extent)
            .map_err(|e| CliError::Precondition(format!("{e} (adjust --spectrum-resolution / --spectrum-extent)")))?;
        if set.len() > 1 {
            m.notes.push(format!("spectrum analyzes only charge {idx} (largest Q) of {}", set.len()));
        }
        Some((idx, profile))
    } else {
        None
    };

    let mut run = RunDir::create(&a.out, ctx.force)?;
    let stats = charge_stats(&set, &index);
    run.write("stats.json", &(stats.to_json() + "\n"))?;
    run.write("stats.csv", &stats.to_csv())?;
    m.config = json!({"points": a.points, "spectrum": a.spectrum});
    let mut details = json!({"count": stats.count});
    if let Some((idx, profile)) = spectrum {
        run.write("spectrum.json", &(profile.to_json() + "\n"))?;
        details["spectrum_charge"] = json!(idx);
        details["spectrum_mid_band_ratio"] = json!(profile.mid_band_ratio_range());
    }
    m.details = details;
    run.finish(m)
}

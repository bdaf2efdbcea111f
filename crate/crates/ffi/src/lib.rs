//! C ABI over the `eisr` library.
//!
//! Objects are opaque handles created by `*_new`/`*_load`/`eisr_fit`/
//! `eisr_extract` and released with the matching `*_free`. Every fallible
//! function returns an `EisrStatus`; on failure the message is available
//! from `eisr_last_error` on the same thread. Panics never cross the
//! boundary; they come back as `EISR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use eisr::field::{ChargeSet, FieldError, GaussianCharge};
use eisr::isosurface::{evaluate_grid, marching_cubes_with, GridSpec};
use eisr::mesh::{load_mesh, save_obj, MeshError, TriangleMesh};
use eisr::metrics::{evaluate_pair, MetricConfig, MetricError};
use eisr::optimizer::{fit, FitConfig, FitError};
use eisr::{Execution, Vec3};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EisrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// Input violates a requirement, e.g. a mesh that is not watertight.
    Precondition = 5,
    /// Optimization produced non-finite values.
    Diverged = 6,
    Panic = 7,
}

/// Opaque charge set.
pub struct EisrChargeSet(ChargeSet);

/// Opaque triangle mesh.
pub struct EisrMesh(TriangleMesh);

/// One charge in physical units.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct EisrCharge {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub q: f64,
    pub sigma: f64,
}

/// Optimization settings; start from `eisr_fit_options_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EisrFitOptions {
    pub num_charges: usize,
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub lambda_cr: f64,
    pub tau: f64,
    pub surface_pool: usize,
    pub batch: usize,
    pub interior_pool: usize,
    pub init_q: f64,
    pub init_sigma_std: f64,
    pub seed: u64,
    /// Non-zero: sequential reductions, bitwise reproducible.
    pub deterministic: i32,
}

/// Mesh comparison results. `iou` is NaN when it was skipped.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct EisrMetrics {
    pub chamfer: f64,
    pub hausdorff: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub normal_consistency: f64,
    pub iou: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(EisrStatus, String);

impl Failure {
    fn new(status: EisrStatus, msg: impl ToString) -> Self {
        Failure(status, msg.to_string())
    }
}

impl From<FieldError> for Failure {
    fn from(e: FieldError) -> Self {
        Failure::new(EisrStatus::InvalidArgument, e)
    }
}

impl From<MeshError> for Failure {
    fn from(e: MeshError) -> Self {
        let status = match e {
            MeshError::Io { .. } => EisrStatus::Io,
            MeshError::ParseLine { .. }
            | MeshError::ParseByte { .. }
            | MeshError::UnsupportedFormat(_)
            | MeshError::IndexOutOfRange { .. }
            | MeshError::DegenerateFace(_)
            | MeshError::NormalCount { .. } => EisrStatus::Parse,
            _ => EisrStatus::Precondition,
        };
        Failure::new(status, e)
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EisrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            EisrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            EisrStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(EisrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(EisrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::new(EisrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(EisrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(EisrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(EisrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn points(coords: &[f64]) -> impl Iterator<Item = Vec3> + '_ {
    coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2]))
}

fn exec(deterministic: i32) -> Execution {
    if deterministic != 0 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn eisr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eisr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn eisr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a charge set from `n` charges.
///
/// # Safety
/// `charges` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eisr_charge_set_new(
    charges: *const EisrCharge,
    n: usize,
    permittivity: f64,
    iso_value: f64,
    out: *mut *mut EisrChargeSet,
) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let list = slice(charges, n, "charges")?
            .iter()
            .map(|c| GaussianCharge::new(Vec3::new(c.x, c.y, c.z), c.q, c.sigma))
            .collect::<Result<Vec<_>, _>>()?;
        let set = ChargeSet::new(list, permittivity, iso_value)?;
        *out = Box::into_raw(Box::new(EisrChargeSet(set)));
        Ok(())
    })
}

/// Parses a charge set from JSON text.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eisr_charge_set_from_json(json: *const c_char, out: *mut *mut EisrChargeSet) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let text = c_str(json, "json")?;
        let set = ChargeSet::from_json(text).map_err(|e| Failure::new(EisrStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(EisrChargeSet(set)));
        Ok(())
    })
}

/// Serializes a charge set; release the result with `eisr_string_free`.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eisr_charge_set_to_json(set: *const EisrChargeSet, out: *mut *mut c_char) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = deref(set, "set")?;
        let c = CString::new(set.0.to_json()).map_err(|e| Failure::new(EisrStatus::Panic, e))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Number of charges; 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eisr_charge_set_len(set: *const EisrChargeSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Copies charge `index` in physical units.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eisr_charge_set_get(set: *const EisrChargeSet, index: usize, out: *mut EisrCharge) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = deref(set, "set")?;
        let c = set.0.charges().get(index).ok_or_else(|| {
            Failure::new(
                EisrStatus::InvalidArgument,
                format!("index {index} out of range for {} charges", set.0.len()),
            )
        })?;
        *out = EisrCharge {
            x: c.location.x,
            y: c.location.y,
            z: c.location.z,
            q: c.magnitude(),
            sigma: c.spread(),
        };
        Ok(())
    })
}

/// Iso-value of the set; NaN for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eisr_charge_set_iso_value(set: *const EisrChargeSet) -> f64 {
    set.as_ref().map_or(f64::NAN, |s| s.0.iso_value())
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eisr_charge_set_free(set: *mut EisrChargeSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Potential at `n` points (`xyz` holds `3n` doubles) into `out[n]`.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn eisr_eval_potential(
    set: *const EisrChargeSet,
    xyz: *const f64,
    n: usize,
    out: *mut f64,
) -> EisrStatus {
    guard(|| {
        let set = deref(set, "set")?;
        let coords = slice(xyz, 3 * n, "xyz")?;
        let out = slice_mut(out, n, "out")?;
        let field = set.0.prepare();
        for (o, p) in out.iter_mut().zip(points(coords)) {
            *o = field.value(p);
        }
        Ok(())
    })
}

/// Spatial gradient at `n` points into `out[3n]`.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn eisr_eval_gradient(
    set: *const EisrChargeSet,
    xyz: *const f64,
    n: usize,
    out: *mut f64,
) -> EisrStatus {
    guard(|| {
        let set = deref(set, "set")?;
        let coords = slice(xyz, 3 * n, "xyz")?;
        let out = slice_mut(out, 3 * n, "out")?;
        for (o, p) in out.chunks_exact_mut(3).zip(points(coords)) {
            let g = set.0.eval_field_gradient_x(p);
            o.copy_from_slice(&[g.x, g.y, g.z]);
        }
        Ok(())
    })
}

/// Builds a mesh from `3 * num_vertices` coordinates and `3 * num_faces`
/// zero-based indices.
///
/// # Safety
/// Buffers must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eisr_mesh_new(
    vertices: *const f64,
    num_vertices: usize,
    faces: *const u32,
    num_faces: usize,
    out: *mut *mut EisrMesh,
) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let v = points(slice(vertices, 3 * num_vertices, "vertices")?).collect();
        let f = slice(faces, 3 * num_faces, "faces")?
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let mesh = TriangleMesh::new(v, f)?;
        *out = Box::into_raw(Box::new(EisrMesh(mesh)));
        Ok(())
    })
}

/// Loads an OBJ or PLY file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eisr_mesh_load(path: *const c_char, out: *mut *mut EisrMesh) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(c_str(path, "path")?);
        let mesh = load_mesh(&path)?;
        *out = Box::into_raw(Box::new(EisrMesh(mesh)));
        Ok(())
    })
}

/// Writes a mesh as OBJ.
///
/// # Safety
/// `mesh` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn eisr_mesh_save_obj(mesh: *const EisrMesh, path: *const c_char) -> EisrStatus {
    guard(|| {
        let mesh = deref(mesh, "mesh")?;
        let path = PathBuf::from(c_str(path, "path")?);
        save_obj(&mesh.0, &path)?;
        Ok(())
    })
}

/// Vertex count; 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eisr_mesh_vertex_count(mesh: *const EisrMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.vertices().len())
}

/// Face count; 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eisr_mesh_face_count(mesh: *const EisrMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.faces().len())
}

/// Copies vertices into `out[3 * vertex_count]`.
///
/// # Safety
/// `out` must hold `3 * eisr_mesh_vertex_count(mesh)` doubles.
#[no_mangle]
pub unsafe extern "C" fn eisr_mesh_vertices(mesh: *const EisrMesh, out: *mut f64) -> EisrStatus {
    guard(|| {
        let mesh = deref(mesh, "mesh")?;
        let out = slice_mut(out, 3 * mesh.0.vertices().len(), "out")?;
        for (o, v) in out.chunks_exact_mut(3).zip(mesh.0.vertices()) {
            o.copy_from_slice(&[v.x, v.y, v.z]);
        }
        Ok(())
    })
}

/// Copies zero-based face indices into `out[3 * face_count]`.
///
/// # Safety
/// `out` must hold `3 * eisr_mesh_face_count(mesh)` integers.
#[no_mangle]
pub unsafe extern "C" fn eisr_mesh_faces(mesh: *const EisrMesh, out: *mut u32) -> EisrStatus {
    guard(|| {
        let mesh = deref(mesh, "mesh")?;
        let out = slice_mut(out, 3 * mesh.0.faces().len(), "out")?;
        for (o, f) in out.chunks_exact_mut(3).zip(mesh.0.faces()) {
            o.copy_from_slice(f);
        }
        Ok(())
    })
}

/// 1 if every edge is shared by exactly two faces, else 0.
///
/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eisr_mesh_is_watertight(mesh: *const EisrMesh) -> i32 {
    mesh.as_ref().map_or(0, |m| i32::from(m.0.is_watertight()))
}

/// # Safety
/// `mesh` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eisr_mesh_free(mesh: *mut EisrMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Marching cubes on a `resolution`^3 grid over `[-half_extent, half_extent]^3`.
/// `tau` NaN uses the set's iso-value. An iso-value outside the sampled
/// range yields an empty mesh, not an error.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eisr_extract(
    set: *const EisrChargeSet,
    tau: f64,
    half_extent: f64,
    resolution: usize,
    out: *mut *mut EisrMesh,
) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = deref(set, "set")?;
        let tau = if tau.is_nan() { set.0.iso_value() } else { tau };
        let invalid = |e: eisr::isosurface::GridError| Failure::new(EisrStatus::InvalidArgument, e);
        let spec = GridSpec::centered_cube(half_extent, resolution).map_err(invalid)?;
        let grid = evaluate_grid(&set.0, &spec, Execution::Parallel).map_err(invalid)?;
        let mesh = marching_cubes_with(&grid, tau, Execution::Parallel);
        *out = Box::into_raw(Box::new(EisrMesh(mesh)));
        Ok(())
    })
}

/// Fills `out` with the library defaults.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eisr_fit_options_default(out: *mut EisrFitOptions) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let c = FitConfig::default();
        *out = EisrFitOptions {
            num_charges: c.num_charges,
            steps: c.steps,
            lr_start: c.lr_start,
            lr_end: c.lr_end,
            lambda_cr: c.lambda_cr,
            tau: c.tau,
            surface_pool: c.surface_pool,
            batch: c.batch,
            interior_pool: c.interior_pool,
            init_q: c.init_q,
            init_sigma_std: c.init_sigma_std,
            seed: c.seed,
            deterministic: 0,
        };
        Ok(())
    })
}

/// Fits charges to a watertight mesh, taken as given (no normalization).
/// `final_bc` may be null; otherwise it receives the final boundary loss.
///
/// # Safety
/// Pointers must be live handles or writable as documented.
#[no_mangle]
pub unsafe extern "C" fn eisr_fit(
    target: *const EisrMesh,
    options: *const EisrFitOptions,
    out: *mut *mut EisrChargeSet,
    final_bc: *mut f64,
) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let target = deref(target, "target")?;
        let o = deref(options, "options")?;
        let config = FitConfig {
            num_charges: o.num_charges,
            steps: o.steps,
            lr_start: o.lr_start,
            lr_end: o.lr_end,
            lambda_cr: o.lambda_cr,
            tau: o.tau,
            surface_pool: o.surface_pool,
            batch: o.batch,
            interior_pool: o.interior_pool,
            init_q: o.init_q,
            init_sigma_std: o.init_sigma_std,
            seed: o.seed,
            checkpoint_every: 0,
            ..FitConfig::default()
        };
        let outcome = fit(&target.0, &config, exec(o.deterministic), &mut |_| {}).map_err(|e| match e {
            FitError::InvalidConfig(_) => Failure::new(EisrStatus::InvalidArgument, e),
            FitError::Mesh(m) => Failure::from(m),
            FitError::Field(f) => Failure::from(f),
            FitError::Diverged(_) => Failure::new(EisrStatus::Diverged, e),
        })?;
        if let Some(bc) = final_bc.as_mut() {
            *bc = outcome.report.final_losses.bc;
        }
        *out = Box::into_raw(Box::new(EisrChargeSet(outcome.charges)));
        Ok(())
    })
}

/// Compares two meshes. `iou_resolution` 0 skips IoU (reported as NaN).
///
/// # Safety
/// Meshes must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eisr_metrics(
    pred: *const EisrMesh,
    gt: *const EisrMesh,
    points: usize,
    iou_resolution: usize,
    seed: u64,
    out: *mut EisrMetrics,
) -> EisrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let pred = deref(pred, "pred")?;
        let gt = deref(gt, "gt")?;
        let config = MetricConfig {
            points,
            iou_resolution: (iou_resolution > 0).then_some(iou_resolution),
            seed,
            ..MetricConfig::default()
        };
        let r = evaluate_pair(&pred.0, &gt.0, &config).map_err(|e| match e {
            MetricError::Mesh { source, .. } => Failure::from(source),
            other => Failure::new(EisrStatus::InvalidArgument, other),
        })?;
        *out = EisrMetrics {
            chamfer: r.chamfer,
            hausdorff: r.hausdorff,
            f1: r.f1,
            precision: r.precision,
            recall: r.recall,
            normal_consistency: r.normal_consistency,
            iou: r.iou.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

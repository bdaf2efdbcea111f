//! Fitting a [`ChargeSet`] to a target shape.
//!
//! The loss is `L_bc + lambda * L_cr`: the mean squared deviation of the
//! field from the iso-value on surface samples, plus the mean squared
//! distance of each charge to the nearest interior sample. Parameters are
//! updated with Adam under a cosine-annealed learning rate.

mod adam;
mod losses;

use std::f64::consts::PI;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use losses::{loss_bc, loss_bc_value, loss_cr, total_loss, LossBreakdown, LOSS_CHUNK};

use crate::exec::Execution;
use crate::field::{ChargeSet, FieldError, FieldGradient, GaussianCharge};
use crate::mesh::{sample_interior_with, sample_surface, InsideTester, MeshError, SpatialIndex, TriangleMesh};
use crate::summary::{median, Quantiles};
use crate::vec3::Vec3;

/// Smallest spread produced by [`init_charges`].
pub const MIN_INIT_SPREAD: f64 = 1e-3;

const PARAMS_PER_CHARGE: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
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
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Steps between history entries / progress events.
    pub record_every: usize,
    /// Steps between checkpoint events; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            num_charges: 1000,
            steps: 60_000,
            lr_start: 1e-3,
            lr_end: 1e-7,
            lambda_cr: 2e-2,
            tau: 1.0,
            surface_pool: 250_000,
            batch: 16_000,
            interior_pool: 10_000,
            init_q: 1e-7,
            init_sigma_std: 0.05,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            record_every: 100,
            checkpoint_every: 10_000,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |msg: &str| Err(FitError::InvalidConfig(msg.to_string()));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.num_charges == 0 {
            return bad("num_charges must be >= 1");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.batch == 0 || self.batch > self.surface_pool {
            return bad("batch must satisfy 1 <= batch <= surface_pool");
        }
        if self.interior_pool == 0 {
            return bad("interior_pool must be >= 1");
        }
        if !(self.lambda_cr >= 0.0 && self.lambda_cr.is_finite()) {
            return bad("lambda_cr must be finite and >= 0");
        }
        if !(pos(self.lr_end) && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad("learning rates must satisfy lr_start >= lr_end > 0");
        }
        if !pos(self.tau) {
            return bad("tau must be finite and > 0");
        }
        if !pos(self.init_q) || !pos(self.init_sigma_std) {
            return bad("init_q and init_sigma_std must be finite and > 0");
        }
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) || !pos(self.adam_eps) {
            return bad("Adam betas must lie in [0, 1) and eps must be > 0");
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(
        "loss became non-finite at step {} (total {}, bc {}, cr {})",
        .0.step, .0.losses.total, .0.losses.bc, .0.losses.cr
    )]
    Diverged(Box<DivergenceSnapshot>),
}

/// State right before the step whose loss or update went non-finite.
#[derive(Clone, Debug)]
pub struct DivergenceSnapshot {
    pub step: usize,
    pub learning_rate: f64,
    pub losses: LossBreakdown,
    pub charges: ChargeSet,
}

/// Learning rate at `step`, annealed from `lr_start` to `lr_end` along half a
/// cosine period.
pub fn cosine_lr(step: usize, config: &FitConfig) -> f64 {
    if config.steps <= 1 {
        return config.lr_start;
    }
    let t = step.min(config.steps - 1) as f64 / (config.steps - 1) as f64;
    config.lr_end + 0.5 * (config.lr_start - config.lr_end) * (1.0 + (PI * t).cos())
}

/// Independent sub-seed for one consumer of randomness.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_SURFACE: u64 = 2;
const STREAM_INTERIOR: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

/// Random initial charges: locations uniform in `[-0.5, 0.5]^3`, magnitude
/// `init_q`, spread `|N(0, init_sigma_std)|` floored at [`MIN_INIT_SPREAD`].
pub fn init_charges(config: &FitConfig) -> Result<ChargeSet, FitError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_INIT));
    let normal = Normal::new(0.0, config.init_sigma_std)
        .map_err(|e| FitError::InvalidConfig(e.to_string()))?;
    let log_q = config.init_q.ln();
    let charges = (0..config.num_charges)
        .map(|_| {
            let s = Vec3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let sigma = normal.sample(&mut rng).abs().max(MIN_INIT_SPREAD);
            GaussianCharge::from_raw(s, log_q, sigma.ln())
        })
        .collect();
    Ok(ChargeSet::new(charges, crate::field::DEFAULT_PERMITTIVITY, config.tau)?)
}

/// One recorded point of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub bc: f64,
    pub cr: f64,
}

/// Distribution of charge parameters at one point of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub magnitude: Quantiles,
    pub spread: Quantiles,
    /// Distance of each charge to its nearest interior sample.
    pub interior_distance: Quantiles,
    /// Charges outside the target shape.
    pub outside_count: usize,
}

impl ParamStats {
    pub fn compute(set: &ChargeSet, interior: &SpatialIndex, inside: &InsideTester) -> Self {
        let q: Vec<f64> = set.charges().iter().map(GaussianCharge::magnitude).collect();
        let sigma: Vec<f64> = set.charges().iter().map(GaussianCharge::spread).collect();
        let locations: Vec<Vec3> = set.charges().iter().map(|c| c.location).collect();
        let dist: Vec<f64> = interior.nearest_many(&locations).into_iter().map(|(d, _)| d).collect();
        let outside_count = locations.iter().filter(|&&p| !inside.contains(p)).count();
        // A ChargeSet is never empty, so the unwraps cannot fail.
        ParamStats {
            magnitude: Quantiles::of(&q).unwrap(),
            spread: Quantiles::of(&sigma).unwrap(),
            interior_distance: Quantiles::of(&dist).unwrap(),
            outside_count,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub seed: u64,
    pub config: FitConfig,
    pub steps_run: usize,
    pub history: Vec<HistoryEntry>,
    /// Median total loss over the first / last 5% of steps.
    pub early_median_loss: f64,
    pub late_median_loss: f64,
    /// Losses of the final charges, with `bc` taken over the whole surface pool.
    pub final_losses: LossBreakdown,
    pub initial_stats: ParamStats,
    pub final_stats: ParamStats,
    pub wall_clock_seconds: f64,
    /// Total loss of every step.
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

/// Notifications emitted while fitting.
#[derive(Debug)]
pub enum FitEvent<'a> {
    Progress(&'a HistoryEntry),
    Checkpoint { step: usize, charges: &'a ChargeSet },
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub charges: ChargeSet,
    pub report: FitReport,
}

/// Sample pools shared by every step of a fit.
pub struct FitData {
    pub surface: Vec<Vec3>,
    pub interior: SpatialIndex,
    pub inside: InsideTester,
}

impl FitData {
    pub fn sample(target: &TriangleMesh, config: &FitConfig) -> Result<Self, FitError> {
        let inside = InsideTester::new(target)?;
        let surface = sample_surface(target, config.surface_pool, derive_seed(config.seed, STREAM_SURFACE))?
            .into_iter()
            .map(|s| s.position)
            .collect();
        let (interior, _) = sample_interior_with(&inside, config.interior_pool, derive_seed(config.seed, STREAM_INTERIOR))?;
        let interior = SpatialIndex::new(interior.into_iter().map(|s| s.position).collect());
        Ok(FitData {
            surface,
            interior,
            inside,
        })
    }
}

/// Fits randomly initialized charges to a watertight, normalized target.
pub fn fit(
    target: &TriangleMesh,
    config: &FitConfig,
    exec: Execution,
    sink: &mut dyn FnMut(FitEvent<'_>),
) -> Result<FitOutcome, FitError> {
    let initial = init_charges(config)?;
    fit_from(target, initial, config, exec, sink)
}

/// Like [`fit`] but starting from the given charges. The iso-value is reset
/// to `config.tau`.
pub fn fit_from(
    target: &TriangleMesh,
    initial: ChargeSet,
    config: &FitConfig,
    exec: Execution,
    sink: &mut dyn FnMut(FitEvent<'_>),
) -> Result<FitOutcome, FitError> {
    config.validate()?;
    let data = FitData::sample(target, config)?;
    fit_with_data(&data, initial, config, exec, sink)
}

/// Runs the optimization on pre-sampled pools.
pub fn fit_with_data(
    data: &FitData,
    mut set: ChargeSet,
    config: &FitConfig,
    exec: Execution,
    sink: &mut dyn FnMut(FitEvent<'_>),
) -> Result<FitOutcome, FitError> {
    config.validate()?;
    if config.batch > data.surface.len() {
        return Err(FitError::InvalidConfig("batch exceeds the surface pool".into()));
    }
    let started = Instant::now();
    set.set_iso_value(config.tau)?;
    let initial_stats = ParamStats::compute(&set, &data.interior, &data.inside);

    let mut params = pack(&set);
    let mut flat_grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len(), config.adam_beta1, config.adam_beta2, config.adam_eps);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SHUFFLE));
    let mut order: Vec<u32> = (0..data.surface.len() as u32).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0usize;
    let mut batch = Vec::with_capacity(config.batch);

    let mut history = Vec::new();
    let mut trace = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        if cursor + config.batch > order.len() {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        batch.clear();
        batch.extend(order[cursor..cursor + config.batch].iter().map(|&i| data.surface[i as usize]));
        cursor += config.batch;

        let lr = cosine_lr(step, config);
        let (losses, grad) = total_loss(&set, &batch, &data.interior, config.lambda_cr, exec);
        if !losses.is_finite() || !grad.is_finite() {
            return Err(diverged(step, lr, losses, set));
        }
        trace.push(losses.total);
        if step % config.record_every == 0 || step + 1 == config.steps {
            let entry = HistoryEntry {
                step,
                learning_rate: lr,
                total: losses.total,
                bc: losses.bc,
                cr: losses.cr,
            };
            sink(FitEvent::Progress(&entry));
            history.push(entry);
        }

        flatten(&grad, &mut flat_grad);
        adam.update(&mut params, &flat_grad, lr);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(diverged(step, lr, losses, set));
        }
        unpack(&params, &mut set);

        let done = step + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.steps {
            sink(FitEvent::Checkpoint {
                step: done,
                charges: &set,
            });
        }
    }

    let bc = loss_bc_value(&set, &data.surface, exec);
    let (cr, _) = loss_cr(&set, &data.interior);
    let final_losses = LossBreakdown {
        total: bc + config.lambda_cr * cr,
        bc,
        cr,
    };
    if !final_losses.is_finite() {
        return Err(diverged(config.steps, cosine_lr(config.steps - 1, config), final_losses, set));
    }
    let window = (config.steps / 20).max(1);
    let report = FitReport {
        seed: config.seed,
        config: config.clone(),
        steps_run: config.steps,
        history,
        early_median_loss: median(&trace[..window]).unwrap_or(f64::NAN),
        late_median_loss: median(&trace[trace.len() - window..]).unwrap_or(f64::NAN),
        final_losses,
        initial_stats,
        final_stats: ParamStats::compute(&set, &data.interior, &data.inside),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        loss_trace: trace,
    };
    Ok(FitOutcome { charges: set, report })
}

fn diverged(step: usize, learning_rate: f64, losses: LossBreakdown, charges: ChargeSet) -> FitError {
    FitError::Diverged(Box::new(DivergenceSnapshot {
        step,
        learning_rate,
        losses,
        charges,
    }))
}

fn pack(set: &ChargeSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(set.len() * PARAMS_PER_CHARGE);
    for c in set.charges() {
        out.extend_from_slice(&[c.location.x, c.location.y, c.location.z, c.magnitude_raw, c.spread_raw]);
    }
    out
}

fn unpack(params: &[f64], set: &mut ChargeSet) {
    for (c, p) in set.charges_mut().iter_mut().zip(params.chunks_exact(PARAMS_PER_CHARGE)) {
        c.location = Vec3::new(p[0], p[1], p[2]);
        c.magnitude_raw = p[3];
        c.spread_raw = p[4];
    }
}

fn flatten(grad: &FieldGradient, out: &mut [f64]) {
    for (i, p) in out.chunks_exact_mut(PARAMS_PER_CHARGE).enumerate() {
        let d = grad.d_location[i];
        p.copy_from_slice(&[d.x, d.y, d.z, grad.d_magnitude_raw[i], grad.d_spread_raw[i]]);
    }
}

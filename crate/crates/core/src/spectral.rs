//! Fourier magnitude of a Gaussian charge's potential and post-fit charge
//! statistics.
//!
//! [`analytic_spectrum`] evaluates the closed form
//!
//! ```text
//! A(nu) = Q / (sigma^2 pi nu^2) * exp(-2 sigma^2 pi^2 nu^2)
//! ```
//!
//! For the transform `F(nu) = \int phi(x) exp(-2 pi i nu.x) dx` the potential
//! of a unit-permittivity charge has `|F(nu)| = Q exp(-2 pi^2 sigma^2 nu^2) /
//! (4 pi^2 nu^2)`, i.e. `A(nu)` times the constant [`convention_factor`]
//! `sigma^2 / (4 pi)`. The Gaussian decay — the part that says small charges
//! carry the high frequencies — is identical.
//!
//! [`numeric_spectrum`] checks the closed form against a 3D DFT of the sampled
//! field. The `1/r` tail of the potential does not fit in any finite box, so
//! the DFT is taken of the difference between the field and a wide Gaussian
//! reference charge of the same `Q` (which decays like `erfc`), and the
//! reference's exact transform is added back.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{ChargeSet, GaussianCharge};
use crate::mesh::SpatialIndex;
use crate::summary::Quantiles;
use crate::vec3::Vec3;

/// Minimum number of grid steps per `2 sigma` accepted by [`numeric_spectrum`].
pub const MIN_SAMPLES_PER_TWO_SIGMA: f64 = 4.0;
/// Bins whose analytic magnitude falls below this fraction of the first
/// bin's are beyond double-precision reach and excluded from the band checks.
pub const RESOLVABLE_DYNAMIC_RANGE: f64 = 1e-8;
const MIN_BIN_SAMPLES: usize = 4;
pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("frequency must be finite and > 0, got {0}")]
    InvalidFrequency(f64),
    #[error("charge magnitude and spread must be finite and > 0")]
    InvalidParameters,
    #[error("spectrum check needs a single charge, got {0}")]
    NotSingleCharge(usize),
    #[error("resolution must be a power of two >= 8, got {0}")]
    Resolution(usize),
    #[error("extent must be finite and > 0, got {0}")]
    Extent(f64),
    #[error("sigma = {sigma} is too small for grid step {step}: {per_two_sigma:.2} samples per 2 sigma, need >= 4")]
    TooCoarse { sigma: f64, step: f64, per_two_sigma: f64 },
}

/// Closed-form magnitude `Q / (sigma^2 pi nu^2) exp(-2 sigma^2 pi^2 nu^2)`.
pub fn analytic_spectrum(q: f64, sigma: f64, freqs: &[f64]) -> Result<Vec<f64>, SpectralError> {
    if !(q > 0.0 && q.is_finite() && sigma > 0.0 && sigma.is_finite()) {
        return Err(SpectralError::InvalidParameters);
    }
    freqs
        .iter()
        .map(|&nu| {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(SpectralError::InvalidFrequency(nu));
            }
            Ok(analytic_at(q, sigma, nu))
        })
        .collect()
}

#[inline]
fn analytic_at(q: f64, sigma: f64, nu: f64) -> f64 {
    let s2 = sigma * sigma;
    q / (s2 * PI * nu * nu) * (-2.0 * s2 * PI * PI * nu * nu).exp()
}

/// `|F(nu)| / A(nu)` for a charge of spread `sigma` in a medium of
/// permittivity `eps0`.
pub fn convention_factor(sigma: f64, eps0: f64) -> f64 {
    sigma * sigma / (4.0 * PI * eps0)
}

/// Exact transform magnitude of a Gaussian charge's potential.
fn potential_transform(q: f64, sigma: f64, eps0: f64, nu: f64) -> f64 {
    q * (-2.0 * PI * PI * sigma * sigma * nu * nu).exp() / (4.0 * PI * PI * nu * nu * eps0)
}

/// Radially binned numeric and analytic magnitudes of one charge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub q: f64,
    pub sigma: f64,
    pub permittivity: f64,
    pub resolution: usize,
    pub extent: f64,
    /// Spread of the subtracted reference charge.
    pub reference_sigma: f64,
    /// `numeric / analytic` expected for an exact transform.
    pub convention_factor: f64,
    /// Mean radial frequency of each bin, strictly increasing.
    pub frequencies: Vec<f64>,
    pub counts: Vec<usize>,
    /// Closed form averaged over the bin's DFT frequencies.
    pub analytic_magnitudes: Vec<f64>,
    /// Mean DFT magnitude, scaled to the continuous transform.
    pub numeric_magnitudes: Vec<f64>,
}

impl SpectralProfile {
    /// `numeric / (convention_factor * analytic)` per bin; 1 means agreement.
    pub fn ratios(&self) -> Vec<f64> {
        self.numeric_magnitudes
            .iter()
            .zip(&self.analytic_magnitudes)
            .map(|(n, a)| n / (self.convention_factor * a))
            .collect()
    }

    /// Number of leading bins within double-precision reach.
    pub fn resolvable_bins(&self) -> usize {
        let Some(&first) = self.analytic_magnitudes.first() else {
            return 0;
        };
        self.analytic_magnitudes
            .iter()
            .take_while(|&&a| a >= RESOLVABLE_DYNAMIC_RANGE * first)
            .count()
    }

    /// Middle band of the resolvable bins: without the lowest two and the
    /// highest quarter.
    pub fn mid_band(&self) -> std::ops::Range<usize> {
        let n = self.resolvable_bins();
        let hi = n - n / 4;
        2.min(hi)..hi
    }

    /// Smallest and largest ratio in the mid band.
    pub fn mid_band_ratio_range(&self) -> Option<(f64, f64)> {
        let r = self.ratios();
        let band = &r[self.mid_band()];
        if band.is_empty() {
            return None;
        }
        Some(band.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }

    /// Fraction of the numeric spectral energy at frequencies >= `nu_min`.
    pub fn band_energy_share(&self, nu_min: f64) -> f64 {
        let mut total = 0.0;
        let mut high = 0.0;
        for ((&nu, &m), &c) in self.frequencies.iter().zip(&self.numeric_magnitudes).zip(&self.counts) {
            let e = m * m * c as f64;
            total += e;
            if nu >= nu_min {
                high += e;
            }
        }
        if total > 0.0 {
            high / total
        } else {
            0.0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spectral profile is serializable")
    }
}

/// Samples the single charge of `set` on a `resolution^3` grid `extent` wide
/// centered on the charge and compares the radially binned DFT magnitude with
/// [`analytic_spectrum`].
pub fn numeric_spectrum(set: &ChargeSet, resolution: usize, extent: f64) -> Result<SpectralProfile, SpectralError> {
    if set.len() != 1 {
        return Err(SpectralError::NotSingleCharge(set.len()));
    }
    if resolution < 8 || !resolution.is_power_of_two() {
        return Err(SpectralError::Resolution(resolution));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(SpectralError::Extent(extent));
    }
    let charge = set.charges()[0];
    let (q, sigma, eps0) = (charge.magnitude(), charge.spread(), set.permittivity());
    let n = resolution;
    let step = extent / n as f64;
    let per_two_sigma = 2.0 * sigma / step;
    if per_two_sigma < MIN_SAMPLES_PER_TWO_SIGMA {
        return Err(SpectralError::TooCoarse { sigma, step, per_two_sigma });
    }

    let reference_sigma = (extent / 10.0).max(2.0 * sigma);
    let centered = GaussianCharge::from_raw(Vec3::ZERO, charge.magnitude_raw, charge.spread_raw).prepare(eps0);
    let reference = GaussianCharge::from_raw(Vec3::ZERO, charge.magnitude_raw, reference_sigma.ln()).prepare(eps0);

    // Node n sits at (n - N/2) * step from the charge.
    let coord = |i: usize| (i as f64 - (n / 2) as f64) * step;
    let mut data: Vec<Complex<f64>> = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let x = Vec3::new(coord(i), coord(j), coord(k));
                data.push(Complex::new(centered.value(x) - reference.value(x), 0.0));
            }
        }
    }
    fft3(&mut data, n);

    // Signed integer frequency of DFT index i.
    let signed = |i: usize| if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
    let cell = step * step * step;
    let max_bin = n / 2;
    let mut sum_nu = vec![0.0; max_bin + 1];
    let mut sum_num = vec![0.0; max_bin + 1];
    let mut sum_ana = vec![0.0; max_bin + 1];
    let mut counts = vec![0usize; max_bin + 1];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let kv = [signed(i), signed(j), signed(k)];
                let kk = (kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2]).sqrt();
                let bin = kk.round() as usize;
                if bin == 0 || bin > max_bin {
                    continue;
                }
                let nu = kk / extent;
                // Undo the half-grid shift of the origin: exp(i pi (kx + ky + kz)).
                let parity = ((i + j + k) % 2) as f64;
                let sign = 1.0 - 2.0 * parity;
                let residual = data[i + n * (j + n * k)] * (sign * cell);
                let total = residual + Complex::new(potential_transform(q, reference_sigma, eps0, nu), 0.0);
                sum_nu[bin] += nu;
                sum_num[bin] += total.norm();
                sum_ana[bin] += analytic_at(q, sigma, nu);
                counts[bin] += 1;
            }
        }
    }

    // Merge sparse bins upward; a sparse tail joins the last full bin.
    let mut profile = SpectralProfile {
        q,
        sigma,
        permittivity: eps0,
        resolution,
        extent,
        reference_sigma,
        convention_factor: convention_factor(sigma, eps0),
        frequencies: Vec::new(),
        counts: Vec::new(),
        analytic_magnitudes: Vec::new(),
        numeric_magnitudes: Vec::new(),
    };
    let mut acc = (0.0, 0.0, 0.0, 0usize);
    let mut merged: Vec<(f64, f64, f64, usize)> = Vec::new();
    for b in 1..=max_bin {
        acc = (acc.0 + sum_nu[b], acc.1 + sum_num[b], acc.2 + sum_ana[b], acc.3 + counts[b]);
        if acc.3 >= MIN_BIN_SAMPLES {
            merged.push(acc);
            acc = (0.0, 0.0, 0.0, 0);
        }
    }
    if acc.3 > 0 {
        match merged.last_mut() {
            Some(last) => *last = (last.0 + acc.0, last.1 + acc.1, last.2 + acc.2, last.3 + acc.3),
            None => merged.push(acc),
        }
    }
    for (snu, snum, sana, c) in merged {
        let c_f = c as f64;
        profile.frequencies.push(snu / c_f);
        profile.numeric_magnitudes.push(snum / c_f);
        profile.analytic_magnitudes.push(sana / c_f);
        profile.counts.push(c);
    }
    Ok(profile)
}

/// In-place forward 3D DFT of an `n^3` array, x varying fastest.
fn fft3(data: &mut [Complex<f64>], n: usize) {
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(n) {
        fft.process_with_scratch(row, &mut scratch);
    }
    let mut line = vec![Complex::new(0.0, 0.0); n];
    // Lines along y start at i + k n^2, lines along z at i + j n.
    for (stride, outer_step) in [(n, n * n), (n * n, n)] {
        for a in 0..n {
            for i in 0..n {
                let base = i + a * outer_step;
                for (t, v) in line.iter_mut().enumerate() {
                    *v = data[base + t * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (t, v) in line.iter().enumerate() {
                    data[base + t * stride] = *v;
                }
            }
        }
    }
}

/// Log-spaced histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` increasing bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` log-spaced bins spanning the (positive) sample range.
    pub fn log_spaced(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let (mut lo, mut hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(lo > 0.0 && hi.is_finite()) {
            lo = 1.0;
            hi = 1.0;
        }
        if hi <= lo {
            lo /= 1.01;
            hi *= 1.01;
        }
        let (llo, lhi) = (lo.ln(), hi.ln());
        let width = (lhi - llo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|b| (llo + b as f64 * width).exp()).collect();
        edges[0] = lo;
        edges[bins] = hi;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = if v > 0.0 { ((v.ln() - llo) / width).floor() } else { 0.0 };
            counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeRecord {
    pub location: Vec3,
    pub q: f64,
    pub sigma: f64,
    /// Distance to the nearest surface sample.
    pub surface_distance: f64,
}

/// Distribution of fitted charges relative to the target surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeStats {
    pub count: usize,
    pub charges: Vec<ChargeRecord>,
    pub q_histogram: Histogram,
    pub sigma_histogram: Histogram,
    pub q_quantiles: Quantiles,
    pub sigma_quantiles: Quantiles,
    pub distance_quantiles: Quantiles,
}

impl ChargeStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("charge stats are serializable")
    }

    /// One row per charge after a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,x,y,z,q,sigma,surface_distance\n");
        for (i, c) in self.charges.iter().enumerate() {
            let p = c.location;
            let _ = writeln!(
                out,
                "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                p.x, p.y, p.z, c.q, c.sigma, c.surface_distance
            );
        }
        out
    }
}

/// Per-charge surface distances plus histograms and quantiles of `Q` and
/// `sigma`. `surface` must be non-empty.
pub fn charge_stats(set: &ChargeSet, surface: &SpatialIndex) -> ChargeStats {
    assert!(!surface.is_empty(), "surface index must not be empty");
    let locations: Vec<Vec3> = set.charges().iter().map(|c| c.location).collect();
    let nearest = surface.nearest_many(&locations);
    let charges: Vec<ChargeRecord> = set
        .charges()
        .iter()
        .zip(nearest)
        .map(|(c, (d, _))| ChargeRecord {
            location: c.location,
            q: c.magnitude(),
            sigma: c.spread(),
            surface_distance: d,
        })
        .collect();
    let q: Vec<f64> = charges.iter().map(|c| c.q).collect();
    let sigma: Vec<f64> = charges.iter().map(|c| c.sigma).collect();
    let dist: Vec<f64> = charges.iter().map(|c| c.surface_distance).collect();
    ChargeStats {
        count: charges.len(),
        q_histogram: Histogram::log_spaced(&q, HISTOGRAM_BINS),
        sigma_histogram: Histogram::log_spaced(&sigma, HISTOGRAM_BINS),
        q_quantiles: Quantiles::of(&q).unwrap(),
        sigma_quantiles: Quantiles::of(&sigma).unwrap(),
        distance_quantiles: Quantiles::of(&dist).unwrap(),
        charges,
    }
}

//! Closed-form electrostatic potential of isotropic Gaussian charges.
//!
//! A charge with location `s`, total charge `Q` and spread `sigma` has the
//! density
//!
//! ```text
//! rho(x) = Q / (sigma^3 (2 pi)^(3/2)) * exp(-|x - s|^2 / (2 sigma^2))
//! ```
//!
//! and solves `laplace(phi) = -rho / eps0` with
//!
//! ```text
//! phi(x) = Q / (4 pi eps0 r) * erf(r / (sqrt(2) sigma)),   r = |x - s|
//! ```
//!
//! The field of a [`ChargeSet`] is the plain sum of its charges' potentials.
//! `Q` and `sigma` are stored as logarithms so that any finite raw value is a
//! valid (strictly positive) charge.

use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};
use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use crate::vec3::Vec3;

/// Below `SWITCH_RADIUS_FACTOR * sigma` the potential is evaluated from its
/// Taylor series around the charge center.
pub const SWITCH_RADIUS_FACTOR: f64 = 1e-6;

/// Below this value of `r / (sqrt(2) sigma)` the radial derivative switches
/// to a series that avoids the cancellation in `erf(z) - 2 z exp(-z^2)/sqrt(pi)`.
const GRADIENT_SERIES_Z: f64 = 0.1;

/// Default medium permittivity.
pub const DEFAULT_PERMITTIVITY: f64 = 1.0;

/// Default iso-value of the reconstructed surface.
pub const DEFAULT_ISO_VALUE: f64 = 1.0;

const CHARGE_SET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("charge set must contain at least one charge")]
    Empty,
    #[error("permittivity must be finite and > 0, got {0}")]
    InvalidPermittivity(f64),
    #[error("iso-value must be finite and > 0, got {0}")]
    InvalidIsoValue(f64),
    #[error("charge {index} has a non-finite parameter")]
    NonFinite { index: usize },
    #[error("charge magnitude and spread must be finite and > 0 (got Q = {q}, sigma = {sigma})")]
    NonPositive { q: f64, sigma: f64 },
    #[error("unsupported charge set version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed charge set JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Gaussian error function, accurate to about one ulp.
#[inline]
pub fn erf(z: f64) -> f64 {
    libm::erf(z)
}

/// One isotropic Gaussian charge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianCharge {
    pub location: Vec3,
    /// `ln Q`.
    pub magnitude_raw: f64,
    /// `ln sigma`.
    pub spread_raw: f64,
}

/// Per-charge quantities shared by value and derivative evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct ChargeTerms {
    pub value: f64,
    /// `grad_x phi = radial_factor * (x - s)`.
    pub radial_factor: f64,
    /// `d phi / d ln sigma`.
    pub d_spread_raw: f64,
    pub offset: Vec3,
}

impl GaussianCharge {
    pub fn from_raw(location: Vec3, magnitude_raw: f64, spread_raw: f64) -> Self {
        GaussianCharge {
            location,
            magnitude_raw,
            spread_raw,
        }
    }

    pub fn new(location: Vec3, magnitude: f64, spread: f64) -> Result<Self, FieldError> {
        if !(magnitude > 0.0 && magnitude.is_finite() && spread > 0.0 && spread.is_finite()) {
            return Err(FieldError::NonPositive {
                q: magnitude,
                sigma: spread,
            });
        }
        Ok(GaussianCharge::from_raw(location, magnitude.ln(), spread.ln()))
    }

    #[inline]
    pub fn magnitude(&self) -> f64 {
        self.magnitude_raw.exp()
    }

    #[inline]
    pub fn spread(&self) -> f64 {
        self.spread_raw.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.location.is_finite() && self.magnitude_raw.is_finite() && self.spread_raw.is_finite()
    }

    #[inline]
    pub fn switch_radius(&self) -> f64 {
        SWITCH_RADIUS_FACTOR * self.spread()
    }

    /// Charge density at `x`.
    pub fn eval_density(&self, x: Vec3) -> f64 {
        let q = self.magnitude();
        let sigma = self.spread();
        let r2 = x.distance_squared(self.location);
        let norm = q / (sigma * sigma * sigma * (2.0 * PI).powf(1.5));
        norm * (-r2 / (2.0 * sigma * sigma)).exp()
    }

    /// Potential at `x` in a medium of permittivity `eps0`.
    pub fn eval_potential(&self, x: Vec3, eps0: f64) -> f64 {
        self.prepare(eps0).value(x)
    }

    /// Value and first derivatives of this charge's potential at `x`.
    pub fn terms(&self, x: Vec3, eps0: f64) -> ChargeTerms {
        self.prepare(eps0).terms(x)
    }

    /// Caches the exponentiated parameters for repeated evaluation.
    pub fn prepare(&self, eps0: f64) -> PreparedCharge {
        let q = self.magnitude();
        let sigma = self.spread();
        let k = q / (4.0 * PI * eps0);
        let a = 1.0 / (SQRT_2 * sigma);
        PreparedCharge {
            location: self.location,
            k,
            a,
            inv_sigma2: 1.0 / (sigma * sigma),
            center: k * FRAC_2_SQRT_PI * a,
            switch_radius: SWITCH_RADIUS_FACTOR * sigma,
        }
    }
}

/// A charge with `Q` and `sigma` already exponentiated.
#[derive(Clone, Copy, Debug)]
pub struct PreparedCharge {
    location: Vec3,
    /// `Q / (4 pi eps0)`.
    k: f64,
    /// `1 / (sqrt(2) sigma)`.
    a: f64,
    inv_sigma2: f64,
    /// Potential at the charge center.
    center: f64,
    switch_radius: f64,
}

impl PreparedCharge {
    #[inline]
    pub fn value(&self, x: Vec3) -> f64 {
        let r = x.distance(self.location);
        if r < self.switch_radius {
            return self.center * (1.0 - r * r * self.inv_sigma2 / 6.0);
        }
        self.k * erf(self.a * r) / r
    }

    #[inline]
    pub fn terms(&self, x: Vec3) -> ChargeTerms {
        let offset = x - self.location;
        let r = offset.norm();
        let (k, a) = (self.k, self.a);

        if r < self.switch_radius {
            let c = self.center;
            let u = r * r * self.inv_sigma2;
            return ChargeTerms {
                value: c * (1.0 - u / 6.0),
                radial_factor: -c * self.inv_sigma2 / 3.0,
                d_spread_raw: -c * (1.0 - u / 2.0),
                offset,
            };
        }

        let z = a * r;
        let gauss = (-z * z).exp();
        let erf_z = erf(z);
        let value = k * erf_z / r;
        let d_spread_raw = -k * FRAC_2_SQRT_PI * a * gauss;
        let radial_factor = if z < GRADIENT_SERIES_Z {
            -k * FRAC_2_SQRT_PI * a * a * a * small_z_series(z)
        } else {
            let d_dr = k * (-erf_z / (r * r) + FRAC_2_SQRT_PI * a * gauss / r);
            d_dr / r
        };
        ChargeTerms {
            value,
            radial_factor,
            d_spread_raw,
            offset,
        }
    }
}

/// `phi(r)` for a single charge, including the small-`r` series branch.
pub fn potential_radial(q: f64, sigma: f64, r: f64, eps0: f64) -> f64 {
    GaussianCharge::from_raw(Vec3::ZERO, q.ln(), sigma.ln())
        .prepare(eps0)
        .value(Vec3::new(r, 0.0, 0.0))
}

/// All charges of a set, prepared for repeated evaluation.
#[derive(Clone, Debug)]
pub struct PreparedField {
    charges: Vec<PreparedCharge>,
}

impl PreparedField {
    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    /// Field value, summed in charge order.
    #[inline]
    pub fn value(&self, x: Vec3) -> f64 {
        self.charges.iter().map(|c| c.value(x)).sum()
    }

    /// Fills `scratch` with per-charge terms at `x` and returns the field value.
    pub fn terms(&self, x: Vec3, scratch: &mut Vec<ChargeTerms>) -> f64 {
        scratch.clear();
        let mut total = 0.0;
        for c in &self.charges {
            let t = c.terms(x);
            total += t.value;
            scratch.push(t);
        }
        total
    }

    pub fn gradient_x(&self, x: Vec3) -> Vec3 {
        let mut g = Vec3::ZERO;
        for c in &self.charges {
            let t = c.terms(x);
            g += t.offset * t.radial_factor;
        }
        g
    }
}

/// `(erf(z) - 2 z exp(-z^2) / sqrt(pi)) / (2 z^3 / sqrt(pi))` for small `z`.
fn small_z_series(z: f64) -> f64 {
    // sum_{n>=1} (-1)^(n+1) 2n / (n! (2n+1)) z^(2n-2)
    let z2 = z * z;
    let mut sum = 0.0;
    let mut power = 1.0;
    let mut factorial = 1.0;
    for n in 1..=9u32 {
        let nf = n as f64;
        factorial *= nf;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * 2.0 * nf / (factorial * (2.0 * nf + 1.0)) * power;
        power *= z2;
    }
    sum
}

/// Derivatives of a field value with respect to every charge's raw parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGradient {
    pub d_location: Vec<Vec3>,
    pub d_magnitude_raw: Vec<f64>,
    pub d_spread_raw: Vec<f64>,
}

impl FieldGradient {
    pub fn zeros(len: usize) -> Self {
        FieldGradient {
            d_location: vec![Vec3::ZERO; len],
            d_magnitude_raw: vec![0.0; len],
            d_spread_raw: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.d_location.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_location.is_empty()
    }

    pub fn clear(&mut self) {
        self.d_location.fill(Vec3::ZERO);
        self.d_magnitude_raw.fill(0.0);
        self.d_spread_raw.fill(0.0);
    }

    /// `self += other * weight`, element by element in charge order.
    pub fn add_scaled(&mut self, other: &FieldGradient, weight: f64) {
        for (a, b) in self.d_location.iter_mut().zip(&other.d_location) {
            *a += *b * weight;
        }
        for (a, b) in self.d_magnitude_raw.iter_mut().zip(&other.d_magnitude_raw) {
            *a += b * weight;
        }
        for (a, b) in self.d_spread_raw.iter_mut().zip(&other.d_spread_raw) {
            *a += b * weight;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_location.iter().all(|v| v.is_finite())
            && self.d_magnitude_raw.iter().all(|v| v.is_finite())
            && self.d_spread_raw.iter().all(|v| v.is_finite())
    }
}

/// An ordered set of charges together with the medium permittivity and the
/// iso-value that defines the surface.
#[derive(Clone, Debug, PartialEq)]
pub struct ChargeSet {
    charges: Vec<GaussianCharge>,
    permittivity: f64,
    iso_value: f64,
}

impl ChargeSet {
    pub fn new(
        charges: Vec<GaussianCharge>,
        permittivity: f64,
        iso_value: f64,
    ) -> Result<Self, FieldError> {
        if charges.is_empty() {
            return Err(FieldError::Empty);
        }
        if !(permittivity > 0.0 && permittivity.is_finite()) {
            return Err(FieldError::InvalidPermittivity(permittivity));
        }
        if !(iso_value > 0.0 && iso_value.is_finite()) {
            return Err(FieldError::InvalidIsoValue(iso_value));
        }
        if let Some(index) = charges.iter().position(|c| !c.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        Ok(ChargeSet {
            charges,
            permittivity,
            iso_value,
        })
    }

    /// Set with unit permittivity and iso-value 1.
    pub fn with_defaults(charges: Vec<GaussianCharge>) -> Result<Self, FieldError> {
        ChargeSet::new(charges, DEFAULT_PERMITTIVITY, DEFAULT_ISO_VALUE)
    }

    pub fn charges(&self) -> &[GaussianCharge] {
        &self.charges
    }

    /// Mutable access for optimizers. Callers must keep parameters finite.
    pub fn charges_mut(&mut self) -> &mut [GaussianCharge] {
        &mut self.charges
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    pub fn permittivity(&self) -> f64 {
        self.permittivity
    }

    pub fn iso_value(&self) -> f64 {
        self.iso_value
    }

    pub fn set_iso_value(&mut self, tau: f64) -> Result<(), FieldError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(FieldError::InvalidIsoValue(tau));
        }
        self.iso_value = tau;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.charges.iter().all(GaussianCharge::is_finite)
    }

    /// Concatenation of two sets; permittivity and iso-value come from `self`.
    pub fn concat(&self, other: &ChargeSet) -> ChargeSet {
        let mut charges = self.charges.clone();
        charges.extend_from_slice(&other.charges);
        ChargeSet {
            charges,
            permittivity: self.permittivity,
            iso_value: self.iso_value,
        }
    }

    pub fn min_spread(&self) -> f64 {
        self.charges
            .iter()
            .map(GaussianCharge::spread)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn prepare(&self) -> PreparedField {
        PreparedField {
            charges: self.charges.iter().map(|c| c.prepare(self.permittivity)).collect(),
        }
    }

    /// Potential at `x`, summed in charge-list order.
    pub fn eval_field(&self, x: Vec3) -> f64 {
        let eps0 = self.permittivity;
        self.charges.iter().map(|c| c.eval_potential(x, eps0)).sum()
    }

    pub fn eval_density_total(&self, x: Vec3) -> f64 {
        self.charges.iter().map(|c| c.eval_density(x)).sum()
    }

    pub fn eval_field_gradient_x(&self, x: Vec3) -> Vec3 {
        let eps0 = self.permittivity;
        let mut g = Vec3::ZERO;
        for c in &self.charges {
            let t = c.terms(x, eps0);
            g += t.offset * t.radial_factor;
        }
        g
    }

    /// `upstream * d phi(x) / d(parameters)` for every charge.
    pub fn eval_param_gradients(&self, x: Vec3, upstream: f64) -> FieldGradient {
        let mut out = FieldGradient::zeros(self.len());
        self.accumulate_param_gradients(x, upstream, &mut out);
        out
    }

    /// Adds `upstream * d phi(x) / d(parameters)` into `out`.
    pub fn accumulate_param_gradients(&self, x: Vec3, upstream: f64, out: &mut FieldGradient) {
        let eps0 = self.permittivity;
        for (i, c) in self.charges.iter().enumerate() {
            let t = c.terms(x, eps0);
            accumulate_terms(out, i, &t, upstream);
        }
    }

    /// Serializes with fixed field order and 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut out = String::with_capacity(64 + self.len() * 128);
        out.push_str("{\"version\":1,\"permittivity\":");
        push_f64(&mut out, self.permittivity);
        out.push_str(",\"iso_value\":");
        push_f64(&mut out, self.iso_value);
        out.push_str(",\"charges\":[");
        for (i, c) in self.charges.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str("\n{\"s\":[");
            push_f64(&mut out, c.location.x);
            out.push(',');
            push_f64(&mut out, c.location.y);
            out.push(',');
            push_f64(&mut out, c.location.z);
            out.push_str("],\"log_q\":");
            push_f64(&mut out, c.magnitude_raw);
            out.push_str(",\"log_sigma\":");
            push_f64(&mut out, c.spread_raw);
            out.push('}');
        }
        out.push_str("\n]}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self, FieldError> {
        #[derive(Deserialize)]
        struct RawCharge {
            s: [f64; 3],
            log_q: f64,
            log_sigma: f64,
        }
        #[derive(Deserialize)]
        struct RawSet {
            version: u32,
            permittivity: f64,
            iso_value: f64,
            charges: Vec<RawCharge>,
        }
        let raw: RawSet = serde_json::from_str(text)?;
        if raw.version != CHARGE_SET_VERSION {
            return Err(FieldError::UnsupportedVersion(raw.version));
        }
        let charges = raw
            .charges
            .into_iter()
            .map(|c| GaussianCharge::from_raw(c.s.into(), c.log_q, c.log_sigma))
            .collect();
        ChargeSet::new(charges, raw.permittivity, raw.iso_value)
    }
}

#[inline]
pub fn accumulate_terms(out: &mut FieldGradient, i: usize, t: &ChargeTerms, upstream: f64) {
    // d phi / d s = -grad_x phi
    out.d_location[i] -= t.offset * (t.radial_factor * upstream);
    out.d_magnitude_raw[i] += t.value * upstream;
    out.d_spread_raw[i] += t.d_spread_raw * upstream;
}

fn push_f64(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

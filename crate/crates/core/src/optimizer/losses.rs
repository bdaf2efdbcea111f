use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::field::{accumulate_terms, ChargeSet, FieldGradient};
use crate::mesh::SpatialIndex;
use crate::vec3::Vec3;

/// Points per reduction chunk. Fixed so that sums do not depend on the
/// number of worker threads.
pub const LOSS_CHUNK: usize = 512;

/// Loss values of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub bc: f64,
    pub cr: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.bc.is_finite() && self.cr.is_finite()
    }
}

/// Mean squared deviation of the field from the set's iso-value over `batch`,
/// with its gradient.
pub fn loss_bc(set: &ChargeSet, batch: &[Vec3], exec: Execution) -> (f64, FieldGradient) {
    let k = set.len();
    if batch.is_empty() {
        return (0.0, FieldGradient::zeros(k));
    }
    let tau = set.iso_value();
    let field = set.prepare();
    let scale = 2.0 / batch.len() as f64;

    let partials = exec.map_chunks(batch, LOSS_CHUNK, |_, points| {
        let mut grad = FieldGradient::zeros(k);
        let mut scratch = Vec::with_capacity(k);
        let mut sum = 0.0;
        for &x in points {
            let phi = field.terms(x, &mut scratch);
            let residual = phi - tau;
            sum += residual * residual;
            let upstream = scale * residual;
            for (i, t) in scratch.iter().enumerate() {
                accumulate_terms(&mut grad, i, t, upstream);
            }
        }
        (sum, grad)
    });

    let mut total = 0.0;
    let mut grad = FieldGradient::zeros(k);
    for (sum, g) in &partials {
        total += sum;
        grad.add_scaled(g, 1.0);
    }
    (total / batch.len() as f64, grad)
}

/// Value of [`loss_bc`] without the gradient.
pub fn loss_bc_value(set: &ChargeSet, points: &[Vec3], exec: Execution) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let tau = set.iso_value();
    let field = set.prepare();
    let partials = exec.map_chunks(points, LOSS_CHUNK, |_, chunk| {
        chunk
            .iter()
            .map(|&x| {
                let r = field.value(x) - tau;
                r * r
            })
            .sum::<f64>()
    });
    partials.iter().sum::<f64>() / points.len() as f64
}

/// Mean squared distance from each charge to its nearest interior sample.
///
/// The nearest sample is held fixed when differentiating (lowest id on ties),
/// so only locations receive a gradient.
pub fn loss_cr(set: &ChargeSet, interior: &SpatialIndex) -> (f64, FieldGradient) {
    let k = set.len();
    let mut grad = FieldGradient::zeros(k);
    let mut total = 0.0;
    let inv_k = 1.0 / k as f64;
    for (i, c) in set.charges().iter().enumerate() {
        let Some((d2, id)) = interior.nearest_squared(c.location) else {
            continue;
        };
        total += d2;
        grad.d_location[i] = (c.location - interior.point(id)) * (2.0 * inv_k);
    }
    (total * inv_k, grad)
}

/// `L_bc + lambda * L_cr` and its gradient.
pub fn total_loss(
    set: &ChargeSet,
    batch: &[Vec3],
    interior: &SpatialIndex,
    lambda_cr: f64,
    exec: Execution,
) -> (LossBreakdown, FieldGradient) {
    let (bc, mut grad) = loss_bc(set, batch, exec);
    let (cr, cr_grad) = loss_cr(set, interior);
    if lambda_cr != 0.0 {
        grad.add_scaled(&cr_grad, lambda_cr);
    }
    let losses = LossBreakdown {
        total: bc + lambda_cr * cr,
        bc,
        cr,
    };
    (losses, grad)
}

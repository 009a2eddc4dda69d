//! Geometric patch augmentations. Every op moves whole spectra between
//! pixel positions; band values are never mixed.

use serde::{Deserialize, Serialize};

use crate::data::patch::{reflect_index, Patch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Rot45,
    Rot90,
    Rot135,
    FlipH,
    FlipV,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 5] = [
        AugmentOp::Rot45,
        AugmentOp::Rot90,
        AugmentOp::Rot135,
        AugmentOp::FlipH,
        AugmentOp::FlipV,
    ];

    /// Source pixel for output position `(i, j)` of a `p × p` patch.
    pub fn source(self, i: usize, j: usize, p: usize) -> (usize, usize) {
        let last = p - 1;
        match self {
            AugmentOp::Rot90 => (j, last - i),
            AugmentOp::FlipH => (i, last - j),
            AugmentOp::FlipV => (last - i, j),
            AugmentOp::Rot45 => rotate_nearest(i, j, p, 45.0),
            AugmentOp::Rot135 => rotate_nearest(i, j, p, 135.0),
        }
    }
}

/// Counter-clockwise rotation about the patch center with nearest-neighbor
/// sampling and mirror padding.
fn rotate_nearest(i: usize, j: usize, p: usize, degrees: f64) -> (usize, usize) {
    let c = (p / 2) as f64;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let x = j as f64 - c;
    let y = c - i as f64;
    let sx = x * cos + y * sin;
    let sy = -x * sin + y * cos;
    let si = (c - sy).round() as isize;
    let sj = (c + sx).round() as isize;
    (reflect_index(si, p), reflect_index(sj, p))
}

pub fn augment(patch: &Patch, op: AugmentOp) -> Patch {
    let p = patch.size;
    let mut values = Vec::with_capacity(patch.values.len());
    for i in 0..p {
        for j in 0..p {
            let (si, sj) = op.source(i, j, p);
            values.extend_from_slice(patch.spectrum(si, sj));
        }
    }
    Patch {
        values,
        ..patch.clone()
    }
}

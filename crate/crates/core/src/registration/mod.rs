//! Intra-subject registration: rigid, then affine, then a demons-style
//! deformable stage, all coarse-to-fine over a Gaussian pyramid.
//!
//! Every stage answers the same question: for each point of the *fixed*
//! grid, where should the *moving* image be sampled? Transforms map fixed
//! physical coordinates (mm, origin at voxel `(0, 0, 0)`) to moving physical
//! coordinates, and displacement fields store `moving_point - fixed_point`
//! in mm on the fixed grid.

mod deformable;
mod field;
mod linear;
mod transform;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{downsample2x, ScalarVolume};

pub use deformable::{register_deformable, register_deformable_with_trace};
pub use field::{warp_affine, warp_image, warp_label, DisplacementField};
pub use linear::{
    register_affine, register_affine_with_trace, register_rigid, register_rigid_with_trace,
};
pub use transform::AffineTransform;

/// Per-level objective values, coarse level first. Each inner list starts
/// with the level's starting objective and then one entry per accepted step.
pub type Trace = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Mse,
    Ncc,
}

impl Similarity {
    /// Best attainable value; relative improvements are measured against it.
    pub fn floor(self) -> f64 {
        match self {
            Similarity::Mse => 0.0,
            Similarity::Ncc => -1.0,
        }
    }
}

/// Improvement as a fraction of the remaining gap to the metric's floor.
pub(crate) fn relative_improvement(before: f64, after: f64, floor: f64) -> f64 {
    (before - after) / (before - floor).max(1e-12)
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Similarity::Mse),
            "ncc" => Ok(Similarity::Ncc),
            other => Err(Error::param("similarity", format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    pub pyramid_levels: usize,
    /// Iteration budget per level, coarsest first.
    pub iterations_per_level: Vec<usize>,
    pub similarity: Similarity,
    /// Trial step in (level) voxels at the start of every iteration; halved
    /// until the objective improves.
    pub step_size: f64,
    pub demons_sigma_vox: f64,
    pub convergence_tol: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            iterations_per_level: vec![50, 50, 30],
            similarity: Similarity::Ncc,
            step_size: 0.5,
            demons_sigma_vox: 1.5,
            convergence_tol: 1e-4,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 {
            return Err(Error::param("pyramid_levels", "must be at least 1"));
        }
        if self.iterations_per_level.len() != self.pyramid_levels {
            return Err(Error::param(
                "iterations_per_level",
                format!(
                    "{} entries for {} pyramid levels",
                    self.iterations_per_level.len(),
                    self.pyramid_levels
                ),
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::param("step_size", "must be positive"));
        }
        if !(self.demons_sigma_vox >= 0.0 && self.demons_sigma_vox.is_finite()) {
            return Err(Error::param("demons_sigma_vox", "must be >= 0"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::param("convergence_tol", "must be positive"));
        }
        Ok(())
    }
}

/// Sums `f(i)` over `0..n` in fixed-size chunks: chunk partials are computed
/// in parallel and then added in order, so the result does not depend on the
/// thread count.
pub(crate) fn ordered_sum<const K: usize>(n: usize, f: impl Fn(usize) -> [f64; K] + Sync) -> [f64; K] {
    const CHUNK: usize = 4096;
    let partials: Vec<[f64; K]> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = [0.0; K];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let v = f(i);
                for k in 0..K {
                    acc[k] += v[k];
                }
            }
            acc
        })
        .collect();
    partials.into_iter().fold([0.0; K], |mut acc, p| {
        for k in 0..K {
            acc[k] += p[k];
        }
        acc
    })
}

pub(crate) fn similarity_values(fixed: &[f32], warped: &[f32], kind: Similarity) -> f64 {
    let n = fixed.len();
    match kind {
        Similarity::Mse => {
            let [sse] = ordered_sum(n, |i| {
                let d = fixed[i] as f64 - warped[i] as f64;
                [d * d]
            });
            sse / n as f64
        }
        Similarity::Ncc => {
            let [sf, sw] = ordered_sum(n, |i| [fixed[i] as f64, warped[i] as f64]);
            let (mf, mw) = (sf / n as f64, sw / n as f64);
            let [cross, vf, vw] = ordered_sum(n, |i| {
                let a = fixed[i] as f64 - mf;
                let b = warped[i] as f64 - mw;
                [a * b, a * a, b * b]
            });
            if vf <= 0.0 || vw <= 0.0 {
                return 0.0;
            }
            -(cross / (vf * vw).sqrt()).clamp(-1.0, 1.0)
        }
    }
}

/// Dissimilarity between two images on the same grid; lower is better.
///
/// MSE is the mean squared difference. NCC is the negated normalized
/// cross-correlation in `[-1, 1]`, defined as 0 when either image is constant.
pub fn similarity(fixed: &ScalarVolume, warped: &ScalarVolume, kind: Similarity) -> Result<f64> {
    if fixed.dims() != warped.dims() {
        return Err(Error::DimensionMismatch(format!(
            "similarity over {:?} vs {:?}",
            fixed.dims(),
            warped.dims()
        )));
    }
    Ok(similarity_values(fixed.voxels(), warped.voxels(), kind))
}

pub(crate) fn check_inputs(fixed: &ScalarVolume, moving: &ScalarVolume, params: &RegistrationParams) -> Result<()> {
    params.validate()?;
    if fixed.spacing() != moving.spacing() {
        return Err(Error::DimensionMismatch(format!(
            "fixed spacing {:?} differs from moving spacing {:?}",
            fixed.spacing(),
            moving.spacing()
        )));
    }
    if fixed.is_constant() {
        return Err(Error::Degenerate("fixed image is constant".into()));
    }
    if moving.is_constant() {
        return Err(Error::Degenerate("moving image is constant".into()));
    }
    Ok(())
}

/// Gaussian pyramid, coarsest level first, finest (the input) last.
pub(crate) fn pyramid(vol: &ScalarVolume, levels: usize) -> Result<Vec<ScalarVolume>> {
    let mut out = vec![vol.clone()];
    for _ in 1..levels {
        let last = out.last().unwrap();
        let next = if last.dims().iter().any(|&d| d >= 2) {
            downsample2x(last)?
        } else {
            last.clone()
        };
        out.push(next);
    }
    out.reverse();
    Ok(out)
}

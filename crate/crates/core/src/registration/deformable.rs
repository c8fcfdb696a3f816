//! Demons-style deformable stage.
//!
//! The optimized quantity is a residual displacement on top of the affine
//! initialization. Each iteration computes the classic demons force
//!
//! ```text
//! du = -(m(x + u) - f(x)) * grad f / (|grad f|^2 + (m(x + u) - f(x))^2)
//! ```
//!
//! (in voxels; its magnitude is at most 1/2, so it is doubled and then scaled
//! by the current step), adds it to the residual and Gaussian-smooths the residual. Steps
//! that do not lower the objective are retried at half size. The returned
//! field is affine + residual.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::registration::field::DisplacementField;
use crate::registration::linear::objective;
use crate::registration::transform::AffineTransform;
use crate::registration::{
    check_inputs, pyramid, relative_improvement, similarity_values, warp_image, RegistrationParams, Trace,
};
use crate::volume::{gradient, smooth_f64, trilinear_sample, Geometry, GridPoint, ScalarVolume};

const MAX_HALVINGS: u32 = 10;

struct LevelState {
    geometry: Geometry,
    affine: DisplacementField,
    residual: [Vec<f64>; 3],
}

fn total(affine: &DisplacementField, residual: &[Vec<f64>; 3]) -> DisplacementField {
    let a = affine.vectors();
    let vectors = (0..a.len())
        .map(|i| [0, 1, 2].map(|k| a[i][k] + residual[k][i]))
        .collect();
    DisplacementField::new(*affine.geometry(), vectors).expect("finite field")
}

/// Resamples residual components onto a finer grid covering the same extent.
fn upsample(residual: &[Vec<f64>; 3], from: &Geometry, to: &Geometry) -> [Vec<f64>; 3] {
    let ratio = [0, 1, 2].map(|a| to.spacing[a] / from.spacing[a]);
    let comp = |k: usize| -> Vec<f64> {
        let src = ScalarVolume::with_geometry(*from, residual[k].iter().map(|&v| v as f32).collect())
            .expect("finite residual");
        (0..to.len())
            .into_par_iter()
            .map(|i| {
                let v = to.coords(i);
                let p = GridPoint::new(v[0] as f64 * ratio[0], v[1] as f64 * ratio[1], v[2] as f64 * ratio[2]);
                trilinear_sample(&src, p)
            })
            .collect()
    };
    [comp(0), comp(1), comp(2)]
}

pub fn register_deformable(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    init: &AffineTransform,
    params: &RegistrationParams,
) -> Result<DisplacementField> {
    register_deformable_with_trace(fixed, moving, init, params).map(|(f, _)| f)
}

pub fn register_deformable_with_trace(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    init: &AffineTransform,
    params: &RegistrationParams,
) -> Result<(DisplacementField, Trace)> {
    check_inputs(fixed, moving, params)?;
    AffineTransform::new(init.matrix, init.translation)
        .map_err(|e| Error::param("init", e.to_string()))?;
    let fixed_pyr = pyramid(fixed, params.pyramid_levels)?;
    let moving_pyr = pyramid(moving, params.pyramid_levels)?;

    let mut trace = Vec::with_capacity(params.pyramid_levels);
    let mut previous: Option<(Geometry, [Vec<f64>; 3])> = None;
    let mut state = None;
    for (level, (f, m)) in fixed_pyr.iter().zip(&moving_pyr).enumerate() {
        let geometry = *f.geometry();
        let residual = match previous.take() {
            Some((g, r)) => upsample(&r, &g, &geometry),
            None => [0, 1, 2].map(|_| vec![0.0; geometry.len()]),
        };
        let mut st = LevelState {
            geometry,
            affine: DisplacementField::from_affine(geometry, init),
            residual,
        };
        let level_trace = demons_level(&mut st, f, m, params, params.iterations_per_level[level]);
        trace.push(level_trace);
        previous = Some((geometry, st.residual.clone()));
        state = Some(st);
    }

    let st = state.expect("at least one level");
    let field = total(&st.affine, &st.residual);
    let affine_only = DisplacementField::from_affine(*fixed.geometry(), init);
    let deformed = similarity_values(fixed.voxels(), warp_image(moving, &field).voxels(), params.similarity);
    let baseline = objective(fixed, moving, init, params.similarity);
    Ok((if deformed <= baseline { field } else { affine_only }, trace))
}

fn demons_level(
    st: &mut LevelState,
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    params: &RegistrationParams,
    iterations: usize,
) -> Vec<f64> {
    let g = st.geometry;
    let grad = gradient(fixed);
    let fv = fixed.voxels();
    let affine = st.affine.clone();
    let eval = |r: &[Vec<f64>; 3]| -> (f64, ScalarVolume) {
        let warped = warp_image(moving, &total(&affine, r));
        (similarity_values(fv, warped.voxels(), params.similarity), warped)
    };

    let (mut f, mut warped) = eval(&st.residual);
    let mut trace = vec![f];
    let min_step = params.step_size / f64::from(1u32 << MAX_HALVINGS);

    'outer: for _ in 0..iterations {
        // Unit-cap force in voxels; scaled by the step when applied.
        let wv = warped.voxels();
        let force: Vec<[f64; 3]> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let diff = wv[i] as f64 - fv[i] as f64;
                let gr = [grad[0][i], grad[1][i], grad[2][i]];
                let denom = gr[0] * gr[0] + gr[1] * gr[1] + gr[2] * gr[2] + diff * diff;
                if denom < 1e-9 {
                    [0.0; 3]
                } else {
                    gr.map(|c| -2.0 * diff * c / denom)
                }
            })
            .collect();

        let mut step = params.step_size;
        loop {
            let cand: [Vec<f64>; 3] = [0, 1, 2].map(|k| {
                let raw: Vec<f64> = (0..g.len())
                    .map(|i| st.residual[k][i] + step * force[i][k] * g.spacing[k])
                    .collect();
                smooth_f64(&raw, g.dims, params.demons_sigma_vox)
            });
            let (fc, wc) = eval(&cand);
            if fc < f {
                let rel = relative_improvement(f, fc, params.similarity.floor());
                st.residual = cand;
                f = fc;
                warped = wc;
                trace.push(f);
                if rel < params.convergence_tol {
                    break 'outer;
                }
                break;
            }
            step /= 2.0;
            if step < min_step {
                break 'outer;
            }
        }
    }
    trace
}

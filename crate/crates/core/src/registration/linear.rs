//! Rigid (6 DOF) and affine (12 DOF) stages.
//!
//! Both optimize a parameter vector whose units are roughly "one level voxel
//! of motion" per unit, by normalized gradient descent on central finite
//! differences with step halving. Rotation and matrix parameters are scaled
//! by a lever arm of a quarter of the mean grid extent; translations are
//! offsets about the fixed image centre, in level voxels. Reported rotations
//! are in degrees.

use crate::error::Result;
use crate::registration::field::affine_samples;
use crate::registration::transform::AffineTransform;
use crate::registration::{
    check_inputs, pyramid, relative_improvement, similarity_values, RegistrationParams, Similarity, Trace,
};
use crate::volume::ScalarVolume;

const FD_STEP: f64 = 0.1;
/// Step halvings allowed before a level is declared converged.
const MAX_HALVINGS: u32 = 10;

pub(crate) fn objective(fixed: &ScalarVolume, moving: &ScalarVolume, t: &AffineTransform, kind: Similarity) -> f64 {
    let warped = affine_samples(moving, t, fixed.geometry());
    similarity_values(fixed.voxels(), &warped, kind)
}

/// Distance from the centre at which a unit rotation or matrix parameter
/// moves a point by one level voxel.
fn lever_arm(vol: &ScalarVolume) -> f64 {
    let extent = vol.dims().iter().zip(vol.spacing()).map(|(&d, s)| d as f64 * s).sum::<f64>() / 3.0;
    (extent / 4.0).max(f64::MIN_POSITIVE)
}

/// Physical centre of the fixed grid.
pub(crate) fn grid_center(vol: &ScalarVolume) -> [f64; 3] {
    let d = vol.dims();
    let s = vol.spacing();
    [0, 1, 2].map(|a| (d[a] - 1) as f64 * s[a] / 2.0)
}

pub(crate) struct Descent {
    pub params: Vec<f64>,
    pub trace: Vec<f64>,
}

/// Normalized gradient descent with step halving. Only improving steps are
/// accepted, so the returned trace is strictly decreasing. Stops when an
/// accepted step closes less than `tol` of the gap to `floor`, when no step
/// down to `step0 / 2^10` improves, or after `max_iter` gradients.
pub(crate) fn descend(
    start: Vec<f64>,
    max_iter: usize,
    step0: f64,
    tol: f64,
    floor: f64,
    eval: impl Fn(&[f64]) -> f64,
) -> Descent {
    let mut p = start;
    let mut f = eval(&p);
    let mut trace = vec![f];
    let min_step = step0 / f64::from(1u32 << MAX_HALVINGS);

    'outer: for _ in 0..max_iter {
        let grad: Vec<f64> = (0..p.len())
            .map(|k| {
                let mut q = p.clone();
                q[k] = p[k] + FD_STEP;
                let up = eval(&q);
                q[k] = p[k] - FD_STEP;
                let down = eval(&q);
                (up - down) / (2.0 * FD_STEP)
            })
            .collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let mut step = step0;
        loop {
            let cand: Vec<f64> = p.iter().zip(&grad).map(|(x, g)| x - step * g / norm).collect();
            let fc = eval(&cand);
            if fc < f {
                let rel = relative_improvement(f, fc, floor);
                p = cand;
                f = fc;
                trace.push(f);
                if rel < tol {
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
    Descent { params: p, trace }
}

/// Rigid registration of `moving` onto `fixed` starting from the identity.
pub fn register_rigid(fixed: &ScalarVolume, moving: &ScalarVolume, params: &RegistrationParams) -> Result<AffineTransform> {
    register_rigid_with_trace(fixed, moving, params).map(|(t, _)| t)
}

pub fn register_rigid_with_trace(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    params: &RegistrationParams,
) -> Result<(AffineTransform, Trace)> {
    check_inputs(fixed, moving, params)?;
    let fixed_pyr = pyramid(fixed, params.pyramid_levels)?;
    let moving_pyr = pyramid(moving, params.pyramid_levels)?;
    let center = grid_center(fixed);
    let lever = lever_arm(fixed);

    let mut angles = [0.0; 3];
    let mut offset = [0.0; 3];
    let mut trace = Vec::with_capacity(params.pyramid_levels);
    for (level, (f, m)) in fixed_pyr.iter().zip(&moving_pyr).enumerate() {
        let s = f.spacing();
        let deg = ((s[0] + s[1] + s[2]) / 3.0 / lever).to_degrees();
        let build = |p: &[f64]| {
            AffineTransform::about_center(
                AffineTransform::euler_matrix([p[0] * deg, p[1] * deg, p[2] * deg]),
                center,
                [p[3] * s[0], p[4] * s[1], p[5] * s[2]],
            )
        };
        let start = vec![
            angles[0] / deg,
            angles[1] / deg,
            angles[2] / deg,
            offset[0] / s[0],
            offset[1] / s[1],
            offset[2] / s[2],
        ];
        let d = descend(
            start,
            params.iterations_per_level[level],
            params.step_size,
            params.convergence_tol,
            params.similarity.floor(),
            |p| objective(f, m, &build(p), params.similarity),
        );
        angles = [d.params[0] * deg, d.params[1] * deg, d.params[2] * deg];
        offset = [d.params[3] * s[0], d.params[4] * s[1], d.params[5] * s[2]];
        trace.push(d.trace);
    }

    let result = AffineTransform::about_center(AffineTransform::euler_matrix(angles), center, offset);
    let identity = AffineTransform::identity();
    Ok((keep_better(fixed, moving, result, identity, params.similarity), trace))
}

/// Affine refinement of `init`.
pub fn register_affine(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    init: &AffineTransform,
    params: &RegistrationParams,
) -> Result<AffineTransform> {
    register_affine_with_trace(fixed, moving, init, params).map(|(t, _)| t)
}

pub fn register_affine_with_trace(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    init: &AffineTransform,
    params: &RegistrationParams,
) -> Result<(AffineTransform, Trace)> {
    check_inputs(fixed, moving, params)?;
    AffineTransform::new(init.matrix, init.translation)?;
    let fixed_pyr = pyramid(fixed, params.pyramid_levels)?;
    let moving_pyr = pyramid(moving, params.pyramid_levels)?;
    let center = grid_center(fixed);
    let lever = lever_arm(fixed);

    let mut matrix = init.matrix;
    let mut offset = init.offset_about(center);
    let mut trace = Vec::with_capacity(params.pyramid_levels);
    for (level, (f, m)) in fixed_pyr.iter().zip(&moving_pyr).enumerate() {
        let s = f.spacing();
        let unit = (s[0] + s[1] + s[2]) / 3.0 / lever;
        let (m0, o0) = (matrix, offset);
        let build = |p: &[f64]| {
            let mut mat = m0;
            for r in 0..3 {
                for c in 0..3 {
                    mat[r][c] += p[3 * r + c] * unit;
                }
            }
            AffineTransform::about_center(mat, center, [0, 1, 2].map(|a| o0[a] + p[9 + a] * s[a]))
        };
        let d = descend(
            vec![0.0; 12],
            params.iterations_per_level[level],
            params.step_size,
            params.convergence_tol,
            params.similarity.floor(),
            |p| objective(f, m, &build(p), params.similarity),
        );
        let t = build(&d.params);
        matrix = t.matrix;
        offset = t.offset_about(center);
        trace.push(d.trace);
    }

    let result = AffineTransform::about_center(matrix, center, offset);
    let result = if result.determinant().abs() > 1e-9 { result } else { *init };
    Ok((keep_better(fixed, moving, result, *init, params.similarity), trace))
}

/// Coarse levels can drift away from a start that was already better at full
/// resolution; never return something worse than the starting transform.
fn keep_better(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    result: AffineTransform,
    start: AffineTransform,
    kind: Similarity,
) -> AffineTransform {
    if objective(fixed, moving, &result, kind) <= objective(fixed, moving, &start, kind) {
        result
    } else {
        start
    }
}

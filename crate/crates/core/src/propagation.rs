//! Pseudo-labels for unannotated cine frames.
//!
//! Both template frames (ES and ED) are registered onto the target frame
//! with the full rigid → affine → deformable chain. The template whose total
//! displacement field has the smaller mean magnitude wins (ES on ties), and
//! its manual label is warped onto the target grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{
    register_affine, register_deformable, register_rigid, warp_label, DisplacementField, RegistrationParams,
};
use crate::volume::{CineSeries, LabelMap, ScalarVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Template {
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "ED")]
    Ed,
}

#[derive(Debug, Clone)]
pub struct WarpCandidate {
    pub template: Template,
    pub field: DisplacementField,
    /// Mean displacement magnitude of `field`, mm.
    pub norm: f64,
}

impl WarpCandidate {
    pub fn new(template: Template, field: DisplacementField) -> Self {
        let norm = field_norm(&field);
        Self { template, field, norm }
    }
}

#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub frame_index: usize,
    pub pseudo_label: LabelMap,
    pub chosen_template: Template,
    pub es_norm: f64,
    pub ed_norm: f64,
    pub params: RegistrationParams,
}

/// Mean Euclidean displacement magnitude in mm.
pub fn field_norm(field: &DisplacementField) -> f64 {
    let v = field.vectors();
    let total: f64 = v.iter().map(|u| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()).sum();
    total / v.len() as f64
}

/// ES wins exact ties.
pub fn select_template(es: &WarpCandidate, ed: &WarpCandidate) -> Template {
    if es.norm <= ed.norm {
        Template::Es
    } else {
        Template::Ed
    }
}

/// Rigid, then affine initialized from it, then deformable initialized from that.
pub fn register_three_stage(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    params: &RegistrationParams,
) -> Result<DisplacementField> {
    let rigid = register_rigid(fixed, moving, params)?;
    let affine = register_affine(fixed, moving, &rigid, params)?;
    register_deformable(fixed, moving, &affine, params)
}

pub fn propagate_frame(series: &CineSeries, target: usize, params: &RegistrationParams) -> Result<PropagationResult> {
    series.validate()?;
    if target >= series.frames.len() {
        return Err(Error::param(
            "target",
            format!("frame {target} out of range for {} frames", series.frames.len()),
        ));
    }
    if series.is_template(target) {
        return Err(Error::InvalidTarget(target));
    }
    let fixed = &series.frames[target];
    let (es, ed) = rayon::join(
        || register_three_stage(fixed, &series.frames[series.es_index], params),
        || register_three_stage(fixed, &series.frames[series.ed_index], params),
    );
    let es = WarpCandidate::new(Template::Es, es?);
    let ed = WarpCandidate::new(Template::Ed, ed?);

    let chosen = select_template(&es, &ed);
    let (field, label) = match chosen {
        Template::Es => (&es.field, &series.es_label),
        Template::Ed => (&ed.field, &series.ed_label),
    };
    Ok(PropagationResult {
        frame_index: target,
        pseudo_label: warp_label(label, field),
        chosen_template: chosen,
        es_norm: es.norm,
        ed_norm: ed.norm,
        params: params.clone(),
    })
}

/// One result per non-template frame, in frame order.
pub fn propagate_series(series: &CineSeries, params: &RegistrationParams) -> Result<Vec<PropagationResult>> {
    series.validate()?;
    params.validate()?;
    let targets: Vec<usize> = (0..series.frames.len()).filter(|&i| !series.is_template(i)).collect();
    let outcomes: Vec<(usize, Result<PropagationResult>)> = targets
        .par_iter()
        .map(|&t| (t, propagate_frame(series, t, params)))
        .collect();

    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (t, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push((t, e)),
        }
    }
    if failures.is_empty() {
        Ok(results)
    } else {
        Err(Error::Frames(failures))
    }
}

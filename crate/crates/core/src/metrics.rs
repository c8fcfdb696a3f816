//! Per-class Dice overlap and symmetric Hausdorff distance.
//!
//! Hausdorff distances are taken between voxel-centre point sets of the
//! whole class mask (not surfaces, no percentile), in millimetres.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Geometry, Label, LabelMap};

fn check_pair(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    pred.geometry().require_same(gt.geometry(), "prediction vs ground truth")
}

/// `2|P ∩ G| / (|P| + |G|)`; 1 when both masks are empty.
pub fn dice(pred: &LabelMap, gt: &LabelMap, class: Label) -> Result<f64> {
    check_pair(pred, gt)?;
    let code = class.code();
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        let (ia, ib) = (a == code, b == code);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    Ok(if p + g == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + g) as f64
    })
}

/// Spacing split into a common scale and per-axis ratios, so that scaling
/// every spacing component by the same factor only rescales the result.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Metric {
    pub scale: f64,
    pub ratio: [f64; 3],
}

impl Metric {
    pub fn new(spacing: [f64; 3]) -> Self {
        let scale = spacing.iter().copied().fold(0.0, f64::max);
        Self {
            scale,
            ratio: spacing.map(|s| s / scale),
        }
    }

    /// Squared distance in units of `scale`.
    #[inline]
    pub fn dist2(&self, a: [usize; 3], b: [usize; 3]) -> f64 {
        let mut acc = 0.0;
        for k in 0..3 {
            let d = (a[k] as f64 - b[k] as f64) * self.ratio[k];
            acc += d * d;
        }
        acc
    }
}

fn mask_points(lm: &LabelMap, code: u8) -> Vec<[usize; 3]> {
    let g = lm.geometry();
    lm.labels()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == code)
        .map(|(i, _)| g.coords(i))
        .collect()
}

/// Mask voxels with at least one in-grid 6-neighbour outside the mask. For
/// any point outside the mask its nearest mask voxel is one of these.
fn boundary_points(lm: &LabelMap, code: u8) -> Vec<[usize; 3]> {
    let g = lm.geometry();
    let [nx, ny, nz] = g.dims;
    mask_points(lm, code)
        .into_iter()
        .filter(|&[x, y, z]| {
            let outside = |x: usize, y: usize, z: usize| lm.get(x, y, z) != code;
            (x > 0 && outside(x - 1, y, z))
                || (x + 1 < nx && outside(x + 1, y, z))
                || (y > 0 && outside(x, y - 1, z))
                || (y + 1 < ny && outside(x, y + 1, z))
                || (z > 0 && outside(x, y, z - 1))
                || (z + 1 < nz && outside(x, y, z + 1))
        })
        .collect()
}

/// Deterministic Fisher-Yates order; scattering the query points makes the
/// early-exit bound tighten quickly.
fn scatter<T>(items: &mut [T]) {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    for i in (1..items.len()).rev() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let j = ((state >> 33) % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Directed squared Hausdorff distance from `from` to the mask `to_code` in `to`.
fn directed2(from: &[[usize; 3]], to: &LabelMap, to_code: u8, metric: &Metric) -> f64 {
    let g: &Geometry = to.geometry();
    let targets = boundary_points(to, to_code);
    let mut worst: f64 = 0.0;
    for &a in from {
        if to.labels()[g.index(a[0], a[1], a[2])] == to_code {
            continue;
        }
        let mut best = f64::INFINITY;
        for &b in &targets {
            let d = metric.dist2(a, b);
            if d < best {
                best = d;
                if best <= worst {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    worst
}

/// Symmetric Hausdorff distance in mm, or `None` if either mask is empty.
pub fn hausdorff(pred: &LabelMap, gt: &LabelMap, class: Label) -> Result<Option<f64>> {
    check_pair(pred, gt)?;
    let code = class.code();
    let mut p = mask_points(pred, code);
    let mut g = mask_points(gt, code);
    if p.is_empty() || g.is_empty() {
        return Ok(None);
    }
    scatter(&mut p);
    scatter(&mut g);
    let metric = Metric::new(pred.spacing());
    let d2 = directed2(&p, gt, code, &metric).max(directed2(&g, pred, code, &metric));
    Ok(Some(metric.scale * d2.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hausdorff_mm: Option<f64>,
    pub pred_voxels: usize,
    pub gt_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub classes: Vec<ClassReport>,
}

impl CaseReport {
    pub fn class(&self, label: Label) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == label.name())
    }
}

pub fn evaluate_case(pred: &LabelMap, gt: &LabelMap) -> Result<CaseReport> {
    check_pair(pred, gt)?;
    let classes = Label::FOREGROUND
        .iter()
        .map(|&label| {
            Ok(ClassReport {
                class: label.name().to_string(),
                dice: dice(pred, gt, label)?,
                hausdorff_mm: hausdorff(pred, gt, label)?,
                pred_voxels: pred.count(label),
                gt_voxels: gt.count(label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseReport { classes })
}

/// Per-class mean Dice over several cases, in LV, MYO, RV order.
pub fn mean_dice(reports: &[CaseReport]) -> Result<[f64; 3]> {
    if reports.is_empty() {
        return Err(Error::Degenerate("no cases to average".into()));
    }
    let mut out = [0.0; 3];
    for r in reports {
        for (k, c) in r.classes.iter().enumerate() {
            out[k] += c.dice;
        }
    }
    Ok(out.map(|s| s / reports.len() as f64))
}

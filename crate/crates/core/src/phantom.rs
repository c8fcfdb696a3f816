//! Synthetic beating-heart phantom with analytic labels for every frame.
//!
//! The LV is a sphere whose radius follows a cosine ramp from its ES value to
//! its ED value; the myocardium is a concentric shell of fixed thickness; the
//! RV is a crescent: a sphere of epicardial radius centred `rv_offset` voxels
//! along +x from the LV centre, minus the epicardial sphere. All lengths are
//! in voxels and the LV centre sits `rv_offset / 2` voxels to the -x side of
//! the grid centre.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{CineSeries, Geometry, Label, LabelMap, ScalarVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub lv_radius_es: f64,
    pub lv_radius_ed: f64,
    pub myo_thickness: f64,
    pub rv_offset: f64,
    pub frames: usize,
    pub es_index: usize,
    pub ed_index: usize,
    pub background_level: f32,
    pub lv_level: f32,
    pub myo_level: f32,
    pub rv_level: f32,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            spacing: [1.0; 3],
            lv_radius_es: 8.0,
            lv_radius_ed: 12.0,
            myo_thickness: 4.0,
            rv_offset: 10.0,
            frames: 11,
            es_index: 0,
            ed_index: 10,
            background_level: 20.0,
            lv_level: 200.0,
            myo_level: 80.0,
            rv_level: 140.0,
            noise_sigma: 0.0,
            seed: 7,
        }
    }
}

impl PhantomSpec {
    /// Smallest gap between any two class intensity levels.
    pub fn min_level_gap(&self) -> f64 {
        let l = self.levels();
        let mut gap = f64::INFINITY;
        for i in 0..4 {
            for j in i + 1..4 {
                gap = gap.min((l[i] as f64 - l[j] as f64).abs());
            }
        }
        gap
    }

    /// Intensity per label code.
    pub fn levels(&self) -> [f32; 4] {
        [self.background_level, self.lv_level, self.myo_level, self.rv_level]
    }

    pub fn lv_center(&self) -> [f64; 3] {
        let c = self.dims.map(|d| (d as f64 - 1.0) / 2.0);
        [c[0] - self.rv_offset / 2.0, c[1], c[2]]
    }

    pub fn validate(&self) -> Result<()> {
        Geometry::new(self.dims, self.spacing)?;
        if !(self.lv_radius_es > 0.0 && self.lv_radius_ed > 0.0) {
            return Err(Error::param("lv_radius", "radii must be positive"));
        }
        if !(self.myo_thickness > 0.0) {
            return Err(Error::param("myo_thickness", "must be positive"));
        }
        if !(self.rv_offset >= 0.0) {
            return Err(Error::param("rv_offset", "must be non-negative"));
        }
        if self.frames < 3 {
            return Err(Error::param("frames", "need at least 3 frames"));
        }
        if self.es_index == self.ed_index || self.es_index >= self.frames || self.ed_index >= self.frames {
            return Err(Error::param(
                "es_index/ed_index",
                format!("{}/{} invalid for {} frames", self.es_index, self.ed_index, self.frames),
            ));
        }
        let levels = self.levels();
        if levels.iter().any(|l| !l.is_finite()) || self.min_level_gap() == 0.0 {
            return Err(Error::param("levels", "class intensities must be finite and distinct"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma", "must be >= 0"));
        }
        let epi = self.lv_radius_es.max(self.lv_radius_ed) + self.myo_thickness;
        let c = self.lv_center();
        let lo = [c[0] - epi, c[1] - epi, c[2] - epi];
        let hi = [c[0] + self.rv_offset + epi, c[1] + epi, c[2] + epi];
        for a in 0..3 {
            if lo[a] < 0.0 || hi[a] > (self.dims[a] - 1) as f64 {
                return Err(Error::param(
                    "geometry",
                    format!("heart spans [{:.1}, {:.1}] on axis {a}, grid is [0, {}]", lo[a], hi[a], self.dims[a] - 1),
                ));
            }
        }
        Ok(())
    }

    /// Cardiac phase in `[0, 1]`: 0 at ES, 1 at ED, cosine ramp between, clamped outside.
    pub fn alpha(&self, t: usize) -> f64 {
        let s = (t as f64 - self.es_index as f64) / (self.ed_index as f64 - self.es_index as f64);
        let s = s.clamp(0.0, 1.0);
        (1.0 - (PI * s).cos()) / 2.0
    }

    pub fn lv_radius(&self, t: usize) -> f64 {
        let a = self.alpha(t);
        if a == 0.0 {
            self.lv_radius_es
        } else if a == 1.0 {
            self.lv_radius_ed
        } else {
            self.lv_radius_es + a * (self.lv_radius_ed - self.lv_radius_es)
        }
    }

    /// Analytic class of a point (voxel-index units) at frame `t`.
    pub fn classify(&self, t: usize, p: [f64; 3]) -> Label {
        let r_lv = self.lv_radius(t);
        let r_epi = r_lv + self.myo_thickness;
        let c = self.lv_center();
        let d_lv = dist(p, c);
        if d_lv <= r_lv {
            Label::Lv
        } else if d_lv <= r_epi {
            Label::Myo
        } else if dist(p, [c[0] + self.rv_offset, c[1], c[2]]) <= r_epi {
            Label::Rv
        } else {
            Label::Background
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Intensity image and exact labels of frame `t`.
pub fn generate_frame(spec: &PhantomSpec, t: usize) -> Result<(ScalarVolume, LabelMap)> {
    spec.validate()?;
    if t >= spec.frames {
        return Err(Error::param("frame", format!("{t} out of range for {} frames", spec.frames)));
    }
    let g = Geometry::new(spec.dims, spec.spacing)?;
    let labels = LabelMap::from_fn(g, |x, y, z| spec.classify(t, [x as f64, y as f64, z as f64]));
    let levels = spec.levels();
    let mut voxels: Vec<f32> = labels.labels().iter().map(|&c| levels[c as usize]).collect();
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(t as u64);
        let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        for v in &mut voxels {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    Ok((ScalarVolume::with_geometry(g, voxels)?, labels))
}

/// A generated cine series plus ground-truth labels of every frame.
#[derive(Debug, Clone)]
pub struct PhantomCine {
    pub series: CineSeries,
    pub ground_truth: Vec<LabelMap>,
}

pub fn generate_cine(spec: &PhantomSpec) -> Result<PhantomCine> {
    spec.validate()?;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut ground_truth = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let (v, l) = generate_frame(spec, t)?;
        frames.push(v);
        ground_truth.push(l);
    }
    let series = CineSeries {
        subject_id: format!("phantom-{}", spec.seed),
        vendor: "phantom".into(),
        center: "synthetic".into(),
        frames,
        es_index: spec.es_index,
        ed_index: spec.ed_index,
        es_label: ground_truth[spec.es_index].clone(),
        ed_label: ground_truth[spec.ed_index].clone(),
    };
    Ok(PhantomCine { series, ground_truth })
}

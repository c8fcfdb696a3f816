//! Grid types shared by every stage of the pipeline.
//!
//! Voxels are stored row-major with x varying fastest:
//! `index = x + nx * (y + ny * z)`. Spacing is in millimetres per voxel.
//! Continuous positions ([`GridPoint`]) are in voxel-index units, so the
//! centre of voxel `(i, j, k)` is the point `(i, j, k)`.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Segmentation classes. The numeric codes are the on-disk label values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Lv = 1,
    Myo = 2,
    Rv = 3,
}

impl Label {
    pub const FOREGROUND: [Label; 3] = [Label::Lv, Label::Myo, Label::Rv];

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Background),
            1 => Some(Label::Lv),
            2 => Some(Label::Myo),
            3 => Some(Label::Rv),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Background => "background",
            Label::Lv => "LV",
            Label::Myo => "MYO",
            Label::Rv => "RV",
        }
    }
}

/// Continuous position in voxel-index units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GridPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Grid shape plus physical voxel size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::param("dims", format!("{dims:?} has a zero extent")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::param(
                "spacing",
                format!("{spacing:?} must be finite and positive"),
            ));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::param("dims", "voxel count overflows"))?;
        Ok(Self { dims, spacing })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Physical extent is not compared, only shape and spacing.
    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub fn require_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {:?}@{:?} vs {:?}@{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    geometry: Geometry,
    voxels: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<f32>) -> Result<Self> {
        let geometry = Geometry::new(dims, spacing)?;
        Self::with_geometry(geometry, voxels)
    }

    pub fn with_geometry(geometry: Geometry, voxels: Vec<f32>) -> Result<Self> {
        if voxels.len() != geometry.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} voxels for dims {:?}",
                voxels.len(),
                geometry.dims
            )));
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "voxels",
                format!("non-finite value at index {i}"),
            ));
        }
        Ok(Self { geometry, voxels })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Self {
        assert!(value.is_finite());
        Self {
            voxels: vec![value; geometry.len()],
            geometry,
        }
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(geometry: Geometry, f: impl Fn(usize, usize, usize) -> f32 + Sync) -> Result<Self> {
        let [nx, ny, _] = geometry.dims;
        let voxels = (0..geometry.len())
            .into_par_iter()
            .map(|i| f(i % nx, (i / nx) % ny, i / (nx * ny)))
            .collect();
        Self::with_geometry(geometry, voxels)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.geometry.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_constant(&self) -> bool {
        let (lo, hi) = self.min_max();
        lo == hi
    }

    pub fn mean(&self) -> f64 {
        self.voxels.iter().map(|&v| v as f64).sum::<f64>() / self.voxels.len() as f64
    }

    /// Voxels of z-slice `z`, x fastest.
    pub fn slice_z(&self, z: usize) -> &[f32] {
        let plane = self.geometry.dims[0] * self.geometry.dims[1];
        &self.voxels[z * plane..(z + 1) * plane]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    geometry: Geometry,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        Self::with_geometry(Geometry::new(dims, spacing)?, labels)
    }

    pub fn with_geometry(geometry: Geometry, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != geometry.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for dims {:?}",
                labels.len(),
                geometry.dims
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| Label::from_code(c).is_none()) {
            return Err(Error::format(
                "label range",
                format!("code {bad} is not one of 0..=3"),
            ));
        }
        Ok(Self { geometry, labels })
    }

    pub fn background(geometry: Geometry) -> Self {
        Self {
            labels: vec![0; geometry.len()],
            geometry,
        }
    }

    pub fn from_fn(geometry: Geometry, f: impl Fn(usize, usize, usize) -> Label + Sync) -> Self {
        let [nx, ny, _] = geometry.dims;
        let labels = (0..geometry.len())
            .into_par_iter()
            .map(|i| f(i % nx, (i / nx) % ny, i / (nx * ny)).code())
            .collect();
        Self { geometry, labels }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.geometry.index(x, y, z)]
    }

    pub fn count(&self, label: Label) -> usize {
        let code = label.code();
        self.labels.iter().filter(|&&c| c == code).count()
    }

    /// Sorted, de-duplicated set of codes present.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 4];
        for &c in &self.labels {
            seen[c as usize] = true;
        }
        (0..4u8).filter(|&c| seen[c as usize]).collect()
    }

    /// Same map with the spacing replaced; used by metric scaling checks.
    pub fn with_spacing(&self, spacing: [f64; 3]) -> Result<Self> {
        Self::new(self.geometry.dims, spacing, self.labels.clone())
    }
}

/// Ordered frames of one subject with manual labels on the ES and ED frames.
#[derive(Debug, Clone)]
pub struct CineSeries {
    pub subject_id: String,
    pub vendor: String,
    pub center: String,
    pub frames: Vec<ScalarVolume>,
    pub es_index: usize,
    pub ed_index: usize,
    pub es_label: LabelMap,
    pub ed_label: LabelMap,
}

impl CineSeries {
    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if self.es_index == self.ed_index {
            return Err(Error::param("es_index", "ES and ED must be different frames"));
        }
        for (name, idx) in [("es_index", self.es_index), ("ed_index", self.ed_index)] {
            if idx >= n {
                return Err(Error::param(name, format!("index {idx} out of range for {n} frames")));
            }
        }
        let geometry = self.frames[0].geometry();
        for (i, frame) in self.frames.iter().enumerate() {
            geometry.require_same(frame.geometry(), &format!("frame {i}"))?;
        }
        geometry.require_same(self.es_label.geometry(), "ES label")?;
        geometry.require_same(self.ed_label.geometry(), "ED label")?;
        Ok(())
    }

    pub fn is_template(&self, index: usize) -> bool {
        index == self.es_index || index == self.ed_index
    }
}

#[inline]
fn clamp_axis(p: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let c = p.clamp(0.0, max);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64)
}

/// Trilinear interpolation with clamp-to-edge outside the grid.
pub fn trilinear_sample(vol: &ScalarVolume, p: GridPoint) -> f64 {
    debug_assert!(p.is_finite());
    let g = vol.geometry();
    let (x0, x1, fx) = clamp_axis(p.x, g.dims[0]);
    let (y0, y1, fy) = clamp_axis(p.y, g.dims[1]);
    let (z0, z1, fz) = clamp_axis(p.z, g.dims[2]);
    let v = |x, y, z| vol.voxels[g.index(x, y, z)] as f64;

    let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
    let c00 = lerp(v(x0, y0, z0), v(x1, y0, z0), fx);
    let c10 = lerp(v(x0, y1, z0), v(x1, y1, z0), fx);
    let c01 = lerp(v(x0, y0, z1), v(x1, y0, z1), fx);
    let c11 = lerp(v(x0, y1, z1), v(x1, y1, z1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}

#[inline]
fn nearest_axis(p: f64, n: usize) -> usize {
    let c = p.clamp(0.0, (n - 1) as f64);
    // Exact halves go to the lower index.
    let i = (c - 0.5).ceil();
    (i.max(0.0) as usize).min(n - 1)
}

/// Label of the nearest voxel centre; halves round toward the lower index.
pub fn nearest_sample(lm: &LabelMap, p: GridPoint) -> u8 {
    debug_assert!(p.is_finite());
    let g = lm.geometry();
    let x = nearest_axis(p.x, g.dims[0]);
    let y = nearest_axis(p.y, g.dims[1]);
    let z = nearest_axis(p.z, g.dims[2]);
    lm.labels[g.index(x, y, z)]
}

/// Normalized sampled Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// One edge-replicated 1-D convolution pass along `axis`.
fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let n = dims[axis];
    if n == 1 {
        return data.to_vec();
    }
    let radius = (kernel.len() / 2) as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let plane = dims[0] * dims[1];
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(z, slab)| {
            for local in 0..plane {
                let index = z * plane + local;
                let pos = match axis {
                    0 => local % dims[0],
                    1 => local / dims[0],
                    _ => z,
                } as i64;
                let base = index as i64 - pos * stride as i64;
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let q = (pos + k as i64 - radius).clamp(0, n as i64 - 1);
                    acc += w * data[(base + q * stride as i64) as usize];
                }
                slab[local] = acc;
            }
        });
    out
}

pub(crate) fn smooth_f64(data: &[f64], dims: [usize; 3], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let pass = convolve_axis(data, dims, 0, &kernel);
    let pass = convolve_axis(&pass, dims, 1, &kernel);
    convolve_axis(&pass, dims, 2, &kernel)
}

/// Separable Gaussian smoothing with edge replication.
pub fn gaussian_smooth(vol: &ScalarVolume, sigma_vox: f64) -> Result<ScalarVolume> {
    if !(sigma_vox >= 0.0 && sigma_vox.is_finite()) {
        return Err(Error::param("sigma_vox", format!("{sigma_vox} must be >= 0")));
    }
    if sigma_vox == 0.0 {
        return Ok(vol.clone());
    }
    let data: Vec<f64> = vol.voxels.iter().map(|&v| v as f64).collect();
    let smoothed = smooth_f64(&data, vol.dims(), sigma_vox);
    Ok(ScalarVolume {
        geometry: vol.geometry,
        voxels: smoothed.into_iter().map(|v| v as f32).collect(),
    })
}

/// Anti-aliased 2x decimation. Axes of extent 1 are carried through unchanged.
pub fn downsample2x(vol: &ScalarVolume) -> Result<ScalarVolume> {
    let dims = vol.dims();
    if dims.iter().all(|&d| d < 2) {
        return Err(Error::param(
            "dims",
            format!("{dims:?} has no axis of extent >= 2 to decimate"),
        ));
    }
    let smoothed = gaussian_smooth(vol, 1.0)?;
    let factor = dims.map(|d| if d >= 2 { 2 } else { 1 });
    let out_dims = [0, 1, 2].map(|a| dims[a].div_ceil(factor[a]));
    let spacing = vol.spacing();
    let out_spacing = [0, 1, 2].map(|a| spacing[a] * factor[a] as f64);
    let g = Geometry::new(out_dims, out_spacing)?;
    ScalarVolume::from_fn(g, |x, y, z| {
        smoothed.get(x * factor[0], y * factor[1], z * factor[2])
    })
}

/// Central-difference gradient in intensity per voxel (one-sided halves at edges).
pub(crate) fn gradient(vol: &ScalarVolume) -> [Vec<f64>; 3] {
    let g = *vol.geometry();
    let [nx, ny, nz] = g.dims;
    let at = |x: usize, y: usize, z: usize| vol.voxels[g.index(x, y, z)] as f64;
    let comp = |axis: usize| -> Vec<f64> {
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let [x, y, z] = g.coords(i);
                let (lo, hi) = match axis {
                    0 => (at(x.saturating_sub(1), y, z), at((x + 1).min(nx - 1), y, z)),
                    1 => (at(x, y.saturating_sub(1), z), at(x, (y + 1).min(ny - 1), z)),
                    _ => (at(x, y, z.saturating_sub(1)), at(x, y, (z + 1).min(nz - 1))),
                };
                (hi - lo) / 2.0
            })
            .collect()
    };
    [comp(0), comp(1), comp(2)]
}

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::registration::AffineTransform;
use crate::volume::{nearest_sample, trilinear_sample, Geometry, GridPoint, LabelMap, ScalarVolume};

/// Dense displacement in mm on the fixed grid: voxel `v` of the fixed image
/// corresponds to physical point `v * spacing + u(v)` of the moving image.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    geometry: Geometry,
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(geometry: Geometry, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != geometry.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} vectors for dims {:?}",
                vectors.len(),
                geometry.dims
            )));
        }
        if vectors.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::param("field", "non-finite displacement"));
        }
        Ok(Self { geometry, vectors })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        Self {
            vectors: vec![[0.0; 3]; geometry.len()],
            geometry,
        }
    }

    pub fn uniform(geometry: Geometry, u: [f64; 3]) -> Self {
        Self {
            vectors: vec![u; geometry.len()],
            geometry,
        }
    }

    /// Displacement `T(x) - x` of an affine transform sampled on `geometry`.
    pub fn from_affine(geometry: Geometry, t: &AffineTransform) -> Self {
        let s = geometry.spacing;
        let vectors = (0..geometry.len())
            .into_par_iter()
            .map(|i| {
                let v = geometry.coords(i);
                let x = [0, 1, 2].map(|a| v[a] as f64 * s[a]);
                let y = t.apply(x);
                [0, 1, 2].map(|a| y[a] - x[a])
            })
            .collect();
        Self { geometry, vectors }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    /// Moving-image sample point (continuous voxel index) for fixed voxel `index`.
    #[inline]
    fn sample_point(&self, index: usize, moving_spacing: [f64; 3]) -> GridPoint {
        let v = self.geometry.coords(index);
        let u = self.vectors[index];
        let s = self.geometry.spacing;
        let p = [0, 1, 2].map(|a| v[a] as f64 * (s[a] / moving_spacing[a]) + u[a] / moving_spacing[a]);
        GridPoint::new(p[0], p[1], p[2])
    }
}

/// Pull-back warp: `out(v) = moving(v + u(v) / spacing)`, trilinear.
pub fn warp_image(moving: &ScalarVolume, field: &DisplacementField) -> ScalarVolume {
    let ms = moving.spacing();
    let voxels = (0..field.geometry.len())
        .into_par_iter()
        .map(|i| trilinear_sample(moving, field.sample_point(i, ms)) as f32)
        .collect();
    ScalarVolume::with_geometry(field.geometry, voxels).expect("interpolated values are finite")
}

/// Pull-back warp of a label map with nearest-neighbour sampling.
pub fn warp_label(moving: &LabelMap, field: &DisplacementField) -> LabelMap {
    let ms = moving.spacing();
    let labels = (0..field.geometry.len())
        .into_par_iter()
        .map(|i| nearest_sample(moving, field.sample_point(i, ms)))
        .collect();
    LabelMap::with_geometry(field.geometry, labels).expect("labels come from a valid map")
}

/// Resamples `moving` onto `target` through an affine transform.
pub fn warp_affine(moving: &ScalarVolume, t: &AffineTransform, target: &Geometry) -> ScalarVolume {
    let voxels = affine_samples(moving, t, target);
    ScalarVolume::with_geometry(*target, voxels).expect("interpolated values are finite")
}

pub(crate) fn affine_samples(moving: &ScalarVolume, t: &AffineTransform, target: &Geometry) -> Vec<f32> {
    let ms = moving.spacing();
    let s = target.spacing;
    let [nx, ny, _] = target.dims;
    let plane = nx * ny;
    let mut out = vec![0.0f32; target.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                let p = t.apply([x as f64 * s[0], y as f64 * s[1], z as f64 * s[2]]);
                let g = GridPoint::new(p[0] / ms[0], p[1] / ms[1], p[2] / ms[2]);
                slab[x + nx * y] = trilinear_sample(moving, g) as f32;
            }
        }
    });
    out
}

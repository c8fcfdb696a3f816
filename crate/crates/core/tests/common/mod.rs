//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use cardioprop::volume::{Geometry, LabelMap, ScalarVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn brute_dice(pred: &LabelMap, gt: &LabelMap, code: u8) -> f64 {
    let mut both = 0usize;
    let mut p = 0usize;
    let mut g = 0usize;
    for i in 0..pred.labels().len() {
        let a = pred.labels()[i] == code;
        let b = gt.labels()[i] == code;
        if a {
            p += 1;
        }
        if b {
            g += 1;
        }
        if a && b {
            both += 1;
        }
    }
    if p + g == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + g) as f64
    }
}

fn points(lm: &LabelMap, code: u8) -> Vec<[f64; 3]> {
    let [nx, ny, nz] = lm.dims();
    let s = lm.spacing();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if lm.get(x, y, z) == code {
                    out.push([x as f64 * s[0], y as f64 * s[1], z as f64 * s[2]]);
                }
            }
        }
    }
    out
}

fn directed(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// All-pairs symmetric Hausdorff distance between voxel centres, in mm.
pub fn brute_hausdorff(pred: &LabelMap, gt: &LabelMap, code: u8) -> Option<f64> {
    let a = points(pred, code);
    let b = points(gt, code);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(directed(&a, &b).max(directed(&b, &a)))
}

pub fn gaussian_volume(dims: [usize; 3], mean: f64, sd: f64, seed: u64) -> ScalarVolume {
    let g = Geometry::new(dims, [1.0; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mean, sd).unwrap();
    let voxels = (0..g.len()).map(|_| normal.sample(&mut rng) as f32).collect();
    ScalarVolume::with_geometry(g, voxels).unwrap()
}

pub fn uniform_volume(dims: [usize; 3], lo: f32, hi: f32, seed: u64) -> ScalarVolume {
    let g = Geometry::new(dims, [1.0; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voxels = (0..g.len()).map(|_| rng.gen_range(lo..hi)).collect();
    ScalarVolume::with_geometry(g, voxels).unwrap()
}

/// Runs the CLI in-process and returns its exit code.
pub fn cli(args: &[&str]) -> i32 {
    cardioprop::cli::run(std::iter::once("cardioprop").chain(args.iter().copied()))
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// A single-file NIfTI-1 image built byte by byte from the public header
/// layout, little-endian, payload at offset 352.
pub struct NiftiFixture {
    pub dims: [i16; 3],
    pub pixdim: [f32; 3],
    pub datatype: i16,
    pub bitpix: i16,
    pub slope: f32,
    pub inter: f32,
    pub payload: Vec<u8>,
}

impl NiftiFixture {
    pub fn bytes(&self) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dim = [3, self.dims[0], self.dims[1], self.dims[2], 1, 1, 1, 1];
        for (i, d) in dim.iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&self.datatype.to_le_bytes());
        h[72..74].copy_from_slice(&self.bitpix.to_le_bytes());
        let pixdim = [1.0, self.pixdim[0], self.pixdim[1], self.pixdim[2]];
        for (i, p) in pixdim.iter().enumerate() {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[112..116].copy_from_slice(&self.slope.to_le_bytes());
        h[116..120].copy_from_slice(&self.inter.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&self.payload);
        h
    }
}

/// Random scalar volume with f32-representable spacing.
pub fn random_volume(dims: [usize; 3], seed: u64) -> ScalarVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = [0; 3].map(|_| rng.gen_range(0.1f32..4.0) as f64);
    let g = Geometry::new(dims, spacing).unwrap();
    let voxels = (0..g.len()).map(|_| f32::from_bits(rng.gen::<u32>() & 0xbfff_ffff)).collect();
    ScalarVolume::with_geometry(g, voxels).unwrap()
}

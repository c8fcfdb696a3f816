//! Read-only support for single-file, uncompressed NIfTI-1 volumes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::read_bytes;
use crate::volume::{Geometry, LabelMap, ScalarVolume};

pub const NIFTI1_HEADER_LEN: usize = 348;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn word<const N: usize>(&self, offset: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.bytes[offset..offset + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, offset: usize) -> i16 {
        i16::from_le_bytes(self.word(offset))
    }

    fn f32(&self, offset: usize) -> f32 {
        f32::from_le_bytes(self.word(offset))
    }
}

struct Decoded {
    geometry: Geometry,
    values: Vec<f64>,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(Error::format(
            "compression",
            "gzip-compressed NIfTI is not supported; decompress first",
        ));
    }
    if bytes.len() < NIFTI1_HEADER_LEN {
        return Err(Error::format(
            "header",
            format!("{} bytes, need {NIFTI1_HEADER_LEN}", bytes.len()),
        ));
    }
    let magic = &bytes[344..348];
    if magic == b"ni1\0" {
        return Err(Error::format("magic", "two-file (.hdr/.img) NIfTI is not supported"));
    }
    if magic != b"n+1\0" {
        return Err(Error::format("magic", format!("{magic:?} is not \"n+1\\0\"")));
    }
    let sizeof_hdr = [0, 1, 2, 3].map(|i| bytes[i]);
    let big_endian = match (i32::from_le_bytes(sizeof_hdr), i32::from_be_bytes(sizeof_hdr)) {
        (348, _) => false,
        (_, 348) => true,
        (n, _) => return Err(Error::format("sizeof_hdr", format!("{n} is not 348"))),
    };
    let r = Reader { bytes, big_endian };

    let dim: Vec<i16> = (0..8).map(|i| r.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(3..=7).contains(&ndim) || dim[4..=ndim as usize].iter().any(|&d| d != 1) {
        return Err(Error::format(
            "dim",
            format!("{:?} is not a 3-D volume", &dim[..=ndim.clamp(0, 7) as usize]),
        ));
    }
    if dim[1..=3].iter().any(|&d| d <= 0) {
        return Err(Error::format("dim", format!("{:?} has non-positive extent", &dim[1..=3])));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let spacing = [1, 2, 3].map(|i| r.f32(76 + 4 * i).abs() as f64);
    let geometry = Geometry::new(dims, spacing).map_err(|e| Error::format("pixdim", e.to_string()))?;

    let datatype = r.i16(70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let vox_offset = r.f32(108);
    if !(vox_offset >= NIFTI1_HEADER_LEN as f32) {
        return Err(Error::format("vox_offset", format!("{vox_offset} precedes header end")));
    }
    let start = vox_offset as usize;
    let len = geometry.len() * width;
    let payload = bytes
        .get(start..start + len)
        .ok_or_else(|| Error::format("payload", format!("need {len} bytes at offset {start}")))?;

    let elem = Reader {
        bytes: payload,
        big_endian,
    };
    let raw: Vec<f64> = (0..geometry.len())
        .map(|i| {
            let o = i * width;
            match datatype {
                DT_UINT8 => payload[o] as f64,
                DT_INT16 => elem.i16(o) as f64,
                DT_UINT16 => u16::from_le_bytes(elem.word(o)) as f64,
                DT_FLOAT32 => elem.f32(o) as f64,
                _ => f64::from_le_bytes(elem.word(o)),
            }
        })
        .collect();

    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    let values = if slope != 0.0 && slope.is_finite() && inter.is_finite() {
        raw.into_iter().map(|v| v * slope + inter).collect()
    } else {
        raw
    };
    Ok(Decoded { geometry, values })
}

/// Decodes an in-memory `.nii` image as scalars, applying `scl_slope`/`scl_inter`.
pub fn decode_nifti1(bytes: &[u8]) -> Result<ScalarVolume> {
    let d = decode(bytes)?;
    let voxels = d.values.into_iter().map(|v| v as f32).collect();
    ScalarVolume::with_geometry(d.geometry, voxels).map_err(|e| Error::format("payload", e.to_string()))
}

pub fn read_nifti1(path: &Path) -> Result<ScalarVolume> {
    decode_nifti1(&read_bytes(path)?)
}

pub fn read_nifti1_labels(path: &Path) -> Result<LabelMap> {
    let d = decode(&read_bytes(path)?)?;
    let mut labels = Vec::with_capacity(d.values.len());
    for v in d.values {
        if !(v.fract() == 0.0 && (0.0..=3.0).contains(&v)) {
            return Err(Error::format("label range", format!("value {v} is not one of 0..=3")));
        }
        labels.push(v as u8);
    }
    LabelMap::with_geometry(d.geometry, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: [i16; 3], datatype: i16, bitpix: i16) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dim = [3, dims[0], dims[1], dims[2], 1, 1, 1, 1];
        for (i, d) in dim.iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        h[72..74].copy_from_slice(&bitpix.to_le_bytes());
        for (i, p) in [1.0f32, 1.0, 1.0, 1.0].iter().enumerate() {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }

    #[test]
    fn rejects_wrong_magic_and_gzip() {
        let mut h = header([1, 1, 1], DT_UINT8, 8);
        h.push(0);
        h[344..348].copy_from_slice(b"n+2\0");
        assert!(matches!(decode_nifti1(&h), Err(Error::Format { field: "magic", .. })));
        h[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode_nifti1(&h), Err(Error::Format { field: "magic", .. })));
        assert!(matches!(
            decode_nifti1(&[0x1f, 0x8b, 8, 0]),
            Err(Error::Format { field: "compression", .. })
        ));
    }

    #[test]
    fn rejects_four_d() {
        let mut h = header([2, 1, 1], DT_UINT8, 8);
        h[40..42].copy_from_slice(&4i16.to_le_bytes());
        h[48..50].copy_from_slice(&3i16.to_le_bytes());
        h.extend_from_slice(&[0; 6]);
        assert!(matches!(decode_nifti1(&h), Err(Error::Format { field: "dim", .. })));
        // Trailing singleton dimensions are fine.
        h[48..50].copy_from_slice(&1i16.to_le_bytes());
        assert_eq!(decode_nifti1(&h).unwrap().dims(), [2, 1, 1]);
    }

    #[test]
    fn int16_and_big_endian() {
        let mut h = header([2, 1, 1], DT_INT16, 16);
        h.extend_from_slice(&(-5i16).to_le_bytes());
        h.extend_from_slice(&300i16.to_le_bytes());
        assert_eq!(decode_nifti1(&h).unwrap().voxels(), &[-5.0, 300.0]);

        // Same image written big-endian.
        let mut be = h.clone();
        be[0..4].copy_from_slice(&348i32.to_be_bytes());
        let dim = [3i16, 2, 1, 1, 1, 1, 1, 1];
        for (i, d) in dim.iter().enumerate() {
            be[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        be[70..72].copy_from_slice(&DT_INT16.to_be_bytes());
        for i in 0..4 {
            be[76 + 4 * i..80 + 4 * i].copy_from_slice(&1f32.to_be_bytes());
        }
        be[108..112].copy_from_slice(&352f32.to_be_bytes());
        be[352..354].copy_from_slice(&(-5i16).to_be_bytes());
        be[354..356].copy_from_slice(&300i16.to_be_bytes());
        assert_eq!(decode_nifti1(&be).unwrap().voxels(), &[-5.0, 300.0]);
    }

    #[test]
    fn truncated_payload() {
        let mut h = header([2, 2, 2], DT_FLOAT32, 32);
        h.extend_from_slice(&[0; 12]);
        assert!(matches!(decode_nifti1(&h), Err(Error::Format { field: "payload", .. })));
    }
}

//! MVOL: a minimal packed little-endian volume container.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "MVL1"
//!      4     1  kind (0 = scalar f32, 1 = label u8)
//!      5    12  dims, 3 x u32
//!     17    12  spacing, 3 x f32 (mm)
//!     29     -  payload, x fastest; f32 LE per voxel or one byte per label
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_bytes, write_atomic};
use crate::volume::{Geometry, LabelMap, ScalarVolume};

pub const MVOL_MAGIC: [u8; 4] = *b"MVL1";
pub const MVOL_HEADER_LEN: usize = 29;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvolKind {
    Scalar = 0,
    Label = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvolHeader {
    pub kind: MvolKind,
    pub dims: [u32; 3],
    pub spacing: [f32; 3],
}

impl MvolHeader {
    fn for_geometry(kind: MvolKind, g: &Geometry) -> Result<Self> {
        let mut dims = [0u32; 3];
        for (out, &d) in dims.iter_mut().zip(&g.dims) {
            *out = u32::try_from(d).map_err(|_| Error::format("dims", format!("{d} exceeds u32")))?;
        }
        Ok(Self {
            kind,
            dims,
            spacing: g.spacing.map(|s| s as f32),
        })
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MVOL_MAGIC);
        out.push(self.kind as u8);
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for s in self.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MVOL_HEADER_LEN {
            return Err(Error::format(
                "header",
                format!("{} bytes, need {MVOL_HEADER_LEN}", bytes.len()),
            ));
        }
        if bytes[0..4] != MVOL_MAGIC {
            return Err(Error::format("magic", format!("{:?} is not \"MVL1\"", &bytes[0..4])));
        }
        let kind = match bytes[4] {
            0 => MvolKind::Scalar,
            1 => MvolKind::Label,
            k => return Err(Error::format("kind", format!("{k} is not 0 or 1"))),
        };
        let word = |i: usize| {
            let o = 5 + 4 * i;
            [bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]
        };
        let dims = [0, 1, 2].map(|i| u32::from_le_bytes(word(i)));
        let spacing = [3, 4, 5].map(|i| f32::from_le_bytes(word(i)));
        if dims.contains(&0) {
            return Err(Error::format("dims", format!("{dims:?} has a zero extent")));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::format("spacing", format!("{spacing:?} must be positive")));
        }
        Ok(Self { kind, dims, spacing })
    }

    fn geometry(&self) -> Result<Geometry> {
        Geometry::new(
            self.dims.map(|d| d as usize),
            self.spacing.map(|s| s as f64),
        )
        .map_err(|e| Error::format("dims", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MvolData {
    Scalar(ScalarVolume),
    Label(LabelMap),
}

pub fn encode_volume(vol: &ScalarVolume) -> Result<Vec<u8>> {
    let header = MvolHeader::for_geometry(MvolKind::Scalar, vol.geometry())?;
    let mut out = Vec::with_capacity(MVOL_HEADER_LEN + 4 * vol.voxels().len());
    header.encode(&mut out);
    for v in vol.voxels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_labels(lm: &LabelMap) -> Result<Vec<u8>> {
    let header = MvolHeader::for_geometry(MvolKind::Label, lm.geometry())?;
    let mut out = Vec::with_capacity(MVOL_HEADER_LEN + lm.labels().len());
    header.encode(&mut out);
    out.extend_from_slice(lm.labels());
    Ok(out)
}

pub fn decode_mvol(bytes: &[u8]) -> Result<MvolData> {
    let header = MvolHeader::decode(bytes)?;
    let geometry = header.geometry()?;
    let payload = &bytes[MVOL_HEADER_LEN..];
    let width = match header.kind {
        MvolKind::Scalar => 4,
        MvolKind::Label => 1,
    };
    let expected = geometry.len() * width;
    if payload.len() != expected {
        return Err(Error::format(
            "payload",
            format!(
                "{} bytes for dims {:?}, expected {expected}",
                payload.len(),
                header.dims
            ),
        ));
    }
    match header.kind {
        MvolKind::Scalar => {
            let voxels = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ScalarVolume::with_geometry(geometry, voxels)
                .map(MvolData::Scalar)
                .map_err(|e| Error::format("payload", e.to_string()))
        }
        MvolKind::Label => LabelMap::with_geometry(geometry, payload.to_vec()).map(MvolData::Label),
    }
}

pub fn write_volume(path: &Path, vol: &ScalarVolume) -> Result<()> {
    write_atomic(path, &encode_volume(vol)?)
}

pub fn write_labels(path: &Path, lm: &LabelMap) -> Result<()> {
    write_atomic(path, &encode_labels(lm)?)
}

pub fn read_mvol(path: &Path) -> Result<MvolData> {
    decode_mvol(&read_bytes(path)?)
}

pub fn read_volume(path: &Path) -> Result<ScalarVolume> {
    match read_mvol(path)? {
        MvolData::Scalar(v) => Ok(v),
        MvolData::Label(_) => Err(Error::format("kind", "expected scalar volume, found labels")),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    match read_mvol(path)? {
        MvolData::Label(l) => Ok(l),
        MvolData::Scalar(_) => Err(Error::format("kind", "expected labels, found scalar volume")),
    }
}

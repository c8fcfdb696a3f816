//! On-disk formats: MVOL volumes, NIfTI-1 ingestion, cine manifests, and
//! JSON reports.

mod manifest;
mod mvol;
mod nifti;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub use manifest::{load_series, read_manifest, write_manifest, CineManifest};
pub(crate) use manifest::{load_labels_any, load_volume_any};
pub use mvol::{
    decode_mvol, encode_labels, encode_volume, read_labels, read_mvol, read_volume, write_labels,
    write_volume, MvolData, MvolHeader, MvolKind, MVOL_HEADER_LEN, MVOL_MAGIC,
};
pub use nifti::{decode_nifti1, read_nifti1, read_nifti1_labels, NIFTI1_HEADER_LEN};

/// Writes `bytes` through a sibling temporary file and a rename, so readers
/// never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Pretty JSON with a trailing newline; key order follows struct field order.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

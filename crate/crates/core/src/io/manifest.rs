//! Cine series manifest, a small TOML document:
//!
//! ```toml
//! subject_id = "case001"
//! vendor = "A"
//! center = "1"
//! es_index = 0
//! ed_index = 10
//! es_label = "label_000.mvol"
//! ed_label = "label_010.mvol"
//! frames = ["frame_000.mvol", "frame_001.mvol", "..."]
//! ```
//!
//! Relative paths resolve against the manifest's directory. Files ending in
//! `.nii` are read as NIfTI-1, everything else as MVOL.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_labels, read_nifti1, read_nifti1_labels, read_volume, write_atomic};
use crate::volume::{CineSeries, LabelMap, ScalarVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CineManifest {
    pub subject_id: String,
    pub vendor: String,
    pub center: String,
    pub es_index: usize,
    pub ed_index: usize,
    #[serde(rename = "es_label")]
    pub es_label_path: PathBuf,
    #[serde(rename = "ed_label")]
    pub ed_label_path: PathBuf,
    #[serde(rename = "frames")]
    pub frame_paths: Vec<PathBuf>,
}

impl CineManifest {
    /// Index and distinctness checks; does not touch the filesystem.
    pub fn validate_indices(&self) -> Result<()> {
        let n = self.frame_paths.len();
        if n == 0 {
            return Err(Error::Manifest("frames list is empty".into()));
        }
        if self.es_index == self.ed_index {
            return Err(Error::Manifest(format!(
                "es_index and ed_index are both {}",
                self.es_index
            )));
        }
        for (key, idx) in [("es_index", self.es_index), ("ed_index", self.ed_index)] {
            if idx >= n {
                return Err(Error::Manifest(format!(
                    "{key} {idx} out of range for {n} frames"
                )));
            }
        }
        Ok(())
    }

    fn all_paths(&self) -> impl Iterator<Item = &PathBuf> {
        self.frame_paths
            .iter()
            .chain([&self.es_label_path, &self.ed_label_path])
    }
}

pub fn read_manifest(path: &Path) -> Result<CineManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: CineManifest =
        toml::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {}", path.display(), e.message())))?;
    manifest.validate_indices()?;

    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    manifest.frame_paths.iter_mut().for_each(resolve);
    resolve(&mut manifest.es_label_path);
    resolve(&mut manifest.ed_label_path);

    if let Some(missing) = manifest.all_paths().find(|p| !p.is_file()) {
        return Err(Error::Manifest(format!(
            "referenced file {} does not exist",
            missing.display()
        )));
    }
    Ok(manifest)
}

/// Writes the manifest, storing paths under the manifest directory relative to it.
pub fn write_manifest(path: &Path, manifest: &CineManifest) -> Result<()> {
    manifest.validate_indices()?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &PathBuf| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.clone());
    let stored = CineManifest {
        es_label_path: rel(&manifest.es_label_path),
        ed_label_path: rel(&manifest.ed_label_path),
        frame_paths: manifest.frame_paths.iter().map(rel).collect(),
        ..manifest.clone()
    };
    let text = toml::to_string(&stored).map_err(|e| Error::Manifest(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

fn is_nifti(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("nii"))
}

pub(crate) fn load_volume_any(path: &Path) -> Result<ScalarVolume> {
    if is_nifti(path) {
        read_nifti1(path)
    } else {
        read_volume(path)
    }
}

pub(crate) fn load_labels_any(path: &Path) -> Result<LabelMap> {
    if is_nifti(path) {
        read_nifti1_labels(path)
    } else {
        read_labels(path)
    }
}

/// Loads every frame and both template labels referenced by `manifest`.
pub fn load_series(manifest: &CineManifest) -> Result<CineSeries> {
    let frames = manifest
        .frame_paths
        .iter()
        .map(|p| load_volume_any(p))
        .collect::<Result<Vec<_>>>()?;
    let series = CineSeries {
        subject_id: manifest.subject_id.clone(),
        vendor: manifest.vendor.clone(),
        center: manifest.center.clone(),
        frames,
        es_index: manifest.es_index,
        ed_index: manifest.ed_index,
        es_label: load_labels_any(&manifest.es_label_path)?,
        ed_label: load_labels_any(&manifest.ed_label_path)?,
    };
    series.validate()?;
    Ok(series)
}

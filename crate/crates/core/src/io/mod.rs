//! On-disk formats: float grids, the study manifest, and plane records.
//!
//! Study directory layout:
//!
//! ```text
//! manifest.json
//! images/<view>_<slice>.vphm
//! heatmaps/<target>/<view>_<slice>.vphm
//! ```
//!
//! Slice indices are zero-padded to three digits.

mod heatfile;
mod manifest;
mod record;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use heatfile::{HeatFile, HeatFileError, MAGIC};
pub use manifest::{
    load_manifest, save_manifest, SliceEntry, StudyManifest, TargetEntry, ViewEntry,
    MANIFEST_VERSION,
};
pub use record::{PlaneRecord, RECORD_VERSION};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed heat file: {source}")]
    HeatFormat {
        path: PathBuf,
        source: HeatFileError,
    },
    #[error("{path}: parse error: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("validation error at {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("missing payload {0}")]
    MissingPayload(PathBuf),
}

impl StudyError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StudyError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        StudyError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub fn slice_file_name(view: &str, slice: usize) -> String {
    format!("{view}_{slice:03}.vphm")
}

/// `<dir>/<target>/<view>_<slice>.vphm`
pub fn heatmap_path(dir: &Path, target: &str, view: &str, slice: usize) -> PathBuf {
    dir.join(target).join(slice_file_name(view, slice))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), StudyError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| StudyError::io(parent, e))?;
        }
    }
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| StudyError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StudyError> {
    let text = std::fs::read_to_string(path).map_err(|e| StudyError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| StudyError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

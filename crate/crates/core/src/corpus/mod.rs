//! Data and model persistence: WAV ingest, manifests, feature caches, unit
//! files, the `ZSU1` tensor container and a synthetic test corpus.

mod bundle;
mod cache;
mod manifest;
pub mod synthetic;
mod units;
mod wav;

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use bundle::{
    load_bundle, save_bundle, DType, ModelBundle, NamedTensor, BUNDLE_MAGIC, BUNDLE_VERSION,
};
pub use cache::{audio_checksum, FeatureCache};
pub use manifest::{validate_manifest, Manifest, ManifestEntry, ManifestIssue, MANIFEST_HEADER};
pub use units::{read_units, write_units, UnitFile};
pub use wav::{encode_wav, load_audio, load_wav, parse_wav, save_wav};

pub(crate) use bundle::crc64;

use crate::dsp::DspError;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("manifest has {} problem(s): {}", .0.len(), join_issues(.0))]
    Manifest(Vec<ManifestIssue>),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("bundle is corrupt: checksum {actual:#018x} does not match stored {expected:#018x}")]
    Checksum { expected: u64, actual: u64 },
    #[error("bundle version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

fn join_issues(issues: &[ManifestIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl CorpusError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
    let mut tmp =
        tempfile::NamedTempFile::new_in(parent).map_err(|e| CorpusError::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| CorpusError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CorpusError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| CorpusError::io(path, e.error))?;
    Ok(())
}

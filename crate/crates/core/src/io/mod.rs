//! File formats: PMAP pointmap records, ALN alignment results, PLY clouds
//! and JSON pose lists. All binary formats are little-endian.

mod aln;
mod bytes;
mod json;
mod ply;
mod pmap;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use aln::{decode_aln, encode_aln, read_aln, write_aln, ALN_MAGIC, ALN_VERSION};
pub use json::{poses_from_json, poses_to_json, read_json, write_json, PoseEntry, PoseList};
pub use ply::{cloud_from_pointmap, encode_ply, parse_ply, write_ply, PlyCloud, PlyFormat};
pub use pmap::{
    decode_pmap, encode_pmap, pair_file_name, pair_from_records, pair_to_records, read_pair_dir, read_pmap, write_pmap,
    PmapRecord, PMAP_MAGIC, PMAP_VERSION,
};

/// Malformed file contents, located by byte offset.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic at byte {offset}: expected {expected:?}")]
    BadMagic { offset: usize, expected: &'static str },
    #[error("unsupported version {version} at byte {offset}")]
    UnsupportedVersion { offset: usize, version: u32 },
    #[error("truncated at byte {offset}: need {expected} bytes, file has {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("invalid content at byte {offset}: {reason}")]
    Invalid { offset: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Content(String),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, source: FormatError) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| IoError::Content(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| IoError::io(path, e))
}

/// Kind of binary container, from its first four bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Pmap,
    Aln,
    Other,
}

pub fn sniff(bytes: &[u8]) -> FileKind {
    match bytes.get(..4) {
        Some(m) if m == PMAP_MAGIC => FileKind::Pmap,
        Some(m) if m == ALN_MAGIC => FileKind::Aln,
        _ => FileKind::Other,
    }
}

use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 over git's blob framing (`blob <len>\0<bytes>`), as in a
/// SHA-256 git repository's object ids.
pub fn git_blob_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// A file recorded in a report by role and base name; full paths are left
/// out so reruns in other directories produce identical reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub role: String,
    pub file: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn new(role: &str, path: &std::path::Path, bytes: &[u8]) -> Self {
        Self {
            role: role.to_string(),
            file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: git_blob_sha256(bytes),
        }
    }
}

//! Dataset acquisition and integrity checks.
//!
//! A tree is described by a `SHA256SUMS` manifest at its root, one line per
//! sample file: `<sha256 hex>  <path relative to root>`, sorted by path.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::dataset::{Split, NUM_DIGITS};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "SHA256SUMS";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tree_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for split in [Split::Train, Split::Test] {
        for d in 0..NUM_DIGITS {
            let dir = root.join(split.dir_name()).join(d.to_string());
            if !dir.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "bin") {
                    files.push(path.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Hashes every sample file under `root` and writes the manifest.
pub fn write_manifest(root: &Path) -> Result<usize> {
    let files = tree_files(root)?;
    let mut out = String::new();
    for rel in &files {
        let bytes = fs::read(root.join(rel))?;
        out.push_str(&format!("{}  {}\n", sha256_hex(&bytes), rel.display()));
    }
    fs::write(root.join(MANIFEST_NAME), out)?;
    Ok(files.len())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub checked: usize,
    pub ok: Vec<PathBuf>,
    pub mismatched: Vec<PathBuf>,
    pub missing: Vec<PathBuf>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.mismatched.is_empty() && self.missing.is_empty()
    }
}

/// Checks every file listed in the manifest against its recorded hash.
pub fn verify_tree(root: &Path) -> Result<VerifyReport> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory(root.to_path_buf()));
    }
    let manifest_path = root.join(MANIFEST_NAME);
    let manifest = fs::read_to_string(&manifest_path)
        .map_err(|source| Error::UnreadableFile { path: manifest_path.clone(), source })?;
    let mut report = VerifyReport::default();
    for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
        let (hash, rel) =
            line.split_once("  ").ok_or_else(|| Error::Config(format!("malformed manifest line: {line}")))?;
        let rel = PathBuf::from(rel);
        report.checked += 1;
        match fs::read(root.join(&rel)) {
            Ok(bytes) if sha256_hex(&bytes) == hash => report.ok.push(rel),
            Ok(_) => report.mismatched.push(rel),
            Err(_) => report.missing.push(rel),
        }
    }
    Ok(report)
}

/// Extracts `<anything>/<digit>/<name>.bin` entries of a zip archive into
/// `<root>/<split>/<digit>/<name>.bin`. Returns the number of files written.
pub fn extract_archive(archive: &[u8], root: &Path, split: Split) -> Result<usize> {
    let mut zip =
        zip::ZipArchive::new(Cursor::new(archive)).map_err(|e| Error::Network(format!("not a zip archive: {e}")))?;
    let mut written = 0;
    for k in 0..zip.len() {
        let mut entry = zip.by_index(k).map_err(|e| Error::Network(format!("corrupt archive entry {k}: {e}")))?;
        if entry.is_dir() {
            continue;
        }
        let Some(name) = entry.enclosed_name().map(Path::to_path_buf) else { continue };
        if name.extension().is_none_or(|e| e != "bin") {
            continue;
        }
        let Some(digit) = name
            .parent()
            .and_then(Path::file_name)
            .and_then(|d| d.to_str())
            .and_then(|d| d.parse::<u8>().ok())
            .filter(|&d| d < NUM_DIGITS)
        else {
            continue;
        };
        let dir = root.join(split.dir_name()).join(digit.to_string());
        fs::create_dir_all(&dir)?;
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut bytes)?;
        fs::write(dir.join(name.file_name().unwrap()), bytes)?;
        written += 1;
    }
    Ok(written)
}

/// Downloads a split archive, optionally checks its SHA-256, and extracts it.
pub fn download_split(url: &str, expected_sha256: Option<&str>, root: &Path, split: Split) -> Result<usize> {
    let response = ureq::get(url).call().map_err(|e| Error::Network(format!("{url}: {e}")))?;
    let mut body = Vec::new();
    response.into_reader().read_to_end(&mut body).map_err(|e| Error::Network(format!("{url}: {e}")))?;
    if let Some(expected) = expected_sha256 {
        if !sha256_hex(&body).eq_ignore_ascii_case(expected) {
            return Err(Error::ChecksumMismatch(PathBuf::from(url)));
        }
    }
    extract_archive(&body, root, split)
}

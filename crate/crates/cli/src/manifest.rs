//! Per-stage manifests: what a stage read, what it wrote and with which
//! parameters. A stage whose manifest still matches is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_DIR: &str = ".manifests";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub params: serde_json::Value,
    /// Path to hex SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = fs::File::open(path).map_err(CliError::io(path))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(CliError::io(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

pub fn hash_all(paths: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    use rayon::prelude::*;
    let hashes: Vec<(String, String)> = paths
        .par_iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect::<Result<_, CliError>>()?;
    Ok(hashes.into_iter().collect())
}

pub fn load(out: &Path, stage: &str) -> Option<Manifest> {
    let text = fs::read_to_string(manifest_path(out, stage)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn save(out: &Path, m: &Manifest) -> Result<(), CliError> {
    let path = manifest_path(out, &m.stage);
    let dir = path.parent().expect("manifest has a parent");
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(CliError::io(&path))
}

/// True when `previous` was written for the same parameters and inputs and
/// every output it lists is still on disk unchanged.
pub fn is_current(previous: &Manifest, params: &serde_json::Value, inputs: &BTreeMap<String, String>) -> bool {
    if previous.tool_version != TOOL_VERSION || &previous.params != params || &previous.inputs != inputs {
        return false;
    }
    previous
        .outputs
        .iter()
        .all(|(p, h)| sha256_file(Path::new(p)).map(|x| &x == h).unwrap_or(false))
}

//! Run manifests: what a stage read, what it wrote, and the hashes of both.
//!
//! A manifest sits in the same directory as the files it lists, named
//! `*.manifest.json`. Before a stage reads a file it looks for manifests in
//! that directory that list it and refuses to continue if the recorded hash
//! no longer matches.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use eegrisk::io_util::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path as given on the command line.
    pub path: String,
    /// File name; outputs live next to their manifest.
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub timings_s: BTreeMap<String, f64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Path>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config: config.map(|p| p.display().to_string()),
            seeds: BTreeMap::new(),
            timings_s: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        *self.timings_s.entry(stage.to_string()).or_default() += t0.elapsed().as_secs_f64();
        out
    }

    /// Verifies `path` against upstream manifests, then records it.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let a = artifact(path)?;
        verify_upstream(path, &a.sha256)?;
        self.inputs.push(a);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(artifact(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let bytes = serde_json::to_vec_pretty(self).map_err(eegrisk::Error::from)?;
        write_atomic(path, |w| w.write_all(&bytes))?;
        Ok(())
    }
}

/// `dir/<name>.manifest.json`
pub fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}{SUFFIX}"))
}

/// Sidecar manifest for a single file: `<file>.manifest.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{name}{SUFFIX}"))
}

pub fn sha256_file(path: &Path) -> CliResult<(String, u64)> {
    let mut f = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CliError::MissingInput(path.to_path_buf()),
        _ => eegrisk::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into(),
    })?;
    let mut h = Sha256::new();
    let n = io::copy(&mut f, &mut h).map_err(|e| eegrisk::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok((hex::encode(h.finalize()), n))
}

fn artifact(path: &Path) -> CliResult<Artifact> {
    let (sha256, bytes) = sha256_file(path)?;
    Ok(Artifact {
        path: path.display().to_string(),
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256,
        bytes,
    })
}

fn verify_upstream(path: &Path, actual: &str) -> CliResult<()> {
    let Some(name) = path.file_name().map(|n| n.to_string_lossy().into_owned()) else {
        return Ok(());
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    let mut manifests: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(SUFFIX))
        .collect();
    manifests.sort();
    for m in manifests {
        // Unreadable or foreign json files are not ours to judge.
        let Ok(text) = fs::read_to_string(&m) else {
            continue;
        };
        let Ok(man) = serde_json::from_str::<RunManifest>(&text) else {
            continue;
        };
        if let Some(out) = man.outputs.iter().find(|o| o.file == name) {
            if out.sha256 != actual {
                return Err(CliError::HashMismatch {
                    path: path.to_path_buf(),
                    manifest: m,
                    expected: out.sha256.clone(),
                    found: actual.to_string(),
                });
            }
        }
    }
    Ok(())
}

//! In-memory output set. Nothing touches the disk until every file of a run
//! has been produced; the manifest is written last.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Shortest round-trip decimal form; stable across runs and platforms.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Default)]
pub struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    pub fn csv<I>(&mut self, name: &str, comments: &[String], header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut buf = Vec::new();
        for c in comments {
            buf.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().context("csv buffer")?;
        self.files.insert(name.to_string(), bytes);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.insert(name.to_string(), bytes);
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: String) {
        self.files.insert(name.to_string(), body.into_bytes());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    /// Writes every file, then `manifest.json`. A stale manifest from an
    /// earlier run is removed first so a failed write never leaves one behind.
    pub fn commit(self, dir: &Path, mut manifest: Manifest) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("output: cannot create {}", dir.display()))?;
        let mpath = dir.join("manifest.json");
        if mpath.exists() {
            fs::remove_file(&mpath).with_context(|| format!("output: cannot remove {}", mpath.display()))?;
        }
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("output: cannot write {}", path.display()))?;
            manifest.files.insert(name.clone(), sha256_hex(bytes));
        }
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&mpath, bytes).with_context(|| format!("output: cannot write {}", mpath.display()))?;
        Ok(())
    }
}

/// Everything needed to reproduce a run and check its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Command-line values that override the config.
    pub overrides: BTreeMap<String, String>,
    pub files: BTreeMap<String, String>,
}

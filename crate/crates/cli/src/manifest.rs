//! Run manifest: resolved config, dataset checksums, seed, artifacts, times.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ram_core::train::RunConfig;
use ram_core::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_text: String,
    pub seed: u64,
    pub data_dir: PathBuf,
    /// File name → SHA-256 of every regular file in the dataset directory.
    pub dataset_sha256: BTreeMap<String, String>,
    pub options: serde_json::Value,
    pub artifacts: BTreeMap<String, PathBuf>,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: Option<f64>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn checksums(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            let digest = Sha256::digest(fs::read(entry.path())?);
            out.insert(entry.file_name().to_string_lossy().into_owned(), hex::encode(digest));
        }
    }
    Ok(out)
}

impl RunManifest {
    pub fn start(config: &RunConfig, data_dir: &Path) -> Result<Self> {
        Ok(Self {
            config: config.clone(),
            config_text: config.to_text(),
            seed: config.train.seed,
            data_dir: data_dir.to_path_buf(),
            dataset_sha256: checksums(data_dir)?,
            options: serde_json::Value::Null,
            artifacts: BTreeMap::new(),
            started: now(),
            finished: None,
        })
    }

    pub fn finish(&mut self) {
        self.finished = Some(now());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::Result;

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Replay record of one stage: the effective config, its hash, the seed and
/// the SHA-256 of every input and artifact. Wall-clock timing goes to a
/// separate `timing.json` so that manifests of identical runs are identical.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
}

pub struct StageRecorder {
    dir: PathBuf,
    manifest: Manifest,
}

impl StageRecorder {
    pub fn new(stage: &str, cfg: &RunConfig, dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            manifest: Manifest {
                stage: stage.into(),
                config_hash: cfg.hash(),
                seed: cfg.seed.unwrap_or(cfg.predictor.seed),
                config: cfg.effective_json(),
                inputs: BTreeMap::new(),
                artifacts: BTreeMap::new(),
            },
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let h = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    /// Registers a file already written under the stage directory.
    pub fn artifact(&mut self, name: &str) -> Result<()> {
        let h = sha256_file(&self.dir.join(name))?;
        self.manifest.artifacts.insert(name.into(), h);
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.artifact(name)
    }

    pub fn finish(self, elapsed: Duration) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serialises");
        fs::write(self.dir.join("manifest.json"), json)?;
        let timing = serde_json::json!({ "stage": self.manifest.stage, "seconds": elapsed.as_secs_f64() });
        fs::write(self.dir.join("timing.json"), serde_json::to_vec_pretty(&timing).unwrap())?;
        Ok(())
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use taesar::contrastive::{Preset, RegenerationConfig};
use taesar::predictor::{AdaptOptions, PredictorConfig};
use taesar::synthgen::GeneratorSpec;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Event file; defaults to the synth stage output under `out`.
    pub events: Option<PathBuf>,
    /// Domain catalog file; defaults alongside `events`.
    pub catalog: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            events: None,
            catalog: None,
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Keep at most this many recent events per user; 0 keeps everything.
    pub max_len: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { max_len: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub ks: Vec<usize>,
    /// Downstream training seeds for `compare`.
    pub seeds: Vec<u64>,
    pub filter_seen: bool,
    /// Batch size for the gradient-conflict diagnostic.
    pub conflict_batch_size: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            ks: vec![10, 20],
            seeds: vec![1, 2, 3],
            filter_seen: false,
            conflict_batch_size: 64,
        }
    }
}

/// Everything one run needs, read from a TOML file and overridden from the
/// command line.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every component seed when set.
    pub seed: Option<u64>,
    /// Name of the target domain; must match the catalog when set.
    pub target_domain: Option<String>,
    /// Ablation preset applied on top of `adapt` and `regeneration`.
    pub preset: Option<String>,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub synth: GeneratorSpec,
    pub predictor: PredictorConfig,
    pub adapt: AdaptOptions,
    pub regeneration: RegenerationConfig,
    pub evaluation: EvaluationSection,
}

/// Command-line values layered over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `dotted.key=value`, the value parsed as TOML (bare strings allowed).
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<String>,
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for s in &overrides.set {
            set_path(&mut table, s)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
        if let Some(s) = overrides.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &overrides.out {
            cfg.paths.out = o.clone();
        }
        if let Some(p) = &overrides.preset {
            cfg.preset = Some(p.clone());
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Applies the seed and preset and validates the sections.
    fn resolve(&mut self) -> Result<()> {
        if let Some(s) = self.seed {
            self.predictor.seed = s;
            self.regeneration.seed = s;
            self.synth.seed = s;
        }
        if let Some(name) = &self.preset {
            let preset = Preset::from_name(name).ok_or_else(|| {
                let known: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                CliError::config(format!("unknown preset `{name}` (known: {})", known.join(", ")))
            })?;
            preset.apply(&mut self.adapt, &mut self.regeneration);
        }
        self.predictor.validate()?;
        self.regeneration.validate()?;
        if self.evaluation.ks.is_empty() || self.evaluation.ks.contains(&0) {
            return Err(CliError::config("evaluation.ks must be non-empty and positive"));
        }
        if self.evaluation.conflict_batch_size == 0 {
            return Err(CliError::config("evaluation.conflict_batch_size must be positive"));
        }
        Ok(())
    }

    pub fn events_path(&self) -> PathBuf {
        self.paths
            .events
            .clone()
            .unwrap_or_else(|| self.paths.out.join("synth").join("events.tsv"))
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.paths.catalog.clone().unwrap_or_else(|| {
            self.events_path()
                .parent()
                .map(|p| p.join("catalog.tsv"))
                .unwrap_or_else(|| PathBuf::from("catalog.tsv"))
        })
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.paths.out.join(stage)
    }

    pub fn effective_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// SHA-256 of the effective config's canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.effective_json().to_string().as_bytes()))
    }
}

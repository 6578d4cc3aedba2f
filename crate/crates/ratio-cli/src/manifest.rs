//! Run manifests: one JSON file per run directory recording the resolved
//! configuration, artifact paths, and the fitted temperature. A manifest is
//! itself a valid `--config` input, so any stage can be re-driven from it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool_version: String,
    /// SHA-256 of the embedded config's canonical JSON; stages refuse to mix
    /// artifacts across differently-configured runs unless told otherwise.
    pub config_hash: String,
    pub seed: u64,
    /// Wall-clock creation time. `SOURCE_DATE_EPOCH` overrides it so reruns
    /// can be made byte-identical.
    pub created_unix: u64,
    /// Temperature fitted by `calibrate`; absent until that stage runs.
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Artifact paths relative to the manifest's directory, keyed by role.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

/// Canonical hash of a resolved config: struct fields serialize in
/// declaration order and maps sort their keys, so equal configs hash equal.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn creation_time() -> u64 {
    if let Ok(raw) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(fixed) = raw.parse::<u64>() {
            return fixed;
        }
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> RunManifest {
        RunManifest {
            schema: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(config),
            seed: config.seed,
            created_unix: creation_time(),
            temperature: None,
            artifacts: BTreeMap::new(),
            config: config.clone(),
        }
    }

    pub fn path_in(out_dir: &Path) -> PathBuf {
        out_dir.join(MANIFEST_FILE)
    }

    /// Loads the manifest of an existing run; a missing file is a runtime
    /// error telling the user which stage to run first.
    pub fn load(out_dir: &Path) -> Result<RunManifest> {
        Self::load_file(&Self::path_in(out_dir))
    }

    /// Loads from an explicit path; a directory resolves to its manifest.
    pub fn load_file(given: &Path) -> Result<RunManifest> {
        let path = if given.is_dir() {
            Self::path_in(given)
        } else {
            given.to_path_buf()
        };
        let text = fs::read_to_string(&path).map_err(|e| {
            CliError::Runtime(format!(
                "no run manifest at {} ({e}); run `ratio train` first",
                path.display()
            ))
        })?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let manifest: RunManifest =
            serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::from_json(&path, e))?;
        if manifest.schema != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{}: manifest schema {} unsupported (tool reads {})",
                path.display(),
                manifest.schema,
                SCHEMA_VERSION
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir)?;
        let mut json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("manifest serialization failed: {e}")))?;
        json.push('\n');
        fs::write(Self::path_in(out_dir), json)?;
        Ok(())
    }

    pub fn record_artifact(&mut self, role: &str, relative: &str) {
        self.artifacts.insert(role.to_string(), relative.to_string());
    }

    /// Absolute path of a recorded artifact; missing entries name the stage
    /// that would have produced them.
    pub fn artifact_path(&self, out_dir: &Path, role: &str, producer: &str) -> Result<PathBuf> {
        match self.artifacts.get(role) {
            Some(rel) => Ok(out_dir.join(rel)),
            None => Err(CliError::Runtime(format!(
                "manifest records no `{role}` artifact; run `ratio {producer}` first"
            ))),
        }
    }
}

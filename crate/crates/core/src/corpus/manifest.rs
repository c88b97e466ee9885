//! `manifest.json`: which artifacts each pipeline stage produced, with content
//! hashes so a later run can tell whether a stage can be skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::file_hash;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub artifacts: Vec<ArtifactRecord>,
    pub inputs_hash: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    /// Reads `manifest.json` from `dir`, or returns an empty manifest when the
    /// file does not exist yet.
    pub fn load_or_default(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| Error::json(path.display().to_string(), e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Writes via a temporary file and rename so readers never observe a
    /// partially written manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(".manifest.json.tmp");
        let body = serde_json::to_vec_pretty(self).map_err(|e| Error::json("manifest", e))?;
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(path, e))
    }

    /// Hashes the given artifacts (paths relative to `dir`) and records them
    /// under `stage`, replacing any earlier record.
    pub fn record(
        &mut self,
        dir: &Path,
        stage: &str,
        artifacts: &[&str],
        inputs_hash: String,
        config_hash: String,
        seed: u64,
    ) -> Result<()> {
        let mut recs = Vec::with_capacity(artifacts.len());
        for a in artifacts {
            recs.push(ArtifactRecord {
                path: (*a).to_string(),
                sha256: file_hash(&dir.join(a))?,
            });
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                artifacts: recs,
                inputs_hash,
                config_hash,
                seed,
            },
        );
        Ok(())
    }

    /// True when `stage` was recorded with the same keys and every artifact still
    /// matches its hash.
    pub fn is_fresh(
        &self,
        dir: &Path,
        stage: &str,
        inputs_hash: &str,
        config_hash: &str,
        seed: u64,
    ) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        rec.inputs_hash == inputs_hash
            && rec.config_hash == config_hash
            && rec.seed == seed
            && verify_artifacts(dir, &rec.artifacts).is_ok()
    }

    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (stage, rec) in &self.stages {
            verify_artifacts(dir, &rec.artifacts)
                .map_err(|e| Error::Manifest(format!("stage {stage}: {e}")))?;
        }
        Ok(())
    }

    pub fn artifact_hash(&self, stage: &str, path: &str) -> Option<&str> {
        self.stages
            .get(stage)?
            .artifacts
            .iter()
            .find(|a| a.path == path)
            .map(|a| a.sha256.as_str())
    }
}

fn verify_artifacts(dir: &Path, artifacts: &[ArtifactRecord]) -> std::result::Result<(), String> {
    for a in artifacts {
        let p = dir.join(&a.path);
        let h = file_hash(&p).map_err(|e| e.to_string())?;
        if h != a.sha256 {
            return Err(format!("{} changed since it was recorded", a.path));
        }
    }
    Ok(())
}

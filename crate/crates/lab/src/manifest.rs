//! Run manifest: resolved configuration, value provenance, timing and
//! output checksums, written as TOML with sorted keys.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::config::LoadedConfig;
use crate::LabError;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

impl RunStatus {
    fn name(self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Complete => "complete",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    path: PathBuf,
    loaded: LoadedConfig,
    started: SystemTime,
    status: RunStatus,
    error: Option<String>,
    outputs: Vec<PathBuf>,
    notes: Vec<String>,
}

fn unix_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String, LabError> {
    let bytes = std::fs::read(path).map_err(|source| LabError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    /// Creates the manifest in `out_dir` and writes it with status `running`.
    pub fn begin(out_dir: &Path, loaded: &LoadedConfig) -> Result<Self, LabError> {
        let manifest = RunManifest {
            path: out_dir.join(MANIFEST_FILE),
            loaded: loaded.clone(),
            started: SystemTime::now(),
            status: RunStatus::Running,
            error: None,
            outputs: Vec::new(),
            notes: Vec::new(),
        };
        manifest.write()?;
        Ok(manifest)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn finish(&mut self, outputs: &[PathBuf], notes: &[String]) -> Result<(), LabError> {
        self.status = RunStatus::Complete;
        self.outputs = outputs.to_vec();
        self.notes = notes.to_vec();
        self.write()
    }

    pub fn fail(&mut self, error: &LabError) -> Result<(), LabError> {
        self.status = RunStatus::Failed;
        self.error = Some(error.to_string());
        self.write()
    }

    fn render(&self) -> Result<String, LabError> {
        let now = SystemTime::now();
        let mut run = Table::new();
        run.insert("status".into(), Value::String(self.status.name().into()));
        run.insert("artifact_version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
        run.insert("started_unix".into(), Value::Float(unix_seconds(self.started)));
        run.insert("updated_unix".into(), Value::Float(unix_seconds(now)));
        let wall = now.duration_since(self.started).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        run.insert("wall_seconds".into(), Value::Float(wall));
        run.insert(
            "parallel_build".into(),
            Value::Boolean(snlse_core::exec::parallel_enabled()),
        );
        if let Some(file) = &self.loaded.file {
            run.insert("config_file".into(), Value::String(file.display().to_string()));
        }
        if let Some(e) = &self.error {
            run.insert("error".into(), Value::String(e.clone()));
        }

        let mut provenance = Table::new();
        for (key, source) in &self.loaded.provenance {
            provenance.insert(key.clone(), Value::try_from(source).expect("plain enum"));
        }

        let mut overrides = Table::new();
        for (key, (file, flag)) in &self.loaded.conflicts {
            let mut both = Table::new();
            both.insert("file".into(), file.clone());
            both.insert("flag".into(), flag.clone());
            overrides.insert(key.clone(), Value::Table(both));
        }

        let mut outputs = Table::new();
        for path in &self.outputs {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            outputs.insert(name, Value::String(sha256_file(path)?));
        }

        let mut doc = Table::new();
        doc.insert("run".into(), Value::Table(run));
        doc.insert("config".into(), Value::Table(self.loaded.resolved.clone()));
        doc.insert("provenance".into(), Value::Table(provenance));
        doc.insert("overrides".into(), Value::Table(overrides));
        doc.insert("outputs".into(), Value::Table(outputs));
        doc.insert(
            "notes".into(),
            Value::Array(self.notes.iter().cloned().map(Value::String).collect()),
        );
        toml::to_string(&doc).map_err(|e| LabError::Config(format!("rendering manifest: {e}")))
    }

    fn write(&self) -> Result<(), LabError> {
        let text = self.render()?;
        std::fs::write(&self.path, text).map_err(|source| LabError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{load_config, ConfigSources, Experiment};

    #[test]
    fn manifest_records_defaults_overrides_and_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("c.toml");
        std::fs::write(&cfg_path, "[stats]\npaths = 3\n").unwrap();
        let loaded = load_config(
            Experiment::Converge,
            &ConfigSources {
                file: Some(cfg_path),
                overrides: vec!["stats.paths=4".into()],
                ..ConfigSources::default()
            },
        )
        .unwrap();
        let mut m = RunManifest::begin(dir.path(), &loaded).unwrap();
        let first: Table = std::fs::read_to_string(m.path()).unwrap().parse().unwrap();
        assert_eq!(first["run"]["status"].as_str(), Some("running"));

        let out = dir.path().join("x.csv");
        std::fs::write(&out, "abc").unwrap();
        m.finish(&[out], &["note".into()]).unwrap();
        let done: Table = std::fs::read_to_string(m.path()).unwrap().parse().unwrap();
        assert_eq!(done["run"]["status"].as_str(), Some("complete"));
        assert_eq!(
            done["outputs"]["x.csv"].as_str(),
            Some("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")
        );
        assert_eq!(done["provenance"]["grid.modes"].as_str(), Some("default"));
        assert_eq!(done["overrides"]["stats.paths"]["file"].as_integer(), Some(3));
        assert_eq!(done["overrides"]["stats.paths"]["flag"].as_integer(), Some(4));
        assert_eq!(done["config"]["grid"]["modes"].as_integer(), Some(64));
    }
}

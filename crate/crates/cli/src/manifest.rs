//! Run manifests: enough metadata next to every output file to re-run the
//! command bit-identically (modulo timestamps).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub command: Vec<String>,
    pub created_utc: String,
    pub seed: Option<u64>,
    pub model_id: Option<String>,
    pub inputs: Vec<InputHash>,
    pub resolved_config: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = fs::File::open(path)
        .map_err(|e| CliError::Validation(format!("cannot hash {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let k = file.read(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(subcommand: &str, resolved_config: serde_json::Value) -> RunManifest {
        RunManifest {
            schema: "covadj.manifest/v1",
            tool: "covadj",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            command: std::env::args().collect(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            seed: None,
            model_id: None,
            inputs: Vec::new(),
            resolved_config,
        }
    }

    pub fn with_input(mut self, path: &Path) -> Result<RunManifest, CliError> {
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> RunManifest {
        self.seed = Some(seed);
        self
    }

    pub fn with_model_id(mut self, id: &str) -> RunManifest {
        self.model_id = Some(id.to_string());
        self
    }

    /// Location of the manifest that accompanies `out`.
    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }

    pub fn write_next_to(&self, out: &Path) -> Result<(), CliError> {
        let path = RunManifest::path_for(out);
        let body = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, body)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

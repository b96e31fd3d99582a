use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Record of one run, sufficient to repeat it with `ebm replay`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub code_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn default_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

pub fn report_path(out: &Path) -> PathBuf {
    sibling(out, "report.ndjson")
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Arguments with every `--out` and `--manifest` replaced when `out` is given.
    pub fn replay_argv(&self, out: Option<&Path>) -> Vec<String> {
        let Some(out) = out else { return self.argv.clone() };
        let mut argv = vec![];
        let mut skip_next = false;
        for arg in &self.argv {
            if skip_next {
                skip_next = false;
                continue;
            }
            if arg == "--out" || arg == "--manifest" {
                skip_next = true;
                continue;
            }
            if arg.starts_with("--out=") || arg.starts_with("--manifest=") {
                continue;
            }
            argv.push(arg.clone());
        }
        argv.push("--out".into());
        argv.push(out.to_string_lossy().into_owned());
        argv
    }
}

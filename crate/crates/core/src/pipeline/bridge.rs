//! File-contract bridge to an external translation model.
//!
//! Inputs are copied into `in_dir` as `<scene_id>.<ext>`; the command
//! template runs once through `sh -c` with `{in_dir}` and `{out_dir}`
//! replaced by shell-quoted paths, and must leave `<scene_id>.<ext>` in
//! `out_dir` for every input.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_file;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("command template must contain {{in_dir}} and {{out_dir}}")]
    BadTemplate,
    #[error("external command failed ({status}); stderr: {stderr}")]
    CommandFailed { status: String, stdout: String, stderr: String },
    #[error("external command produced no output for: {}", missing.join(", "))]
    IncompleteOutputs { missing: Vec<String> },
    #[error("bridge I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeInput {
    pub scene_id: String,
    pub source: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeItem {
    pub scene_id: String,
    pub input: PathBuf,
    pub output: PathBuf,
    pub input_sha256: String,
    pub output_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeOutcome {
    pub command: String,
    pub items: Vec<BridgeItem>,
    pub stdout: String,
    pub stderr: String,
}

/// POSIX single-quote quoting.
pub fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

pub fn render_command(template: &str, in_dir: &Path, out_dir: &Path) -> Result<String, BridgeError> {
    if !template.contains("{in_dir}") || !template.contains("{out_dir}") {
        return Err(BridgeError::BadTemplate);
    }
    Ok(template
        .replace("{in_dir}", &shell_quote(in_dir))
        .replace("{out_dir}", &shell_quote(out_dir)))
}

fn fresh_dir(dir: &Path) -> std::io::Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)
}

/// Runs the bridge in `workdir/in` and `workdir/out`. Paths in the returned
/// items are relative to `workdir`.
pub fn bridge_translate(
    inputs: &[BridgeInput],
    template: &str,
    workdir: &Path,
    extension: &str,
) -> Result<BridgeOutcome, BridgeError> {
    let in_dir = workdir.join("in");
    let out_dir = workdir.join("out");
    let command = render_command(template, &in_dir, &out_dir)?;
    fresh_dir(&in_dir)?;
    fresh_dir(&out_dir)?;
    let name = |id: &str| format!("{id}.{extension}");
    for input in inputs {
        std::fs::copy(&input.source, in_dir.join(name(&input.scene_id)))?;
    }

    tracing::info!(%command, inputs = inputs.len(), "running external model");
    let output = Command::new("sh").arg("-c").arg(&command).output()?;
    let stdout = String::from_utf8_lossy(&output.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
    if !output.status.success() {
        return Err(BridgeError::CommandFailed {
            status: output.status.to_string(),
            stdout,
            stderr,
        });
    }

    let missing: Vec<String> = inputs
        .iter()
        .filter(|i| !out_dir.join(name(&i.scene_id)).is_file())
        .map(|i| i.scene_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(BridgeError::IncompleteOutputs { missing });
    }
    let items = inputs
        .iter()
        .map(|i| {
            let file = name(&i.scene_id);
            Ok(BridgeItem {
                scene_id: i.scene_id.clone(),
                input: Path::new("in").join(&file),
                output: Path::new("out").join(&file),
                input_sha256: sha256_file(&in_dir.join(&file))?,
                output_sha256: sha256_file(&out_dir.join(&file))?,
            })
        })
        .collect::<Result<_, std::io::Error>>()?;
    Ok(BridgeOutcome {
        command,
        items,
        stdout,
        stderr,
    })
}

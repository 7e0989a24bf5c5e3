use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::formats::write_json;
use crate::{Error, SCHEMA_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of the command that produced an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    pub config_paths: Vec<String>,
    pub seed: Option<u64>,
    pub output_directory: String,
    /// RFC 3339, UTC.
    pub created_at: String,
    pub tool_version: String,
    /// Files written next to the manifest.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, out: &Path) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            args,
            config_paths: Vec::new(),
            seed: None,
            output_directory: out.display().to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
        }
    }

    /// Writes `manifest.json` into `dir`, replacing any earlier one.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

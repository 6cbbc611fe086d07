//! Versioned JSON model file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use switchsel_core::Model;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    /// RFC 3339 timestamp.
    pub created_at: String,
    pub config: RunConfig,
    pub model: Model,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

impl ModelFile {
    pub fn new(model: Model, config: RunConfig, created_at: String) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            created_at,
            config,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| CliError::Model(format!("not a model file: {e}")))?;
        match probe.schema_version {
            Some(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CliError::Model(format!(
                    "model schema version {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(CliError::Model("model file has no schema_version".into())),
        }
        let file: Self = serde_json::from_str(text).map_err(|e| CliError::Model(format!("malformed model file: {e}")))?;
        file.model.validate().map_err(|e| CliError::Model(e.to_string()))?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_are_model_errors() {
        let e = ModelFile::from_json("{\"schema_version\": 99}").unwrap_err();
        assert!(matches!(e, CliError::Model(ref m) if m.contains("99")));
        assert!(matches!(ModelFile::from_json("{}"), Err(CliError::Model(_))));
        assert!(matches!(ModelFile::from_json("not json"), Err(CliError::Model(_))));
        assert!(matches!(
            ModelFile::from_json("{\"schema_version\": 1}"),
            Err(CliError::Model(_))
        ));
    }
}

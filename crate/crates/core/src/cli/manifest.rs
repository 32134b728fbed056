use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::canonical::to_canonical_json;
use crate::schema::ClassSchema;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    /// Hex SHA-256 of the file content.
    pub digest: String,
}

impl InputDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        InputDigest {
            path: path.display().to_string(),
            digest: hex::encode(Sha256::digest(bytes)),
        }
    }
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Hex SHA-256 of the canonical effective configuration (subcommand
    /// options, schema and seed).
    pub config_digest: String,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
}

#[derive(Serialize)]
struct EffectiveConfig<'a, C: Serialize> {
    command: &'a C,
    schema_digest: String,
    seed: Option<u64>,
}

impl RunManifest {
    pub fn new<C: Serialize>(
        command_line: &str,
        config: &C,
        schema: &ClassSchema,
        seed: Option<u64>,
        inputs: Vec<InputDigest>,
        outputs: Vec<String>,
    ) -> Self {
        let effective = EffectiveConfig {
            command: config,
            schema_digest: schema.digest(),
            seed,
        };
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command_line.to_string(),
            config_digest: hex::encode(Sha256::digest(to_canonical_json(&effective).as_bytes())),
            inputs,
            seed,
            outputs,
        }
    }
}

//! Self-contained JSON checkpoints and certificate files.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::config::RunConfig;
use super::{CliError, Exit};
use crate::boundprop::Region;
use crate::certify::{Certificate, CERTIFICATE_SCHEMA_VERSION};
use crate::nets::PACKING_ORDER;
use crate::problem::ContractionProblem;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    /// Layout of the packed upper-triangular warm start.
    pub packing_order: String,
    pub config: RunConfig,
    pub problem: ContractionProblem,
    /// Region of the last stage that reached zero loss, or of the current
    /// stage if none did.
    pub region: Region,
    pub stage: u32,
    pub certified_stage: Option<u32>,
    pub step: u64,
    /// Generator state after initialization: the config seed plus the
    /// position in its stream.
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn new(
        config: &RunConfig,
        problem: &ContractionProblem,
        region: Region,
        stage: u32,
        certified_stage: Option<u32>,
        step: u64,
        rng: &ChaCha8Rng,
    ) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            packing_order: PACKING_ORDER.to_string(),
            config: config.clone(),
            problem: problem.clone(),
            region,
            stage,
            certified_stage,
            step,
            rng_seed: config.seed,
            rng_word_pos: rng.get_word_pos(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let ck: Checkpoint = read_json(path, |v| check_version(v, CHECKPOINT_SCHEMA_VERSION))?;
        if ck.packing_order != PACKING_ORDER {
            return Err(CliError::new(
                Exit::Io,
                format!("{}: unsupported packing order '{}'", path.display(), ck.packing_order),
            ));
        }
        let n = ck.problem.state_dim();
        if ck.region.dim() != n || ck.problem.policy.state_dim() != n {
            return Err(CliError::new(
                Exit::Io,
                format!("{}: checkpoint dimensions are inconsistent", path.display()),
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, self)
    }
}

pub fn load_certificate(path: &Path) -> Result<Certificate, CliError> {
    read_json(path, |v| check_version(v, CERTIFICATE_SCHEMA_VERSION))
}

fn check_version(value: &serde_json::Value, supported: u32) -> Result<(), String> {
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == supported as u64 => Ok(()),
        Some(v) => Err(format!("schema version {v} is not supported (expected {supported})")),
        None => Err("missing schema_version".into()),
    }
}

fn read_json<T: DeserializeOwned>(
    path: &Path,
    check: impl Fn(&serde_json::Value) -> Result<(), String>,
) -> Result<T, CliError> {
    let io = |m: String| CliError::new(Exit::Io, format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
    check(&value).map_err(io)?;
    serde_json::from_value(value).map_err(|e| io(e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::new(Exit::Io, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::new(Exit::Io, format!("cannot write {}: {e}", path.display())))
}

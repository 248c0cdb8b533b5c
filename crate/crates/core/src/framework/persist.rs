//! Saved reader directories:
//!
//! ```text
//! config.toml   format version, task and reader settings
//! vocab.txt     one token per line in id order
//! arch.yaml     architecture description
//! params.ckpt   parameters in the engine checkpoint format
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Reader, ReaderConfig, ReaderError, Task};
use crate::engine::{checkpoint, EngineError, ParamStore};
use crate::textpipe::Vocab;

pub const FORMAT_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.toml";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const ARCH_FILE: &str = "arch.yaml";
pub const PARAMS_FILE: &str = "params.ckpt";

#[derive(Debug, Serialize, Deserialize)]
struct SavedConfig {
    format_version: u32,
    task: Task,
    reader: ReaderConfig,
}

pub(crate) fn read_file(dir: &Path, name: &str) -> Result<String, ReaderError> {
    fs::read_to_string(dir.join(name))
        .map_err(|e| ReaderError::CorruptCheckpoint(format!("{name}: {e}")))
}

pub(crate) fn write_config(
    dir: &Path,
    task: Task,
    config: &ReaderConfig,
) -> Result<(), ReaderError> {
    fs::create_dir_all(dir)?;
    let saved = SavedConfig {
        format_version: FORMAT_VERSION,
        task,
        reader: config.clone(),
    };
    let text = toml::to_string(&saved).map_err(|e| ReaderError::Config(e.to_string()))?;
    fs::write(dir.join(CONFIG_FILE), text)?;
    Ok(())
}

/// Task and settings of a saved directory, after the version check.
pub fn read_config(dir: &Path) -> Result<(Task, ReaderConfig), ReaderError> {
    let text = read_file(dir, CONFIG_FILE)?;
    let saved: SavedConfig = toml::from_str(&text)
        .map_err(|e| ReaderError::CorruptCheckpoint(format!("{CONFIG_FILE}: {e}")))?;
    if saved.format_version != FORMAT_VERSION {
        return Err(ReaderError::VersionMismatch {
            found: saved.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok((saved.task, saved.reader))
}

pub(crate) fn write_params(dir: &Path, params: &ParamStore) -> Result<(), ReaderError> {
    checkpoint::save(&dir.join(PARAMS_FILE), params)?;
    Ok(())
}

pub(crate) fn read_params(dir: &Path) -> Result<ParamStore, ReaderError> {
    let path = dir.join(PARAMS_FILE);
    if !path.exists() {
        return Err(ReaderError::CorruptCheckpoint(format!(
            "{PARAMS_FILE}: missing"
        )));
    }
    checkpoint::load(&path).map_err(|e| match e {
        EngineError::CorruptCheckpoint(m) => {
            ReaderError::CorruptCheckpoint(format!("{PARAMS_FILE}: {m}"))
        }
        EngineError::VersionMismatch { found, expected } => ReaderError::VersionMismatch {
            found: found.parse().unwrap_or(0),
            expected: expected.parse().unwrap_or(FORMAT_VERSION),
        },
        other => other.into(),
    })
}

/// Writes config, vocabulary, architecture and parameters of a set-up reader.
pub fn save(reader: &Reader, dir: &Path) -> Result<(), ReaderError> {
    if !reader.is_ready() {
        return Err(ReaderError::NotSetup);
    }
    let vocab = reader.input().vocab().ok_or(ReaderError::NotSetup)?;
    write_config(dir, reader.task, &reader.config)?;
    fs::write(dir.join(VOCAB_FILE), vocab.to_text())?;
    fs::write(dir.join(ARCH_FILE), reader.model().arch_text())?;
    write_params(dir, reader.model().params())
}

/// Rebuilds a reader written by [`save`].
pub fn load(dir: &Path) -> Result<Reader, ReaderError> {
    let (task, config) = read_config(dir)?;
    if task == Task::Lp {
        return Err(ReaderError::Config(
            "link-prediction models are loaded with zoo::load_lp".into(),
        ));
    }
    let vocab = Vocab::from_text(&read_file(dir, VOCAB_FILE)?, config.lowercase)
        .map_err(|e| ReaderError::CorruptCheckpoint(format!("{VOCAB_FILE}: {e}")))?;
    let arch = read_file(dir, ARCH_FILE)?;
    let params = read_params(dir)?;
    let mut reader = crate::zoo::text_reader(task, &arch, config)?;
    reader.restore(vocab, params)?;
    Ok(reader)
}

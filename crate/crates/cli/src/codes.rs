use std::path::{Path, PathBuf};

use lrsim_data::{CodeSequence, ControlStats, EpisodeEntry};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const CODE_INDEX_FILE: &str = "codes.json";

/// Index of a directory written by `encode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeIndex {
    pub episodes: Vec<EpisodeEntry>,
    /// Raw-control statistics of the training episodes.
    pub controls: ControlStats,
    pub latent_dim: usize,
    pub rate_hz: f64,
    /// SHA-256 of the autoencoder checkpoint that produced the codes.
    pub autoencoder_sha256: String,
}

impl CodeIndex {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(CODE_INDEX_FILE);
        let text = serde_json::to_string_pretty(self).expect("index serializes");
        lrsim_nn::container::write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Accepts the index file or its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let file = if path.is_dir() { path.join(CODE_INDEX_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(CliError::io(&file))?;
        let index = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
        Ok((index, file.parent().map(Path::to_path_buf).unwrap_or_default()))
    }

    pub fn load_split(&self, dir: &Path, heldout: bool) -> Result<Vec<CodeSequence>> {
        self.episodes
            .iter()
            .filter(|e| e.heldout == heldout)
            .map(|e| {
                let seq = CodeSequence::load(&dir.join(&e.path))?;
                if seq.dim != self.latent_dim || seq.len() != e.frames {
                    return Err(CliError::Usage(format!(
                        "{} holds {} codes of dimension {}; index says {} of {}",
                        e.path,
                        seq.len(),
                        seq.dim,
                        e.frames,
                        self.latent_dim
                    )));
                }
                Ok(seq)
            })
            .collect()
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

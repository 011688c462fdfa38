use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::episode::{Episode, Geometry};
use crate::error::{DataError, Result};
use crate::window::ControlStats;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    /// Reserved for evaluation; never used for training.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub heldout: bool,
}

/// Dataset index: episode files, control normalization, geometry and rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub episodes: Vec<EpisodeEntry>,
    pub controls: ControlStats,
    pub geometry: Geometry,
    pub rate_hz: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| DataError::Input(e.to_string()))?;
        lrsim_nn::container::write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Accepts either the manifest file or its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|source| DataError::Io { path: file.display().to_string(), source })?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| DataError::Input(format!("{}: {e}", file.display())))?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }

    pub fn split(&self, heldout: bool) -> Manifest {
        Manifest { episodes: self.episodes.iter().filter(|e| e.heldout == heldout).cloned().collect(), ..self.clone() }
    }

    pub fn episode_paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.episodes.iter().map(|e| dir.join(&e.path)).collect()
    }

    /// Loads every episode and checks it against the recorded counts and geometry.
    pub fn load_episodes(&self, dir: &Path) -> Result<Vec<Episode>> {
        self.episodes
            .iter()
            .map(|entry| {
                let ep = Episode::load(&dir.join(&entry.path))?;
                if ep.len() != entry.frames || ep.geometry != self.geometry {
                    return Err(DataError::Input(format!(
                        "{} holds {} frames of {:?}; manifest says {} of {:?}",
                        entry.path,
                        ep.len(),
                        ep.geometry,
                        entry.frames,
                        self.geometry
                    )));
                }
                Ok(ep)
            })
            .collect()
    }
}

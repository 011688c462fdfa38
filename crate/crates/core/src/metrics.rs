use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::{io_err, Result};

/// Append-only CSV log whose first column is a step counter.
pub struct CsvLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvLog {
    /// Creates the file with `header`, or reopens it keeping only rows whose
    /// step is at most `keep_through` (drops rows logged after a checkpoint).
    pub fn open(path: &Path, header: &[&str], keep_through: Option<u64>) -> Result<Self> {
        let kept = match keep_through {
            Some(limit) if path.exists() => {
                let mut reader = csv::Reader::from_path(path)?;
                let mut rows = Vec::new();
                for rec in reader.records() {
                    let rec = rec?;
                    let step: u64 = rec.get(0).and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
                    if step <= limit {
                        rows.push(rec);
                    }
                }
                rows
            }
            _ => Vec::new(),
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        for r in &kept {
            writer.write_record(r)?;
        }
        writer.flush().map_err(|e| io_err(path, e))?;
        Ok(CsvLog { path: path.to_path_buf(), writer })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(CsvLog { path: path.to_path_buf(), writer: csv::WriterBuilder::new().has_headers(false).from_writer(file) })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| io_err(&self.path, e))
    }
}

/// Hex SHA-256 of a serializable value's JSON form.
pub fn config_hash<S: serde::Serialize>(value: &S) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

//! Output staging: every command builds its files in memory first, then
//! commits them all at once together with a run manifest. A failure anywhere
//! before the commit therefore leaves no partial outputs on disk.

use std::path::{Path, PathBuf};

use capgate::{Error, Result};
use sha2::{Digest, Sha256};

/// One output file in a committed run.
#[derive(Debug, serde::Serialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Record of a completed run: enough to reproduce it bit-exactly (command,
/// full parameters, seed, version) plus integrity digests of every file the
/// run wrote. Timestamps are informational and excluded from any
/// byte-identity comparison between runs.
#[derive(Debug, serde::Serialize)]
pub struct RunManifest {
    pub command: String,
    pub params: serde_json::Value,
    pub base_seed: u64,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputDigest>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// In-memory set of files a command wants to write.
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
    stdout_payload: Option<String>,
}

impl OutputSet {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OutputSet {
            dir: dir.into(),
            files: Vec::new(),
            stdout_payload: None,
        }
    }

    /// Stages a pretty-printed JSON file.
    pub fn add_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| Error::Computation(format!("serializing {name}: {e}")))?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    /// Stages a text file (CSV, gnuplot script, …).
    pub fn add_text(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content.into_bytes()));
    }

    /// Additionally print this JSON payload to stdout after a successful
    /// commit (used by `margin` and `sigma-c`).
    pub fn set_stdout(&mut self, payload: String) {
        self.stdout_payload = Some(payload);
    }

    /// Writes all staged files, then the manifest, then the stdout payload.
    /// If any write fails, files already written by this call are removed.
    pub fn commit(
        self,
        command: &str,
        params: serde_json::Value,
        base_seed: u64,
        started_at: chrono::DateTime<chrono::Utc>,
    ) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;

        let outputs: Vec<OutputDigest> = self
            .files
            .iter()
            .map(|(name, bytes)| OutputDigest {
                file: name.clone(),
                sha256: format!("{:x}", Sha256::digest(bytes)),
                bytes: bytes.len(),
            })
            .collect();

        let mut written: Vec<PathBuf> = Vec::new();
        let write_all = || -> Result<()> {
            for (name, bytes) in &self.files {
                let path = self.dir.join(name);
                std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
                written.push(path);
            }
            let manifest = RunManifest {
                command: command.to_string(),
                params,
                base_seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_at: started_at.to_rfc3339(),
                finished_at: chrono::Utc::now().to_rfc3339(),
                outputs,
            };
            let path = self.dir.join("manifest.json");
            let mut bytes = serde_json::to_vec_pretty(&manifest)
                .map_err(|e| Error::Computation(format!("serializing manifest: {e}")))?;
            bytes.push(b'\n');
            std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
            written.push(path);
            Ok(())
        };
        if let Err(e) = write_all() {
            for path in written {
                let _ = std::fs::remove_file(path);
            }
            return Err(e);
        }

        for (name, _) in &self.files {
            eprintln!("wrote {}", self.dir.join(name).display());
        }
        eprintln!("wrote {}", self.dir.join("manifest.json").display());
        if let Some(payload) = self.stdout_payload {
            println!("{payload}");
        }
        Ok(())
    }
}

/// Formats a float for CSV cells: shortest representation that parses back to
/// the identical value.
pub fn csv_num(v: f64) -> String {
    format!("{v}")
}

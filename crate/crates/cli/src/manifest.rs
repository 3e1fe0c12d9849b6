//! Run directories: every file written through [`RunDir`] is hashed into
//! `manifest.json`, next to the resolved config and its checksum.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{io_error, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const ERROR_FILE: &str = "error.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Absent for merged reports, which have no single config.
    pub config: Option<ExperimentConfig>,
    pub config_sha256: String,
    /// Momentum resolution of Π₀ and histograms, `k̄ / pi0_bins_per_site`.
    pub bin_width: Option<f64>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_error(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Merge(format!("{}: {e}", path.display())))
    }

    /// Re-hashes every listed file and the embedded config.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        if let Some(config) = &self.config {
            if config.checksum() != self.config_sha256 {
                return Err(CliError::Consistency("config checksum does not match the embedded config".into()));
            }
            let path = dir.join(CONFIG_FILE);
            let text = std::fs::read_to_string(&path).map_err(io_error(&path))?;
            if text != config.canonical_text() {
                return Err(CliError::Consistency(format!("{} differs from the manifest config", path.display())));
            }
        }
        for entry in &self.files {
            let path = dir.join(&entry.path);
            let bytes = std::fs::read(&path).map_err(io_error(&path))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(CliError::Consistency(format!("checksum mismatch for {}", entry.path)));
            }
        }
        Ok(())
    }

    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Single writer for one output directory.
pub struct RunDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(io_error(root))?;
        // a stale error record from an earlier failed attempt would be misleading
        let stale = root.join(ERROR_FILE);
        if stale.exists() {
            std::fs::remove_file(&stale).map_err(io_error(&stale))?;
        }
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, contents).map_err(io_error(&path))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.to_string(), sha256: sha256_hex(contents.as_bytes()), bytes: contents.len() as u64 });
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes the config echo and the manifest; consumes the writer.
    pub fn finish(self, command: &str, config: Option<&ExperimentConfig>, bin_width: Option<f64>, merged_checksum: Option<String>) -> Result<Manifest, CliError> {
        let mut files = self.files;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let config_sha256 = match config {
            Some(c) => {
                let path = self.root.join(CONFIG_FILE);
                std::fs::write(&path, c.canonical_text()).map_err(io_error(&path))?;
                c.checksum()
            }
            None => merged_checksum.unwrap_or_default(),
        };
        let manifest = Manifest {
            tool: "rotor".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.cloned(),
            config_sha256,
            bin_width,
            files,
        };
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_error(&path))?;
        Ok(manifest)
    }
}

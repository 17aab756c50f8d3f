use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: &str = "qdtm-manifest/1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl Manifest {
    pub fn check_format(&self) -> CliResult<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(CliError::validation(format!(
                "unsupported manifest format `{}` (expected `{MANIFEST_FORMAT}`)",
                self.format
            )));
        }
        Ok(())
    }
}

/// Files written by one command. Every file goes through a temporary name
/// and a rename; unless [`Outputs::commit`] is reached, everything written
/// so far is deleted on drop.
pub struct Outputs {
    command: &'static str,
    inputs: Vec<FileRecord>,
    written: Vec<FileRecord>,
    committed: bool,
}

impl Outputs {
    pub fn new(command: &'static str) -> Self {
        Outputs {
            command,
            inputs: Vec::new(),
            written: Vec::new(),
            committed: false,
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        self.inputs.push(FileRecord {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    pub fn inputs(&self) -> &[FileRecord] {
        &self.inputs
    }

    pub fn write(&mut self, role: &str, path: &Path, bytes: &[u8]) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path)).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })?;
        self.written.push(FileRecord {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Writes the manifest to `path` and keeps every output.
    pub fn commit(mut self, path: &Path, config: &RunConfig, seed: Option<u64>) -> CliResult<()> {
        let m = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: config.clone(),
            inputs: self.inputs.clone(),
            outputs: self.written.clone(),
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        self.write("manifest", path, text.as_bytes())?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for f in &self.written {
                let _ = fs::remove_file(&f.path);
            }
        }
    }
}

/// `result.json` -> `result.json.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

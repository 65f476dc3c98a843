use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

/// Record of one run: configuration, seed and digests of every file read
/// and written. File names are recorded without directories so reruns in
/// different locations produce the same manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub program: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = fs::File::open(path)?;
    io::copy(&mut file, &mut hasher)?;
    Ok(format!("{:x}", hasher.finalize()))
}

fn digest(path: &Path) -> Result<FileDigest, CliError> {
    Ok(FileDigest {
        name: path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        sha256: sha256_file(path).map_err(|e| CliError::io(format!("read {}", path.display()), e))?,
    })
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            program: "netstrat",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    /// Digests `names` inside `dir` and writes `manifest.json` there.
    pub fn write(mut self, dir: &Path, names: &[&str]) -> Result<(), CliError> {
        for name in names {
            self.outputs.push(digest(&dir.join(name))?);
        }
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::usage(e.to_string()))?;
        let path = dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| CliError::io(format!("write {}", path.display()), e))
    }
}

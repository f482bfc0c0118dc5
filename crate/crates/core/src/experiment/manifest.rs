use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Command, ExperimentError, Layout, RunConfig};

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
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
    Ok(hex::encode(h.finalize()))
}

/// Record of one command: the resolved configuration plus content hashes of
/// what it read and wrote. Contains no timestamps, so identical runs produce
/// identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    /// Paths relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl CommandManifest {
    pub fn new(command: Command, config: &RunConfig) -> Self {
        Self {
            command: command.as_str().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), ExperimentError> {
        let hash = sha256_file(path).map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display())))?;
        self.inputs.insert(path.to_string_lossy().into_owned(), hash);
        Ok(())
    }

    /// Records a written file, or every file below a directory.
    pub fn add_artifact(&mut self, layout: &Layout, path: &Path) -> Result<(), ExperimentError> {
        let mut files: Vec<PathBuf> = Vec::new();
        collect_files(path, &mut files).map_err(|e| ExperimentError::Other(format!("{}: {e}", path.display())))?;
        for f in files {
            let hash = sha256_file(&f).map_err(|e| ExperimentError::Other(format!("{}: {e}", f.display())))?;
            let rel = f.strip_prefix(&layout.root).unwrap_or(&f);
            self.artifacts.insert(rel.to_string_lossy().into_owned(), hash);
        }
        Ok(())
    }

    pub fn write(&self, layout: &Layout) -> Result<PathBuf, ExperimentError> {
        let command: Command = self.command.parse().map_err(ExperimentError::Other)?;
        let path = layout.manifest(command);
        let io = |e: std::io::Error| ExperimentError::Other(format!("{}: {e}", path.display()));
        fs::create_dir_all(path.parent().expect("manifest has a parent")).map_err(io)?;
        fs::write(&path, serde_json::to_string_pretty(self).expect("manifest serialises") + "\n").map_err(io)?;
        Ok(path)
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else if path.is_file() {
        out.push(path.to_path_buf());
    }
    Ok(())
}

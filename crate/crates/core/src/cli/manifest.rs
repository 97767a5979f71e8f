//! Run manifests: the resolved argument list plus hashes of every input and
//! output, enough to rerun a command and check that it reproduced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(bytes)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, with any config file already
    /// folded in.
    pub argv: Vec<String>,
    /// Named random streams and the root seed each derives from.
    pub seed_tree: BTreeMap<String, String>,
    pub inputs: Vec<FileHash>,
    /// Primary outputs only; figures are not hashed.
    pub outputs: Vec<FileHash>,
}

/// Collects what a command read and wrote while it runs.
#[derive(Debug, Default)]
pub struct RunRecord {
    pub seed_tree: BTreeMap<String, String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunRecord {
    pub fn input(&mut self, path: &Path) {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
    }

    pub fn output(&mut self, path: &Path) {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_path_buf());
        }
    }

    pub fn seed(&mut self, stream: &str, derivation: String) {
        self.seed_tree.insert(stream.to_string(), derivation);
    }

    pub fn into_manifest(self, command: &str, argv: &[String]) -> Result<Manifest> {
        Ok(Manifest {
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv: argv.to_vec(),
            seed_tree: self.seed_tree,
            inputs: self.inputs.iter().map(|p| FileHash::of(p)).collect::<Result<_>>()?,
            outputs: self.outputs.iter().map(|p| FileHash::of(p)).collect::<Result<_>>()?,
        })
    }
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = read_json(path)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "{}: manifest version {} is not supported",
                path.display(),
                m.version
            )));
        }
        Ok(m)
    }

    /// Inputs whose current contents differ from the recorded hash.
    pub fn changed_inputs(&self) -> Vec<PathBuf> {
        self.inputs
            .iter()
            .filter(|f| FileHash::of(&f.path).map_or(true, |h| h.sha256 != f.sha256))
            .map(|f| f.path.clone())
            .collect()
    }

    /// Outputs whose current contents differ from the recorded hash.
    pub fn changed_outputs(&self) -> Vec<PathBuf> {
        self.outputs
            .iter()
            .filter(|f| FileHash::of(&f.path).map_or(true, |h| h.sha256 != f.sha256))
            .map(|f| f.path.clone())
            .collect()
    }
}

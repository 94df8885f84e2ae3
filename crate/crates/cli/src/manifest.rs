//! Run manifests: the resolved configuration, inputs and produced files of
//! one command, as `key = value` lines. Nothing time-dependent is recorded,
//! so repeating a run yields the same manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    /// Fully resolved configuration, defaults included.
    pub config: Vec<(String, String)>,
    /// `(name, path, sha256)` of every file read.
    pub inputs: Vec<(String, PathBuf, String)>,
    pub out_dir: PathBuf,
    /// `(file name, sha256)` of every file written into `out_dir`.
    pub artifacts: Vec<(String, String)>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, out_dir: &Path) -> Self {
        Self { command: command.to_string(), seed, out_dir: out_dir.to_path_buf(), ..Self::default() }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.push((name.to_string(), path.to_path_buf(), digest));
        Ok(())
    }

    /// Records the checksum of `out_dir/file`.
    pub fn add_artifact(&mut self, file: &str) -> Result<()> {
        let digest = sha256_file(&self.out_dir.join(file))?;
        self.artifacts.push((file.to_string(), digest));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# adalign run manifest\n");
        out.push_str(&format!("command = {}\n", self.command));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k} = {v}\n"));
        }
        for (name, path, digest) in &self.inputs {
            out.push_str(&format!("input.{name} = {} sha256:{digest}\n", path.display()));
        }
        for (file, digest) in &self.artifacts {
            out.push_str(&format!("artifact.{file} = sha256:{digest}\n"));
        }
        out
    }

    pub fn write(&self) -> Result<()> {
        let path = self.out_dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}

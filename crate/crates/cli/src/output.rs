use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Seed and config hash embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stamp {
    pub seed: u64,
    pub config_hash: String,
}

impl Stamp {
    pub fn new(seed: u64, config: &impl Serialize) -> Self {
        let canonical = serde_json::to_string(config).expect("configs serialize");
        Self { seed, config_hash: hex::encode(Sha256::digest(canonical.as_bytes())) }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, config_hash: self.config_hash.clone() }
    }

    /// CSV comment lines (without the leading `#`).
    pub fn comments(&self) -> Vec<String> {
        vec![format!("seed: {}", self.seed), format!("config_hash: {}", self.config_hash)]
    }

    pub fn provenance(&self) -> ncpd_core::graph::Provenance {
        ncpd_core::graph::Provenance { seed: Some(self.seed), config_hash: Some(self.config_hash.clone()) }
    }
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn new(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Creates `name`, runs `f` on a buffered writer and flushes; returns the path.
    pub fn write<F>(&self, name: &str, f: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
    {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> CliResult<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(ncpd_core::Error::from)?;
            writeln!(w).map_err(ncpd_core::Error::from)?;
            Ok(())
        })
    }
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

//! Result files. Nothing reaches the output directory until a command has finished:
//! every file is staged in a temporary file next to its destination and renamed at the
//! end.

use std::fmt::Display;
use std::io::Write;
#[cfg(unix)]
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Version of the JSON result layout.
pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// CSV table with a `#` comment line carrying the command, configuration hash and seed.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(command: &str, config_hash: &str, seed: u64, header: &[&str]) -> Self {
        let mut text = format!("# qread {command} config_sha256={config_hash} seed={seed}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Csv {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[&dyn Display]) {
        assert_eq!(fields.len(), self.columns, "row width does not match the header");
        let cells: Vec<String> = fields.iter().map(|f| f.to_string()).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// JSON envelope shared by all commands.
#[derive(Debug, Serialize)]
pub struct ResultDoc<'a, C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub experiment: &'a str,
    pub config_sha256: &'a str,
    pub seed: u64,
    pub config: &'a C,
    pub results: R,
}

/// Files of one command, committed together.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

#[cfg(unix)]
fn staging_file(parent: &Path) -> std::io::Result<tempfile::NamedTempFile> {
    tempfile::Builder::new()
        .permissions(std::fs::Permissions::from_mode(0o644))
        .tempfile_in(parent)
}

#[cfg(not(unix))]
fn staging_file(parent: &Path) -> std::io::Result<tempfile::NamedTempFile> {
    tempfile::NamedTempFile::new_in(parent)
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<PathBuf>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    /// Writes every file into `dir`: all are staged first, then renamed in order.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let dest = dir.join(name);
            let parent = dest.parent().unwrap_or(dir);
            std::fs::create_dir_all(parent)?;
            let mut tmp = staging_file(parent)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            staged.push((tmp, dest));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, dest) in staged {
            tmp.persist(&dest).with_context(|| format!("writing {}", dest.display()))?;
            written.push(dest);
        }
        Ok(written)
    }
}

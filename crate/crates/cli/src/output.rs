//! CSV emission with a provenance header.

use crate::CliError;
use sha2::{Digest, Sha256};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Lossless text form of a real: 17 significant digits.
pub fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Lines written as `#` comments above every table.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub timestamp: bool,
}

impl Provenance {
    fn lines(&self) -> Vec<String> {
        let mut out = vec![format!(
            "# config_sha256={} seed={}",
            self.config_hash.as_deref().unwrap_or("none"),
            self.seed.map_or("none".to_string(), |s| s.to_string())
        )];
        if self.timestamp {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            out.push(format!("# generated_unix={secs}"));
        }
        out
    }
}

/// Where tables go: a directory of files, or standard output.
#[derive(Debug, Clone)]
pub struct Sink {
    dir: Option<PathBuf>,
    force: bool,
    provenance: Provenance,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>, force: bool, provenance: Provenance) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(Sink { dir, force, provenance })
    }

    /// Refuses to replace an existing file unless forced, before any work is done.
    pub fn check_free(&self, names: &[&str]) -> Result<(), CliError> {
        if let (Some(d), false) = (&self.dir, self.force) {
            for name in names {
                let path = d.join(name);
                if path.exists() {
                    return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn write_table(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut out: Box<dyn Write> = match &self.dir {
            Some(d) => Box::new(self.open(&d.join(name))?),
            None => {
                println!("# table={name}");
                Box::new(io::stdout().lock())
            }
        };
        let io_err = |e: io::Error| CliError::Io(e.to_string());
        for line in self.provenance.lines() {
            writeln!(out, "{line}").map_err(io_err)?;
        }
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        for row in rows {
            w.write_record(row).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(io_err)
    }

    fn open(&self, path: &Path) -> Result<File, CliError> {
        let mut opts = OpenOptions::new();
        opts.write(true);
        if self.force {
            opts.create(true).truncate(true);
        } else {
            opts.create_new(true);
        }
        opts.open(path).map_err(|e| match e.kind() {
            io::ErrorKind::AlreadyExists => CliError::Usage(format!("{} exists; pass --force to overwrite", path.display())),
            _ => CliError::Io(format!("{}: {e}", path.display())),
        })
    }
}

//! Run manifests: a flat key=value record written next to every command's
//! output, carrying the config snapshot, input and model hashes, the seed and
//! the toolkit version — enough to re-run the command bit-identically.

use skywatch::error::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct Manifest {
    command: String,
    entries: Vec<(String, String)>,
    started: Instant,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_file(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(fnv1a(&bytes))
}

/// Combined hash of every regular file in a directory, order-independent of
/// readdir order (sorted by file name).
pub fn hash_dir(dir: &Path) -> Result<u64> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.into(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut acc = String::new();
    for f in &files {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("").to_owned();
        write!(acc, "{}:{:016x};", name, hash_file(f)?).expect("string write");
    }
    Ok(fnv1a(acc.as_bytes()))
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest { command: command.to_owned(), entries: Vec::new(), started: Instant::now() }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_owned(), value.to_string()));
    }

    pub fn input_file(&mut self, label: &str, path: &Path) -> Result<()> {
        let h = hash_file(path)?;
        self.set(&format!("input_hash.{}", label), format!("{:016x}", h));
        Ok(())
    }

    pub fn input_dir(&mut self, label: &str, path: &Path) -> Result<()> {
        let h = hash_dir(path)?;
        self.set(&format!("input_hash.{}", label), format!("{:016x}", h));
        Ok(())
    }

    pub fn output_file(&mut self, label: &str, path: &Path) -> Result<()> {
        let h = hash_file(path)?;
        self.set(&format!("output_hash.{}", label), format!("{:016x}", h));
        Ok(())
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        let elapsed = self.started.elapsed().as_millis();
        let mut s = String::new();
        writeln!(s, "command={}", self.command).expect("string write");
        writeln!(s, "version={}", skywatch::VERSION).expect("string write");
        self.entries.push(("wall_clock_ms".to_owned(), elapsed.to_string()));
        for (k, v) in &self.entries {
            writeln!(s, "{}={}", k, v).expect("string write");
        }
        std::fs::write(path, s).map_err(|e| Error::Io { path: path.into(), source: e })
    }
}

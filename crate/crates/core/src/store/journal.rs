//! Append-only JSONL files with a versioned header line.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "personaforge-store";
pub const VERSION: u32 = 1;

#[derive(Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format: String,
    kind: String,
    version: u32,
}

#[derive(Clone, Debug)]
pub struct Journal {
    path: PathBuf,
    kind: &'static str,
}

impl Journal {
    pub fn new(path: PathBuf, kind: &'static str) -> Self {
        Self { path, kind }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn header_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&Header {
            format: FORMAT.into(),
            kind: self.kind.into(),
            version: VERSION,
        })?)
    }

    fn corrupt(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    /// All records in file order; a missing file reads as empty.
    pub fn read<T: DeserializeOwned>(&self) -> Result<Vec<T>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut lines = BufReader::new(file).lines();
        let Some(first) = lines.next().transpose()? else {
            return Ok(Vec::new());
        };
        let header: Header = serde_json::from_str(&first).map_err(|e| self.corrupt(1, format!("bad header: {e}")))?;
        if header.format != FORMAT || header.kind != self.kind {
            return Err(self.corrupt(
                1,
                format!("expected a {FORMAT} {} file, found {} {}", self.kind, header.format, header.kind),
            ));
        }
        if header.version != VERSION {
            return Err(Error::UnsupportedVersion {
                path: self.path.clone(),
                found: header.version,
                expected: VERSION,
            });
        }
        let mut out = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| self.corrupt(i + 2, e.to_string()))?);
        }
        Ok(out)
    }

    pub fn append<T: Serialize>(&self, records: &[T]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let fresh = !self.path.exists() || fs::metadata(&self.path)?.len() == 0;
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(OpenOptions::new().create(true).append(true).open(&self.path)?);
        if fresh {
            writeln!(out, "{}", self.header_line()?)?;
        }
        for r in records {
            writeln!(out, "{}", serde_json::to_string(r)?)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Replaces the file with exactly `records`, via a temporary file and
    /// a rename.
    pub fn rewrite<T: Serialize>(&self, records: &[T]) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            writeln!(out, "{}", self.header_line()?)?;
            for r in records {
                writeln!(out, "{}", serde_json::to_string(r)?)?;
            }
            out.flush()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

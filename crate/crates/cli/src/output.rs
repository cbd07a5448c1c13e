//! Artifact writers. Floats use the shortest representation that parses back
//! to the same value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::failure::Failure;

pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub struct Csv {
    path: PathBuf,
    inner: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(path: PathBuf, header: &[&str]) -> Result<Self, Failure> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        inner
            .write_record(header)
            .map_err(|e| Failure::input("Io", e.to_string()))?;
        Ok(Self { path, inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), Failure>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| Failure::input("Io", e.to_string()))
    }

    pub fn finish(self) -> Result<PathBuf, Failure> {
        let bytes = self
            .inner
            .into_inner()
            .map_err(|e| Failure::input("Io", e.to_string()))?;
        fs::write(&self.path, bytes).map_err(|e| Failure::io(e, &self.path))?;
        Ok(self.path)
    }
}

/// One JSON object on a single LF-terminated line.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string(value).map_err(|e| Failure::input("Io", e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::io(e, path))
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(e, dir))
}

//! Append-only JSON-lines log. Every record is fsynced before the caller is
//! acknowledged; on replay a torn final line (crash mid-write) is dropped and
//! truncated away, while corruption anywhere else is an error.

use crate::error::{Error, Result};
use crate::model::PoseAnnotation;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Record {
    Assign { frame_id: String, annotator_id: String, at_ms: u64 },
    Submit { annotation: PoseAnnotation, at_ms: u64 },
}

pub struct Log {
    path: PathBuf,
    file: File,
}

impl Log {
    /// Opens (or creates) the log and returns every intact record.
    pub fn open(path: impl AsRef<Path>) -> Result<(Log, Vec<Record>)> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let mut records = Vec::new();
        let mut good = 0usize;
        let mut line_no = 0usize;
        while good < bytes.len() {
            line_no += 1;
            let rest = &bytes[good..];
            let Some(end) = rest.iter().position(|&b| b == b'\n') else {
                // Torn tail: the write never completed, so it was never acknowledged.
                break;
            };
            let line = &rest[..end];
            match serde_json::from_slice::<Record>(line) {
                Ok(r) => records.push(r),
                Err(e) => return Err(Error::CorruptLog { line: line_no, message: e.to_string() }),
            }
            good += end + 1;
        }
        if good < bytes.len() {
            file.set_len(good as u64)?;
            file.sync_all()?;
        }
        Ok((Log { path, file }, records))
    }

    pub fn append(&mut self, record: &Record) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

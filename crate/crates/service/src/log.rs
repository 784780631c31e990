//! Append-only JSONL label log.
//!
//! A record is acknowledged only after its line has been written and
//! `fsync`ed. On open, a trailing partial line (a write interrupted by a
//! crash, never acknowledged) is cut off before replay.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sftype::{LabelRecord, LabelStore, SfTypeInventory};

use crate::error::ServiceError;

pub struct LabelLog {
    path: PathBuf,
    file: File,
    len: u64,
    lines: usize,
}

impl LabelLog {
    /// Opens (creating if needed) and replays the log.
    pub fn open(
        path: impl AsRef<Path>,
        inventory: &SfTypeInventory,
    ) -> Result<(LabelLog, LabelStore), ServiceError> {
        let path = path.as_ref().to_path_buf();
        let io = |e| ServiceError::Io(path.clone(), e);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;

        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            let tail = &bytes[complete..];
            let parses = std::str::from_utf8(tail)
                .ok()
                .and_then(|s| sftype::corpus::parse_label_line(s, 0, inventory).ok())
                .is_some();
            if parses {
                // full record, only the newline was lost
                file.write_all(b"\n").map_err(io)?;
                file.sync_data().map_err(io)?;
                bytes.push(b'\n');
            } else {
                tracing::warn!(
                    path = %path.display(),
                    bytes = tail.len(),
                    "dropping torn record at end of label log"
                );
                file.set_len(complete as u64).map_err(io)?;
                file.sync_data().map_err(io)?;
                bytes.truncate(complete);
            }
        }
        let store = LabelStore::from_reader(bytes.as_slice(), inventory)?;
        let lines = bytes
            .split(|&b| b == b'\n')
            .filter(|l| !l.iter().all(u8::is_ascii_whitespace))
            .count();
        file.seek(SeekFrom::End(0)).map_err(io)?;
        let len = bytes.len() as u64;
        Ok((
            LabelLog {
                path,
                file,
                len,
                lines,
            },
            store,
        ))
    }

    /// Appends records durably. On failure the file is rolled back to its
    /// previous length.
    pub fn append(&mut self, records: &[LabelRecord]) -> Result<(), ServiceError> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).map_err(sftype::Error::from)?;
            buf.push(b'\n');
        }
        let result = self
            .file
            .write_all(&buf)
            .and_then(|_| self.file.sync_data());
        if let Err(e) = result {
            let _ = self.file.set_len(self.len);
            return Err(ServiceError::Io(self.path.clone(), e));
        }
        self.len += buf.len() as u64;
        self.lines += records.len();
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records written so far, including superseded ones.
    pub fn lines(&self) -> usize {
        self.lines
    }
}

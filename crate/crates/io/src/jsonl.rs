//! Append-only JSON Lines writer: one serialized record per line, flushed on
//! every write so partially written runs still leave a readable log.

use serde::Serialize;
use std::io::{BufWriter, Write};
use std::path::Path;

pub struct JsonlWriter {
    writer: BufWriter<std::fs::File>,
}

impl JsonlWriter {
    /// Create (truncating) a log at `path`.
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::File::create(path)?;
        Ok(JsonlWriter {
            writer: BufWriter::new(file),
        })
    }

    /// Open `path` for appending, creating it if missing.
    pub fn append(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(JsonlWriter {
            writer: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> std::io::Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }
}

/// Parse every line of a JSON Lines file into `serde_json::Value`s.
pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<serde_json::Value>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let mut w = JsonlWriter::create(&path).unwrap();
            w.write(&serde_json::json!({"iter": 0, "reward": 0.5}))
                .unwrap();
            w.write(&serde_json::json!({"iter": 1, "reward": 0.75}))
                .unwrap();
        }
        {
            let mut w = JsonlWriter::append(&path).unwrap();
            w.write(&serde_json::json!({"iter": 2, "reward": 0.9}))
                .unwrap();
        }
        let records = read_jsonl(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[2]["iter"], 2);
    }
}

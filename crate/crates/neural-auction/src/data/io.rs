//! Line-delimited dataset files.
//!
//! Layout: a JSON header line (`{"format":"auction-dataset","version":1}`)
//! followed by one JSON record per auction instance. UTF-8, diff-able, and
//! streamable. A zero-byte file reads as an empty stream; anything else
//! must start with a valid header. Blank lines are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{AuctionInstance, DataError};

pub const DATASET_FORMAT: &str = "auction-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Write a dataset file. Every instance is validated before it is written,
/// so a written file always reads back cleanly. Returns the record count.
pub fn write_dataset<I>(path: impl AsRef<Path>, instances: I) -> Result<usize, DataError>
where
    I: IntoIterator<Item = AuctionInstance>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let header = Header { format: DATASET_FORMAT.to_string(), version: DATASET_VERSION };
    let header_line = serde_json::to_string(&header).expect("header serializes");
    writeln!(out, "{header_line}").map_err(io_err(path))?;

    let mut count = 0usize;
    for instance in instances {
        // Line numbers are 1-based; the header occupies line 1.
        instance.validate(count + 2)?;
        let line = serde_json::to_string(&instance)
            .map_err(|e| DataError::Parse { line: count + 2, message: e.to_string() })?;
        writeln!(out, "{line}").map_err(io_err(path))?;
        count += 1;
    }
    out.flush().map_err(io_err(path))?;
    Ok(count)
}

/// Streaming reader over a dataset file.
pub struct DatasetReader {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
}

/// Open a dataset for streaming. The header is consumed and checked here;
/// records are validated as they are read.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<DatasetReader, DataError> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut lines = BufReader::new(file).lines();

    match lines.next() {
        None => Ok(DatasetReader { path, lines, line_no: 1 }), // empty file, empty stream
        Some(first) => {
            let first = first.map_err(io_err(&path))?;
            let header: Header = serde_json::from_str(&first)
                .map_err(|e| DataError::Header(format!("line 1: {e}")))?;
            if header.format != DATASET_FORMAT {
                return Err(DataError::Header(format!(
                    "expected format `{DATASET_FORMAT}`, got `{}`",
                    header.format
                )));
            }
            if header.version != DATASET_VERSION {
                return Err(DataError::Version { found: header.version, supported: DATASET_VERSION });
            }
            Ok(DatasetReader { path, lines, line_no: 1 })
        }
    }
}

impl Iterator for DatasetReader {
    type Item = Result<AuctionInstance, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(io_err(&self.path)(e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Result<AuctionInstance, _> = serde_json::from_str(&line);
            return Some(match parsed {
                Ok(instance) => instance.validate(self.line_no).map(|()| instance),
                Err(e) => Err(DataError::Parse { line: self.line_no, message: e.to_string() }),
            });
        }
    }
}

/// Read an entire dataset into memory.
pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<AuctionInstance>, DataError> {
    read_dataset(path)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generator::{generate_dataset, GeneratorConfig};

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("neural-auction-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = GeneratorConfig::default();
        let original: Vec<_> = generate_dataset(&cfg, 3).unwrap().collect();
        let path = tmp("round_trip.jsonl");
        write_dataset(&path, original.clone()).unwrap();
        let restored = read_all(&path).unwrap();
        assert_eq!(original, restored);
    }

    #[test]
    fn nonpositive_bid_is_rejected_with_field_name() {
        let cfg = GeneratorConfig::default();
        let mut instance = generate_dataset(&cfg, 1).unwrap().next().unwrap();
        instance.candidates[0].bid = -1.0;
        let path = tmp("bad_bid.jsonl");
        let line = serde_json::to_string(&instance).unwrap();
        std::fs::write(
            &path,
            format!("{{\"format\":\"auction-dataset\",\"version\":1}}\n{line}\n"),
        )
        .unwrap();
        let err = read_all(&path).unwrap_err();
        match err {
            DataError::InvalidField { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "bid");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let path = tmp("missing_field.jsonl");
        std::fs::write(
            &path,
            "{\"format\":\"auction-dataset\",\"version\":1}\n{\"pv_id\":\"pv-0\",\"k\":1}\n",
        )
        .unwrap();
        let err = read_all(&path).unwrap_err();
        match err {
            DataError::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("slot_ctrs"), "message should name the field: {message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_empty_stream() {
        let path = tmp("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let instances = read_all(&path).unwrap();
        assert!(instances.is_empty());
    }

    #[test]
    fn header_only_file_is_empty() {
        let path = tmp("header_only.jsonl");
        write_dataset(&path, std::iter::empty()).unwrap();
        assert!(read_all(&path).unwrap().is_empty());
    }

    #[test]
    fn wrong_version_is_detected() {
        let path = tmp("wrong_version.jsonl");
        std::fs::write(&path, "{\"format\":\"auction-dataset\",\"version\":99}\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(DataError::Version { found: 99, .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let path = tmp("malformed.jsonl");
        std::fs::write(&path, "{\"format\":\"auction-dataset\",\"version\":1}\nnot json\n").unwrap();
        match read_all(&path).unwrap_err() {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }
}

//! Record ingestion: line parsers, optional gzip decoding, and the window
//! scheduler that cuts the record stream into mini-batches.

mod jsonl;
mod vw;
mod window;

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use flate2::bufread::MultiGzDecoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FeatureName, FeatureValue, Record};

pub use jsonl::parse_jsonl_line;
pub use vw::{parse_vw_line, TIMESTAMP_FEATURE};
pub use window::{next_batch, Batcher, WindowBatch};

/// Ten-minute windows.
pub const DEFAULT_WINDOW_MILLIS: i64 = 600_000;
pub const MIN_WINDOW_MILLIS: i64 = 1_000;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: io::Error },
    #[error("source read failed: {0}")]
    Source(#[source] io::Error),
    #[error("csv header: {0}")]
    Header(String),
    #[error("invalid source config: {0}")]
    Config(String),
}

/// A rejected line: byte position within the line and a reason.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[serde(alias = "vw")]
    VwLike,
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    /// Gzip when the stream starts with the gzip magic bytes.
    #[default]
    Auto,
    None,
    Gzip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WindowMode {
    ByCount { count: usize },
    ByTime { millis: i64 },
    Hybrid { count: usize, millis: i64 },
}

impl Default for WindowMode {
    fn default() -> Self {
        WindowMode::ByTime {
            millis: DEFAULT_WINDOW_MILLIS,
        }
    }
}

impl WindowMode {
    pub fn validate(&self) -> Result<(), IngestError> {
        let (count, millis) = match *self {
            WindowMode::ByCount { count } => (Some(count), None),
            WindowMode::ByTime { millis } => (None, Some(millis)),
            WindowMode::Hybrid { count, millis } => (Some(count), Some(millis)),
        };
        if count == Some(0) {
            return Err(IngestError::Config("window count must be at least 1".into()));
        }
        if let Some(ms) = millis {
            if ms < MIN_WINDOW_MILLIS {
                return Err(IngestError::Config(format!(
                    "window duration {ms} ms is below {MIN_WINDOW_MILLIS} ms"
                )));
            }
        }
        Ok(())
    }

    /// Nominal window length, when time-bounded.
    pub fn millis(&self) -> Option<i64> {
        match *self {
            WindowMode::ByCount { .. } => None,
            WindowMode::ByTime { millis } | WindowMode::Hybrid { millis, .. } => Some(millis),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// File path, or `-` for standard input.
    pub path: String,
    pub format: Format,
    pub compression: Compression,
    pub window: WindowMode,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            path: "-".into(),
            format: Format::VwLike,
            compression: Compression::Auto,
            window: WindowMode::default(),
        }
    }
}

/// Where timestamps come from for records that carry none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSource {
    /// Wall clock at parse time.
    Wall,
    /// Replay: inherit the previous record's timestamp (0 before any).
    RecordTime,
}

impl TimeSource {
    fn default_ts(self, last: Option<i64>) -> i64 {
        match self {
            TimeSource::RecordTime => last.unwrap_or(0),
            TimeSource::Wall => {
                let now = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_millis() as i64)
                    .unwrap_or(0);
                now.max(last.unwrap_or(i64::MIN))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub lines_ok: u64,
    pub lines_rejected: u64,
    pub first_error: Option<(u64, String)>,
}

impl ParseStats {
    pub fn lines_seen(&self) -> u64 {
        self.lines_ok + self.lines_rejected
    }

    pub fn reject_fraction(&self) -> f64 {
        match self.lines_seen() {
            0 => 0.0,
            n => self.lines_rejected as f64 / n as f64,
        }
    }

    fn record_ok(&mut self) {
        self.lines_ok += 1;
    }

    fn record_rejection(&mut self, line: u64, message: &str) {
        self.lines_rejected += 1;
        if self.first_error.is_none() {
            self.first_error = Some((line, message.to_string()));
        }
    }

    pub fn absorb(&mut self, other: &ParseStats) {
        self.lines_ok += other.lines_ok;
        self.lines_rejected += other.lines_rejected;
        if self.first_error.is_none() {
            self.first_error = other.first_error.clone();
        }
    }
}

/// Wraps `inner` in a gzip decoder when requested or when the stream starts
/// with the gzip magic bytes.
pub fn open_reader<R: Read + 'static>(
    inner: R,
    compression: Compression,
) -> Result<Box<dyn BufRead>, IngestError> {
    let mut buffered = BufReader::with_capacity(1 << 16, inner);
    let gzip = match compression {
        Compression::None => false,
        Compression::Gzip => true,
        Compression::Auto => buffered
            .fill_buf()
            .map_err(IngestError::Source)?
            .starts_with(&GZIP_MAGIC),
    };
    Ok(if gzip {
        Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(buffered)))
    } else {
        Box::new(buffered)
    })
}

pub fn open_path(path: &Path, compression: Compression) -> Result<Box<dyn BufRead>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Open {
        path: path.display().to_string(),
        source,
    })?;
    open_reader(file, compression)
}

/// Outcome of reading one input line.
#[derive(Debug, Clone, PartialEq)]
pub enum LineOutcome {
    Record(Record),
    Rejected { line: u64, error: ParseError },
}

enum Lines {
    Text {
        reader: Box<dyn BufRead>,
        format: Format,
        buf: Vec<u8>,
    },
    Csv {
        reader: csv::Reader<Box<dyn BufRead>>,
        columns: Option<Vec<CsvColumn>>,
        row: csv::StringRecord,
    },
}

#[derive(Debug, Clone)]
enum CsvColumn {
    Label,
    Timestamp,
    Feature(FeatureName),
}

/// Turns a byte stream into parsed records, one outcome per input line.
/// Records older than the last accepted one are rejected.
pub struct RecordReader {
    lines: Lines,
    time: TimeSource,
    line_no: u64,
    last_ts: Option<i64>,
    stats: ParseStats,
}

impl RecordReader {
    pub fn new(reader: Box<dyn BufRead>, format: Format, time: TimeSource) -> Self {
        let lines = match format {
            Format::Csv => Lines::Csv {
                reader: csv::ReaderBuilder::new()
                    .has_headers(false)
                    .flexible(true)
                    .from_reader(reader),
                columns: None,
                row: csv::StringRecord::new(),
            },
            _ => Lines::Text {
                reader,
                format,
                buf: Vec::new(),
            },
        };
        RecordReader {
            lines,
            time,
            line_no: 0,
            last_ts: None,
            stats: ParseStats::default(),
        }
    }

    /// Cumulative statistics over everything read so far.
    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    pub fn next_outcome(&mut self) -> Result<Option<LineOutcome>, IngestError> {
        let default_ts = self.time.default_ts(self.last_ts);
        let parsed = match &mut self.lines {
            Lines::Text { reader, format, buf } => loop {
                buf.clear();
                let n = reader.read_until(b'\n', buf).map_err(IngestError::Source)?;
                if n == 0 {
                    return Ok(None);
                }
                self.line_no += 1;
                // blank lines are neither records nor rejections
                if buf.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                break match std::str::from_utf8(buf) {
                    Err(e) => Err(ParseError {
                        position: e.valid_up_to(),
                        message: "invalid utf-8".into(),
                    }),
                    Ok(text) => {
                        let text = text.trim_end_matches(['\n', '\r']);
                        match format {
                            Format::Jsonl => parse_jsonl_line(text, default_ts),
                            _ => parse_vw_line(text, default_ts),
                        }
                    }
                };
            },
            Lines::Csv {
                reader,
                columns,
                row,
            } => {
                if columns.is_none() {
                    *columns = Some(read_csv_header(reader)?);
                }
                let columns = columns.as_ref().expect("header read above");
                match reader.read_record(row) {
                    Ok(false) => return Ok(None),
                    Ok(true) => {
                        self.line_no += 1;
                        parse_csv_row(columns, row, default_ts)
                    }
                    Err(e) => {
                        if let csv::ErrorKind::Io(_) = e.kind() {
                            let csv::ErrorKind::Io(io) = e.into_kind() else { unreachable!() };
                            return Err(IngestError::Source(io));
                        }
                        self.line_no += 1;
                        Err(ParseError {
                            position: 0,
                            message: e.to_string(),
                        })
                    }
                }
            }
        };
        let outcome = match parsed {
            Ok(record) if self.last_ts.is_some_and(|last| record.timestamp < last) => {
                LineOutcome::Rejected {
                    line: self.line_no,
                    error: ParseError {
                        position: 0,
                        message: format!(
                            "timestamp {} precedes previous record at {}",
                            record.timestamp,
                            self.last_ts.unwrap_or_default()
                        ),
                    },
                }
            }
            Ok(record) => {
                self.last_ts = Some(record.timestamp);
                LineOutcome::Record(record)
            }
            Err(error) => LineOutcome::Rejected {
                line: self.line_no,
                error,
            },
        };
        match &outcome {
            LineOutcome::Record(_) => self.stats.record_ok(),
            LineOutcome::Rejected { line, error } => {
                log::debug!("line {line} rejected {error}");
                self.stats.record_rejection(*line, &error.to_string());
            }
        }
        Ok(Some(outcome))
    }
}

fn read_csv_header(reader: &mut csv::Reader<Box<dyn BufRead>>) -> Result<Vec<CsvColumn>, IngestError> {
    let mut header = csv::StringRecord::new();
    match reader.read_record(&mut header) {
        Ok(_) => {}
        Err(e) => {
            return match e.into_kind() {
                csv::ErrorKind::Io(io) => Err(IngestError::Source(io)),
                other => Err(IngestError::Header(format!("{other:?}"))),
            }
        }
    }
    header
        .iter()
        .map(|h| match h.trim() {
            "label" => Ok(CsvColumn::Label),
            "ts" => Ok(CsvColumn::Timestamp),
            other => FeatureName::new(other)
                .map(CsvColumn::Feature)
                .map_err(|e| IngestError::Header(e.to_string())),
        })
        .collect()
}

fn parse_csv_row(columns: &[CsvColumn], row: &csv::StringRecord, default_ts: i64) -> Result<Record, ParseError> {
    let reject = |message: String| ParseError {
        position: 0,
        message,
    };
    if row.len() != columns.len() {
        return Err(reject(format!(
            "{} fields, header has {}",
            row.len(),
            columns.len()
        )));
    }
    let mut features = std::collections::BTreeMap::new();
    let mut label = None;
    let mut ts = default_ts;
    for (col, cell) in columns.iter().zip(row.iter()) {
        let cell = cell.trim();
        if cell.is_empty() {
            continue;
        }
        match col {
            CsvColumn::Label => {
                label = Some(vw::parse_label(cell).ok_or_else(|| reject(format!("malformed label {cell:?}")))?)
            }
            CsvColumn::Timestamp => {
                ts = cell
                    .parse()
                    .map_err(|_| reject(format!("malformed ts {cell:?}")))?
            }
            CsvColumn::Feature(name) => {
                let value = match cell.parse::<f64>() {
                    Ok(x) if x.is_finite() => FeatureValue::Numeric(x),
                    _ => FeatureValue::Categorical(cell.to_string()),
                };
                features.insert(name.clone(), value);
            }
        }
    }
    Record::new(features, label, ts).map_err(|e| reject(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Cursor, Write};

    fn reader(text: &str, format: Format) -> RecordReader {
        let r = open_reader(Cursor::new(text.as_bytes().to_vec()), Compression::Auto).unwrap();
        RecordReader::new(r, format, TimeSource::RecordTime)
    }

    fn drain(mut r: RecordReader) -> (Vec<Record>, ParseStats) {
        let mut out = Vec::new();
        while let Some(o) = r.next_outcome().unwrap() {
            if let LineOutcome::Record(rec) = o {
                out.push(rec);
            }
        }
        (out, r.stats().clone())
    }

    #[test]
    fn rejection_is_counted_not_fatal() {
        let (records, stats) = drain(reader("1 |a x:abc\n1 |a x:1\n", Format::VwLike));
        assert_eq!(records.len(), 1);
        assert_eq!(stats.lines_rejected, 1);
        assert_eq!(stats.lines_ok, 1);
        assert_eq!(stats.first_error.as_ref().unwrap().0, 1);
    }

    #[test]
    fn out_of_order_rejected() {
        let (records, stats) = drain(reader(
            "1 | ts:10 a\n1 | ts:5 a\n1 | ts:10 b\n0 | c\n",
            Format::VwLike,
        ));
        assert_eq!(records.len(), 3);
        assert_eq!(stats.lines_rejected, 1);
        // inherits the last accepted timestamp
        assert_eq!(records[2].timestamp, 10);
    }

    #[test]
    fn invalid_utf8_is_a_rejection() {
        let bytes = b"1 | a\n\xff\xfe | b\n".to_vec();
        let r = open_reader(Cursor::new(bytes), Compression::None).unwrap();
        let (records, stats) = drain(RecordReader::new(r, Format::VwLike, TimeSource::RecordTime));
        assert_eq!((records.len(), stats.lines_rejected), (1, 1));
    }

    #[test]
    fn gzip_detected_by_magic() {
        let text = "1 |a x:0.5 y\n0 | q\n";
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(text.as_bytes()).unwrap();
        let gz = enc.finish().unwrap();
        let plain = drain(reader(text, Format::VwLike)).0;
        let r = open_reader(Cursor::new(gz), Compression::Auto).unwrap();
        let zipped = drain(RecordReader::new(r, Format::VwLike, TimeSource::RecordTime)).0;
        assert_eq!(plain, zipped);
    }

    #[test]
    fn corrupt_gzip_is_fatal() {
        let mut bytes = vec![0x1f, 0x8b, 8, 0, 0, 0, 0, 0, 0, 3];
        bytes.extend_from_slice(&[0xde, 0xad, 0xbe, 0xef, 0x00, 0x11]);
        let r = open_reader(Cursor::new(bytes), Compression::Auto).unwrap();
        let mut rr = RecordReader::new(r, Format::VwLike, TimeSource::RecordTime);
        assert!(matches!(rr.next_outcome(), Err(IngestError::Source(_))));
    }

    #[test]
    fn csv_rows() {
        let (records, stats) = drain(reader(
            "label,ts,city,age\n1,5,ljubljana,31\n0,6,,x\n1,7,a\n",
            Format::Csv,
        ));
        assert_eq!(records.len(), 2);
        assert_eq!(stats.lines_rejected, 1);
        assert_eq!(records[0].features.get("age"), Some(&FeatureValue::Numeric(31.0)));
        assert_eq!(records[1].features.len(), 1);
        assert_eq!(records[1].features.get("age"), Some(&FeatureValue::Categorical("x".into())));
        assert_eq!(records[1].timestamp, 6);
    }

    #[test]
    fn window_mode_validation() {
        assert!(WindowMode::ByCount { count: 0 }.validate().is_err());
        assert!(WindowMode::ByTime { millis: 999 }.validate().is_err());
        assert!(WindowMode::Hybrid { count: 5, millis: 1000 }.validate().is_ok());
        assert_eq!(WindowMode::default().millis(), Some(600_000));
    }
}

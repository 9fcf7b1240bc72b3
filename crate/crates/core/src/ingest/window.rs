use crate::model::{MiniBatch, Record};

use super::{IngestError, LineOutcome, ParseStats, RecordReader, WindowMode};

/// A batch plus the parse statistics of the lines read while filling it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub batch: MiniBatch,
    pub parse: ParseStats,
}

/// Cuts a record stream into windows.
///
/// * `ByCount(n)`: every `n` records; ids count emitted batches.
/// * `ByTime(d)`: windows aligned to multiples of `d` in record time. The id
///   is the window's index since the first window, so empty windows consume
///   an id without producing a batch.
/// * `Hybrid(n, d)`: starts at the first record, closes after `n` records or
///   once a record arrives `d` past the start, whichever comes first.
///
/// A window closes when a record beyond it arrives or at end of stream.
pub struct Batcher {
    reader: RecordReader,
    mode: WindowMode,
    pending: Option<Record>,
    window_stats: ParseStats,
    emitted: u64,
    time_origin: Option<i64>,
    done: bool,
}

struct Open {
    records: Vec<Record>,
    id: u64,
    start: i64,
    end: Option<i64>,
}

impl Batcher {
    pub fn new(reader: RecordReader, mode: WindowMode) -> Result<Self, IngestError> {
        mode.validate()?;
        Ok(Batcher {
            reader,
            mode,
            pending: None,
            window_stats: ParseStats::default(),
            emitted: 0,
            time_origin: None,
            done: false,
        })
    }

    /// Cumulative parse statistics.
    pub fn stats(&self) -> &ParseStats {
        self.reader.stats()
    }

    /// Parse statistics not yet attached to an emitted batch.
    pub fn take_unattached_stats(&mut self) -> ParseStats {
        std::mem::take(&mut self.window_stats)
    }

    fn next_record(&mut self) -> Result<Option<Record>, IngestError> {
        if let Some(r) = self.pending.take() {
            return Ok(Some(r));
        }
        loop {
            match self.reader.next_outcome()? {
                None => return Ok(None),
                Some(LineOutcome::Record(r)) => {
                    self.window_stats.record_ok();
                    return Ok(Some(r));
                }
                Some(LineOutcome::Rejected { line, error }) => {
                    self.window_stats.record_rejection(line, &error.to_string());
                }
            }
        }
    }

    fn open(&mut self, first: &Record) -> Open {
        match self.mode {
            WindowMode::ByTime { millis } => {
                let origin = *self
                    .time_origin
                    .get_or_insert_with(|| first.timestamp.div_euclid(millis) * millis);
                let index = (first.timestamp - origin).div_euclid(millis);
                let start = origin + index * millis;
                Open {
                    records: Vec::new(),
                    id: index as u64,
                    start,
                    end: Some(start + millis),
                }
            }
            WindowMode::ByCount { .. } | WindowMode::Hybrid { .. } => Open {
                records: Vec::new(),
                id: self.emitted,
                start: first.timestamp,
                end: None,
            },
        }
    }

    fn close(&mut self, open: Open, time_closed: bool) -> Result<WindowBatch, IngestError> {
        let last = open.records.last().map(|r| r.timestamp).unwrap_or(open.start);
        let end = match (open.end, self.mode) {
            (Some(end), WindowMode::ByTime { .. }) => end,
            (_, WindowMode::Hybrid { millis, .. }) if time_closed => open.start + millis,
            _ => last + 1,
        };
        self.emitted += 1;
        let batch = MiniBatch::new(open.records, open.id, open.start, end)
            .map_err(|e| IngestError::Config(format!("window assembly: {e}")))?;
        Ok(WindowBatch {
            batch,
            parse: std::mem::take(&mut self.window_stats),
        })
    }

    pub fn next_batch(&mut self) -> Result<Option<WindowBatch>, IngestError> {
        if self.done {
            return Ok(None);
        }
        let mut open: Option<Open> = None;
        loop {
            let Some(record) = self.next_record()? else {
                self.done = true;
                return match open {
                    Some(o) => self.close(o, false).map(Some),
                    None => Ok(None),
                };
            };
            let window = match open.as_mut() {
                Some(w) => w,
                None => {
                    let w = self.open(&record);
                    open.insert(w)
                }
            };
            let beyond = match self.mode {
                WindowMode::ByTime { .. } => window.end.is_some_and(|end| record.timestamp >= end),
                WindowMode::Hybrid { millis, .. } => record.timestamp >= window.start + millis,
                WindowMode::ByCount { .. } => false,
            };
            if beyond {
                self.pending = Some(record);
                let o = open.take().expect("window is open");
                return self.close(o, true).map(Some);
            }
            window.records.push(record);
            let full = match self.mode {
                WindowMode::ByCount { count } | WindowMode::Hybrid { count, .. } => {
                    window.records.len() >= count
                }
                WindowMode::ByTime { .. } => false,
            };
            if full {
                let o = open.take().expect("window is open");
                return self.close(o, false).map(Some);
            }
        }
    }
}

/// Free-function form of [`Batcher::next_batch`].
pub fn next_batch(batcher: &mut Batcher) -> Result<Option<WindowBatch>, IngestError> {
    batcher.next_batch()
}

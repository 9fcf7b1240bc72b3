use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::drift::AlertEvent;

/// Append-only newline-delimited JSON log of alert events.
pub struct AlertLog {
    out: BufWriter<File>,
}

impl AlertLog {
    /// Opens for appending; `truncate` starts from an empty file.
    pub fn open(path: &Path, truncate: bool) -> io::Result<Self> {
        let mut opts = OpenOptions::new();
        opts.create(true);
        if truncate {
            opts.write(true).truncate(true);
        } else {
            opts.append(true);
        }
        Ok(AlertLog {
            out: BufWriter::new(opts.open(path)?),
        })
    }

    pub fn append(&mut self, events: &[AlertEvent]) -> io::Result<()> {
        for e in events {
            serde_json::to_writer(&mut self.out, e)?;
            self.out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Flushes buffered lines and syncs them to disk; called once per window.
    pub fn sync(&mut self) -> io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

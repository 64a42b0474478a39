use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{StoreError, StoredRecord};

const SEGMENT_RECORDS: usize = 100_000;
const KEY_INDEX: &str = "keys.idx";

/// Newline-delimited JSON segments plus a sidecar key index
/// (`vin<TAB>trip_id<TAB>sequence_number` per line).
#[derive(Debug)]
pub(super) struct DiskLog {
    dir: PathBuf,
    segment: usize,
    segment_len: usize,
    writer: BufWriter<File>,
    index: BufWriter<File>,
}

fn segment_path(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("segment-{n:06}.ndjson"))
}

fn key_line(r: &StoredRecord) -> String {
    format!(
        "{}\t{}\t{}\n",
        r.record.vin, r.record.trip_id, r.record.sequence_number
    )
}

impl DiskLog {
    pub(super) fn open(dir: &Path) -> Result<(Self, Vec<StoredRecord>), StoreError> {
        fs::create_dir_all(dir)?;
        let mut segments: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("segment-") && n.ends_with(".ndjson"))
            })
            .collect();
        segments.sort();

        let mut records = Vec::new();
        let mut last_len = 0;
        for path in &segments {
            last_len = 0;
            let reader = BufReader::new(File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<StoredRecord>(&line) {
                    Ok(r) => {
                        records.push(r);
                        last_len += 1;
                    }
                    // A torn final line from an interrupted write is dropped.
                    Err(_) if lineno + 1 == count_lines(path)? => break,
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            file: path.display().to_string(),
                            message: format!("line {}: {e}", lineno + 1),
                        })
                    }
                }
            }
        }

        // The sidecar index is derived data: rebuild it whenever it disagrees.
        let index_path = dir.join(KEY_INDEX);
        let indexed = if index_path.exists() {
            count_lines(&index_path)?
        } else {
            0
        };
        if indexed != records.len() {
            let mut w = BufWriter::new(File::create(&index_path)?);
            for r in &records {
                w.write_all(key_line(r).as_bytes())?;
            }
            w.flush()?;
        }

        let segment = segments.len().saturating_sub(1);
        let path = segment_path(dir, segment);
        let writer = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        let index = BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&index_path)?,
        );
        Ok((
            DiskLog {
                dir: dir.to_path_buf(),
                segment,
                segment_len: last_len,
                writer,
                index,
            },
            records,
        ))
    }

    pub(super) fn append(&mut self, records: &[&StoredRecord]) -> Result<(), StoreError> {
        if records.is_empty() {
            return Ok(());
        }
        for r in records {
            if self.segment_len >= SEGMENT_RECORDS {
                self.roll()?;
            }
            serde_json::to_writer(&mut self.writer, r).map_err(std::io::Error::from)?;
            self.writer.write_all(b"\n")?;
            self.segment_len += 1;
        }
        self.writer.flush()?;
        self.writer.get_ref().sync_data()?;
        for r in records {
            self.index.write_all(key_line(r).as_bytes())?;
        }
        self.index.flush()?;
        Ok(())
    }

    fn roll(&mut self) -> Result<(), StoreError> {
        self.writer.flush()?;
        self.segment += 1;
        self.segment_len = 0;
        let path = segment_path(&self.dir, self.segment);
        self.writer = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(())
    }
}

fn count_lines(path: &Path) -> Result<usize, StoreError> {
    Ok(BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| l.as_ref().map(|l| !l.trim().is_empty()).unwrap_or(true))
        .count())
}

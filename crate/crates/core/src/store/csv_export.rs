use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use super::{QualityFlag, StoredRecord};

pub const CSV_HEADER: &str =
    "vin,trip_id,seq,timestamp,observable,value,unit,variant,experiment,epoch,flags";

/// One exported CSV row. Optional fields export as empty cells; flags are
/// `;`-separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub vin: String,
    pub trip_id: String,
    pub seq: u64,
    pub timestamp: String,
    pub observable: String,
    pub value: f64,
    pub unit: String,
    pub variant: String,
    pub experiment: String,
    pub epoch: Option<u32>,
    pub flags: String,
}

impl From<&StoredRecord> for ExportRow {
    fn from(s: &StoredRecord) -> Self {
        let r = &s.record;
        ExportRow {
            vin: r.vin.to_string(),
            trip_id: r.trip_id.to_string(),
            seq: r.sequence_number,
            timestamp: r.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            observable: r.observable.to_string(),
            value: r.value,
            unit: r.unit.to_string(),
            variant: r.variant.to_string(),
            experiment: r.experiment_id.as_deref().unwrap_or_default().to_string(),
            epoch: r.epoch,
            flags: s
                .quality_flags
                .iter()
                .map(|f| match f {
                    QualityFlag::OutOfRange => "OutOfRange",
                    QualityFlag::ClockSkew => "ClockSkew",
                })
                .collect::<Vec<_>>()
                .join(";"),
        }
    }
}

/// RFC 4180 CSV with LF line endings and a fixed header.
pub fn export_csv(records: &[StoredRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + records.len() * 96);
    out.extend_from_slice(CSV_HEADER.as_bytes());
    out.push(b'\n');
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in records {
        writer
            .serialize(ExportRow::from(r))
            .expect("serializing to memory cannot fail");
    }
    writer.into_inner().expect("in-memory writer")
}

pub fn parse_csv(bytes: &[u8]) -> Result<Vec<ExportRow>, csv::Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    reader.deserialize().collect()
}

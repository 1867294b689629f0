//! Line-delimited JSON run logs and the epoch/dev-F1 curve derived from them.

use std::io::{BufRead, Write};
use std::path::Path;

use sdnet_core::training::EpochRecord;

use crate::error::{CliError, CliResult};

pub fn write_record(mut out: impl Write, record: &EpochRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, record)?;
    writeln!(out)?;
    out.flush()
}

pub fn parse_runlog(reader: impl BufRead) -> CliResult<Vec<EpochRecord>> {
    let mut records: Vec<EpochRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| CliError::Data(format!("line {n}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EpochRecord = serde_json::from_str(&line).map_err(|e| CliError::Data(format!("line {n}: {e}")))?;
        if records.last().is_some_and(|p| p.epoch >= r.epoch) {
            return Err(CliError::Data(format!(
                "line {n}: epoch {} does not follow epoch {}",
                r.epoch,
                records[records.len() - 1].epoch
            )));
        }
        records.push(r);
    }
    Ok(records)
}

pub fn read_runlog(path: &Path) -> CliResult<Vec<EpochRecord>> {
    let f = std::fs::File::open(path).map_err(|e| CliError::unreadable("runlog", path, e))?;
    parse_runlog(std::io::BufReader::new(f)).map_err(|e| e.context(&path.display().to_string()))
}

/// `(epoch, dev F1)` for every evaluated epoch.
pub fn curve(records: &[EpochRecord]) -> Vec<(usize, f64)> {
    records.iter().filter_map(|r| r.dev_f1.map(|f| (r.epoch, f))).collect()
}

/// Whitespace-separated two-column text with a `#` header line.
pub fn render_curve(points: &[(usize, f64)]) -> String {
    let mut s = String::from("# epoch dev_f1\n");
    for (e, f) in points {
        s += &format!("{e} {f:?}\n");
    }
    s
}

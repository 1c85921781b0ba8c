//! Trajectory CSV sink and reader.
//!
//! Columns, in order: `t, dt, energy, min_u, max_u, volume_g, residual_sup`,
//! one `residual_l{p}` per recorded order, then `dissipation_cum`. Values are
//! written with 17 significant digits, which round-trips every `f64`.

use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::Path;

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};

pub fn header(orders: &[f64]) -> Vec<String> {
    let mut cols: Vec<String> = ["t", "dt", "energy", "min_u", "max_u", "volume_g", "residual_sup"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(orders.iter().map(|p| format!("residual_l{p}")));
    cols.push("dissipation_cum".into());
    cols
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn row(r: &DiagnosticsRecord, orders: &[f64]) -> Vec<String> {
    let mut out = vec![
        fmt(r.t),
        fmt(r.dt),
        fmt(r.energy),
        fmt(r.min_u),
        fmt(r.max_u),
        fmt(r.volume_g),
        fmt(r.residual_sup),
    ];
    out.extend(orders.iter().map(|&p| fmt(r.residual_lp(p).unwrap_or(f64::NAN))));
    out.push(fmt(r.dissipation_cum));
    out
}

/// Appends rows to a trajectory file, creating it with a header if needed.
pub struct CsvSink {
    writer: csv::Writer<BufWriter<File>>,
    orders: Vec<f64>,
    rows: u64,
}

impl CsvSink {
    pub fn create(path: &Path, orders: &[f64]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        writer.write_record(header(orders)).map_err(csv_err)?;
        Ok(Self {
            writer,
            orders: orders.to_vec(),
            rows: 0,
        })
    }

    /// Keeps the header and the first `rows` data rows, then appends after them.
    pub fn reopen_truncated(path: &Path, orders: &[f64], rows: u64) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let keep = 1 + rows as usize;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < keep {
            return Err(Error::Scenario(format!(
                "{} holds {} rows, checkpoint expects {rows}",
                path.display(),
                lines.len().saturating_sub(1)
            )));
        }
        if lines[0].split(',').map(str::to_string).collect::<Vec<_>>() != header(orders) {
            return Err(Error::Scenario(format!("{} has an unexpected header", path.display())));
        }
        let mut prefix = lines[..keep].join("\n");
        prefix.push('\n');
        fs::write(path, prefix)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            writer: csv::Writer::from_writer(BufWriter::new(file)),
            orders: orders.to_vec(),
            rows,
        })
    }

    pub fn append(&mut self, records: &[DiagnosticsRecord]) -> Result<()> {
        for r in records {
            self.writer.write_record(row(r, &self.orders)).map_err(csv_err)?;
            self.rows += 1;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads a trajectory file back; `step` holds the row index since the file has no step column.
pub fn read_trajectory(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let bad = |msg: String| Error::Scenario(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let cols: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if cols.len() < 8 || cols[..7] != header(&[])[..7] || cols.last().map(String::as_str) != Some("dissipation_cum") {
        return Err(bad("unexpected header".into()));
    }
    let orders = cols[7..cols.len() - 1]
        .iter()
        .map(|c| {
            c.strip_prefix("residual_l")
                .and_then(|p| p.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("bad column {c}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let v = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if v.len() != cols.len() {
            return Err(bad(format!("row {} has {} fields", i + 1, v.len())));
        }
        out.push(DiagnosticsRecord {
            t: v[0],
            dt: v[1],
            step: i as u64,
            energy: v[2],
            min_u: v[3],
            max_u: v[4],
            volume_g: v[5],
            residual_sup: v[6],
            residual_lp: orders.iter().copied().zip(v[7..].iter().copied()).collect(),
            dissipation_cum: v[v.len() - 1],
        });
    }
    Ok(out)
}

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::write_atomic;

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub rec: f64,
    pub edge: f64,
    pub total: f64,
    pub seen_pmd: Option<f64>,
    pub unseen_pmd: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

const HEADER: &str = "epoch,rec,edge,total,seen_pmd,unseen_pmd,seconds";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

impl MetricsLog {
    /// Appends a row. Epochs must increase.
    pub fn push(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last() {
            assert!(row.epoch > last.epoch, "epoch {} after {}", row.epoch, last.epoch);
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// CSV text. Without `with_time` the `seconds` column is left empty so the
    /// file depends only on the seed.
    pub fn csv(&self, with_time: bool) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.rows {
            let seconds = if with_time { format!("{:.3}", r.seconds) } else { String::new() };
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{},{},{}\n",
                r.epoch,
                r.rec,
                r.edge,
                r.total,
                opt(r.seen_pmd),
                opt(r.unseen_pmd),
                seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, with_time: bool) -> io::Result<()> {
        write_atomic(path.as_ref(), self.csv(with_time).as_bytes())
    }

    /// Parses a file written by [`MetricsLog::write_csv`].
    pub fn parse_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err("missing metrics header".into());
        }
        let mut log = Self::default();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("row {}: expected 7 fields, got {}", i + 1, f.len()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1));
            let maybe = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            log.rows.push(MetricsRow {
                epoch: f[0].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
                rec: num(f[1])?,
                edge: num(f[2])?,
                total: num(f[3])?,
                seen_pmd: maybe(f[4])?,
                unseen_pmd: maybe(f[5])?,
                seconds: maybe(f[6])?.unwrap_or(0.0),
            });
        }
        Ok(log)
    }
}

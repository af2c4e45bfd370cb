//! Tab-separated result tables.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use lapar_core::oracle::AblationRow;
use lapar_core::train::LogRow;

use crate::error::{io_err, Result};
use crate::imageio::write_atomic;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header.join("\t");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Parses [`Table::to_tsv`] output.
    pub fn from_tsv(text: &str) -> Self {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines
            .next()
            .map(|h| h.split('\t').map(String::from).collect())
            .unwrap_or_default();
        let rows = lines.map(|l| l.split('\t').map(String::from).collect()).collect();
        Self { header, rows }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut t = Table::new(&["dictionary", "L", "psnr_db", "mean_residual"]);
    for r in rows {
        t.push(vec![
            r.dictionary.clone(),
            r.l.to_string(),
            format!("{:.4}", r.psnr_db),
            format!("{:.6e}", r.mean_residual),
        ]);
    }
    t
}

pub const LOG_HEADER: &str = "iter\tlr\tloss\tval_psnr";

/// Appends training log rows, writing the header when the file is new.
/// Losses are printed with round-trip precision so logs can be compared
/// exactly.
pub fn append_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut text = String::new();
    if fresh {
        text.push_str(LOG_HEADER);
        text.push('\n');
    }
    for r in rows {
        let val = r.val_psnr.map(|v| format!("{v:.4}")).unwrap_or_default();
        text.push_str(&format!("{}\t{:e}\t{:?}\t{val}\n", r.iter, r.lr, r.loss));
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

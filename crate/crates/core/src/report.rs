//! Score tables as aligned text and CSV.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub origin: String,
    /// Mean nDCG per cutoff on a 0..1 scale.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub dataset: String,
    pub num_queries: usize,
    pub cutoffs: Vec<usize>,
    pub rows: Vec<ReportRow>,
    /// Free-form `key: value` lines printed under the table.
    pub notes: Vec<(String, String)>,
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Report {
    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Value of `label` at `cutoff` on a 0..1 scale.
    pub fn value(&self, label: &str, cutoff: usize) -> Option<f64> {
        let i = self.cutoffs.iter().position(|&c| c == cutoff)?;
        self.row(label).map(|r| r.values[i])
    }

    fn headers(&self) -> Vec<String> {
        let mut h = vec!["prompt".to_string(), "origin".to_string()];
        h.extend(self.cutoffs.iter().map(|k| format!("nDCG@{k}")));
        h
    }

    pub fn to_text(&self) -> String {
        let headers = self.headers();
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut c = vec![r.label.clone(), r.origin.clone()];
                c.extend(r.values.iter().map(|&v| pct(v)));
                c
            })
            .collect();
        let widths: Vec<usize> = (0..headers.len())
            .map(|i| {
                cells
                    .iter()
                    .map(|c| c[i].chars().count())
                    .chain([headers[i].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |c: &[String]| -> String {
            c.iter()
                .enumerate()
                .map(|(i, s)| {
                    if i < 2 {
                        format!("{s:<w$}", w = widths[i])
                    } else {
                        format!("{s:>w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\ndataset: {} ({} queries)\n\n", self.title, self.dataset, self.num_queries);
        out.push_str(&line(&headers));
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for c in &cells {
            out.push_str(&line(c));
            out.push('\n');
        }
        if !self.notes.is_empty() {
            out.push('\n');
            for (k, v) in &self.notes {
                out.push_str(&format!("{k}: {v}\n"));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.headers().iter().map(|h| csv_field(&h.to_lowercase())).collect::<Vec<_>>().join(",");
        out.push('\n');
        for r in &self.rows {
            let mut c = vec![csv_field(&r.label), csv_field(&r.origin)];
            c.extend(r.values.iter().map(|&v| pct(v)));
            out.push_str(&c.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.txt` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

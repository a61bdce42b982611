//! Text, CSV and table renderings of extensions and comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::graph::CallSequence;
use crate::registry::ProtocolId;
use crate::semantics::Model;

use super::{extension, ExtensionReport};

pub const EPSILON: &str = "ε";

pub fn history_text(h: &CallSequence) -> String {
    if h.calls().is_empty() {
        EPSILON.to_string()
    } else {
        h.to_string()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mark(successful: bool) -> &'static str {
    if successful {
        "✓"
    } else {
        "×"
    }
}

impl ExtensionReport {
    /// One terminal history per line with its mark.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.terminals {
            let _ = writeln!(out, "{} {}", history_text(&t.history), mark(t.successful));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("history,successful\n");
        for t in &self.terminals {
            let _ = writeln!(out, "{},{}", history_text(&t.history), t.successful);
        }
        out
    }

    pub fn count_line(&self) -> String {
        format!(
            "terminal={} successful={}",
            self.terminal_count(),
            self.successful_count()
        )
    }
}

/// Terminal histories of several protocols side by side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    /// Rows in lexicographic order; `None` where the history is not terminal.
    pub rows: Vec<(CallSequence, Vec<Option<bool>>)>,
}

/// Builds the table; with `after`, only histories extending it are kept and
/// the prefix is stripped.
pub fn compare(
    model: &mut Model,
    protocols: &[ProtocolId],
    after: Option<&CallSequence>,
) -> Result<ComparisonTable> {
    let mut rows: BTreeMap<CallSequence, Vec<Option<bool>>> = BTreeMap::new();
    let mut columns = Vec::new();
    for (col, &p) in protocols.iter().enumerate() {
        let report = extension(model, p)?;
        columns.push(report.protocol.clone());
        for t in report.terminals {
            let key = match after {
                Some(prefix) if !t.history.starts_with(prefix) => continue,
                Some(prefix) => t.history.calls()[prefix.calls().len()..].to_vec().into(),
                None => t.history,
            };
            rows.entry(key).or_insert_with(|| vec![None; protocols.len()])[col] = Some(t.successful);
        }
    }
    Ok(ComparisonTable {
        columns,
        rows: rows.into_iter().collect(),
    })
}

impl ComparisonTable {
    fn cell(v: Option<bool>) -> &'static str {
        v.map_or("", mark)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("history");
        for c in &self.columns {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (h, cells) in &self.rows {
            out.push_str(&history_text(h));
            for &v in cells {
                out.push(',');
                out.push_str(Self::cell(v));
            }
            out.push('\n');
        }
        out
    }

    /// Columns padded to equal width.
    pub fn to_table(&self) -> String {
        let first = self
            .rows
            .iter()
            .map(|(h, _)| history_text(h).chars().count())
            .chain([7])
            .max()
            .unwrap_or(7);
        let widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count().max(1)).collect();
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
        let mut out = pad("history", first);
        for (c, &w) in self.columns.iter().zip(&widths) {
            out.push_str(" | ");
            out.push_str(&pad(c, w));
        }
        out.push('\n');
        for (h, cells) in &self.rows {
            out.push_str(&pad(&history_text(h), first));
            for (&v, &w) in cells.iter().zip(&widths) {
                out.push_str(" | ");
                out.push_str(&pad(Self::cell(v), w));
            }
            out.push('\n');
        }
        out
    }

    /// Successful and unsuccessful counts per column.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        (0..self.columns.len())
            .map(|c| {
                let mut s = (0, 0);
                for (_, cells) in &self.rows {
                    match cells[c] {
                        Some(true) => s.0 += 1,
                        Some(false) => s.1 += 1,
                        None => {}
                    }
                }
                s
            })
            .collect()
    }
}

//! Text tables: one row per method, M_clip and M_ram per split, then Avg.
//! Values are percentages with two decimals.

use std::collections::BTreeSet;

use super::MetricReport;

#[derive(Debug, Clone)]
pub struct TableRow {
    pub label: String,
    pub report: MetricReport,
}

impl TableRow {
    pub fn new(label: impl Into<String>, report: MetricReport) -> Self {
        Self { label: label.into(), report }
    }

    fn cells(&self, splits: &BTreeSet<u8>) -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(splits.len() * 2 + 2);
        for s in splits {
            let r = self.report.per_split.get(s);
            out.push(r.map(|r| r.m_clip * 100.0));
            out.push(r.map(|r| r.m_ram * 100.0));
        }
        let finite = |v: f64| v.is_finite().then_some(v * 100.0);
        out.push(finite(self.report.avg.m_clip));
        out.push(finite(self.report.avg.m_ram));
        out
    }
}

fn header(splits: &BTreeSet<u8>) -> Vec<String> {
    let mut h = vec!["Method".to_string()];
    for s in splits {
        h.push(format!("S{s} M_clip"));
        h.push(format!("S{s} M_ram"));
    }
    h.push("Avg M_clip".into());
    h.push("Avg M_ram".into());
    h
}

fn layout(rows: Vec<Vec<String>>) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

fn all_splits(rows: &[TableRow]) -> BTreeSet<u8> {
    rows.iter().flat_map(|r| r.report.per_split.keys().copied()).collect()
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

pub fn render_table(rows: &[TableRow]) -> String {
    let splits = all_splits(rows);
    let mut grid = vec![header(&splits)];
    for row in rows {
        let mut line = vec![row.label.clone()];
        line.extend(row.cells(&splits).into_iter().map(fmt_cell));
        grid.push(line);
    }
    layout(grid)
}

/// Like [`render_table`], with every cell after the first row annotated by
/// its difference from the first row, e.g. `81.23 (+1.60)`.
pub fn render_delta_table(rows: &[TableRow]) -> String {
    let splits = all_splits(rows);
    let mut grid = vec![header(&splits)];
    let base = rows.first().map(|r| r.cells(&splits)).unwrap_or_default();
    for (i, row) in rows.iter().enumerate() {
        let mut line = vec![row.label.clone()];
        for (cell, b) in row.cells(&splits).into_iter().zip(&base) {
            let text = match (cell, b, i) {
                (Some(v), Some(b), i) if i > 0 => format!("{v:.2} ({:+.2})", v - b),
                (v, _, _) => fmt_cell(v),
            };
            line.push(text);
        }
        grid.push(line);
    }
    layout(grid)
}

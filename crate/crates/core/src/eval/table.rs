use std::fmt;

use super::ExperimentReport;

/// Rendered in the type-I column when a dataset has no irrelevant features.
pub const EMPTY_CELL: &str = "—";

const HEADER: [&str; 5] = ["Dataset", "p", "|R|", "Power", "Type-I Error"];
const EMPTY_FOOTNOTE: &str =
    "— no irrelevant features (|R| = p); type-I error is undefined for this dataset.";

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub footnotes: Vec<String>,
}

fn rate(v: Option<f64>) -> String {
    v.map_or_else(|| EMPTY_CELL.to_string(), |x| format!("{x:.2}"))
}

/// One row per dataset, in report order, with rates rounded to two decimals.
pub fn table_report(report: &ExperimentReport) -> RenderedTable {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.p.to_string(),
                r.relevant_count.to_string(),
                rate(r.power),
                rate(r.type1),
            ]
        })
        .collect();
    let mut footnotes = Vec::new();
    if report.rows.iter().any(|r| r.type1.is_none()) {
        footnotes.push(EMPTY_FOOTNOTE.to_string());
    }
    if report.has_failures() {
        footnotes.push(format!(
            "{} test(s) failed; see the failures list in report.json.",
            report.failures.len()
        ));
    }
    RenderedTable {
        header: HEADER.iter().map(|s| s.to_string()).collect(),
        rows,
        footnotes,
    }
}

impl fmt::Display for RenderedTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        };
        writeln!(f, "{}", line(&self.header))?;
        for row in &self.rows {
            writeln!(f, "{}", line(row))?;
        }
        for note in &self.footnotes {
            writeln!(f, "{note}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::DgpName;
    use crate::eval::{DatasetRow, ExperimentConfig, PooledPValues};

    fn report(rows: Vec<DatasetRow>) -> ExperimentReport {
        ExperimentReport {
            config: ExperimentConfig::default(),
            rows,
            pooled: PooledPValues::default(),
            failures: Vec::new(),
        }
    }

    fn row(d: DgpName, power: Option<f64>, type1: Option<f64>) -> DatasetRow {
        DatasetRow {
            dataset: d,
            label: d.label().into(),
            p: d.p(),
            relevant_count: d.relevant_set().len(),
            power,
            type1,
            relevant_cells: 0,
            irrelevant_cells: 0,
            failed_cells: 0,
        }
    }

    #[test]
    fn formats_rates() {
        let t = table_report(&report(vec![row(DgpName::LinearSparse, Some(1.0), Some(0.028_57))]));
        assert_eq!(t.rows[0], vec!["Linear (sparse)", "10", "3", "1.00", "0.03"]);
        assert!(t.footnotes.is_empty());
    }

    #[test]
    fn empty_irrelevant_set_gets_dash_and_footnote() {
        let t = table_report(&report(vec![row(DgpName::LinearDense, Some(1.0), None)]));
        assert_eq!(t.rows[0][4], EMPTY_CELL);
        assert_eq!(t.footnotes.len(), 1);
        let text = t.to_string();
        assert!(text.contains("Linear (dense)"));
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use super::{ecdf, qq_uniform, table_report, ExperimentReport};
use crate::error::Result;

type Pairs = Vec<(f64, f64)>;

pub const BENCH_FILES: [&str; 5] = [
    "table.csv",
    "report.json",
    "ecdf_relevant.csv",
    "ecdf_irrelevant.csv",
    "qq_null.csv",
];

fn write_pairs(path: &Path, header: [&str; 2], pairs: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (a, b) in pairs {
        // `Display` for f64 is the shortest string that round-trips.
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the table, full JSON report and plot-ready diagnostics into `dir`.
/// Empty p-value pools produce header-only CSVs.
pub fn write_bench_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let path = |name: &str| dir.join(name);

    let table = table_report(report);
    let mut w = csv::Writer::from_path(path("table.csv"))?;
    w.write_record(["dataset", "p", "relevant", "power", "type1"])?;
    for (row, src) in table.rows.iter().zip(&report.rows) {
        w.write_record([
            src.dataset.as_str(),
            row[1].as_str(),
            row[2].as_str(),
            row[3].as_str(),
            row[4].as_str(),
        ])?;
    }
    w.flush()?;

    fs::write(path("report.json"), serde_json::to_string_pretty(report)? + "\n")?;

    let relevant = report.relevant_p_values();
    let irrelevant = report.irrelevant_p_values();
    let or_empty = |v: &[f64], f: fn(&[f64]) -> Result<Pairs>| {
        if v.is_empty() {
            Ok(Vec::new())
        } else {
            f(v)
        }
    };
    write_pairs(&path("ecdf_relevant.csv"), ["p_value", "ecdf"], &or_empty(&relevant, ecdf)?)?;
    write_pairs(&path("ecdf_irrelevant.csv"), ["p_value", "ecdf"], &or_empty(&irrelevant, ecdf)?)?;
    write_pairs(&path("qq_null.csv"), ["theoretical", "empirical"], &or_empty(&irrelevant, qq_uniform)?)?;

    Ok(BENCH_FILES.iter().map(|f| path(f)).collect())
}

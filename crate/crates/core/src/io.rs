//! Dataset CSV files and the ground-truth sidecar.
//!
//! Dataset CSVs have a header row `x1,...,xp,y`; the last column is always the
//! target. Categorical values are written as integer level indices.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind};
use crate::dgp::{DgpInstance, DgpName};
use crate::error::{Error, Result};

/// Ground truth written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub name: DgpName,
    pub n: usize,
    pub p: usize,
    pub relevant_set: Vec<usize>,
    pub seed: u64,
}

impl Truth {
    pub fn of(inst: &DgpInstance, seed: u64) -> Truth {
        Truth {
            name: inst.spec.name,
            n: inst.spec.n,
            p: inst.spec.p,
            relevant_set: inst.spec.relevant_set.clone(),
            seed,
        }
    }
}

/// `data.csv` -> `data.truth.json`.
pub fn truth_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("truth.json")
}

pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(data.p() + 1);
    for i in 0..data.n() {
        record.clear();
        record.extend((0..data.p()).map(|j| data.get(i, j).to_string()));
        record.push(data.target()[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV. Feature kinds default to continuous.
pub fn read_dataset_csv(
    path: &Path,
    kinds: Option<Vec<FeatureKind>>,
    target_kind: FeatureKind,
) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    if width < 2 {
        return Err(Error::InvalidData(format!(
            "{}: need at least one feature column and a target column",
            path.display()
        )));
    }
    let p = width - 1;
    let mut columns = vec![Vec::new(); p];
    let mut target = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidData(format!(
                    "{}: row {}, column {}: `{field}` is not a number",
                    path.display(),
                    line + 1,
                    c + 1
                ))
            })?;
            if c < p {
                columns[c].push(v);
            } else {
                target.push(v);
            }
        }
    }
    let kinds = kinds.unwrap_or_else(|| vec![FeatureKind::Continuous; p]);
    Dataset::from_columns(columns, kinds, target, target_kind)
}

pub fn write_truth(truth: &Truth, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(truth)? + "\n")?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

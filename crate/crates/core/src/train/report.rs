use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{Confusion, Roc};
use crate::cohort::Task;
use crate::error::{Error, Result};
use crate::models::ArchId;

pub const METRICS_HEADER: [&str; 6] = ["task", "arch", "ACC", "SEN", "SPE", "AUC"];
pub const ROC_HEADER: [&str; 3] = ["threshold", "FPR", "TPR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub arch: ArchId,
    /// Row label replacing the architecture name in tables.
    pub name: Option<String>,
    pub n: usize,
    pub confusion: Confusion,
    pub roc: Roc,
}

impl MetricsReport {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.arch.to_string())
    }

    pub fn auc(&self) -> f64 {
        self.roc.auc
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `metrics.csv` plus one `roc_<task>_<label>.csv` per report and
/// returns the written paths. ROC rows run from threshold `inf` at (0, 0)
/// to `-inf` at (1, 1).
pub fn emit_report(reports: &[MetricsReport], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    if reports.is_empty() {
        return Err(Error::EmptyInput("emit_report needs at least one report"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics = out_dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&metrics).map_err(|e| csv_err(&metrics, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(&metrics, e))?;
    let mut written = vec![metrics.clone()];
    let mut used = BTreeSet::new();
    for r in reports {
        let c = &r.confusion;
        w.write_record([
            r.task.to_string(),
            r.label(),
            c.acc.to_string(),
            c.sen.to_string(),
            c.spe.to_string(),
            r.auc().to_string(),
        ])
        .map_err(|e| csv_err(&metrics, e))?;

        let base = format!("roc_{}_{}", r.task, sanitize(&r.label()));
        let mut name = base.clone();
        let mut k = 2;
        while !used.insert(name.clone()) {
            name = format!("{base}_{k}");
            k += 1;
        }
        let path = out_dir.join(format!("{name}.csv"));
        let mut rw = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        rw.write_record(ROC_HEADER).map_err(|e| csv_err(&path, e))?;
        for p in &r.roc.points {
            rw.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
        rw.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    w.flush().map_err(|e| Error::io(&metrics, e))?;
    Ok(written)
}

/// Every `*.json` metrics report directly inside `dir`, in file-name order.
pub fn read_reports(dir: impl AsRef<Path>) -> Result<Vec<MetricsReport>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        if let Ok(r) = MetricsReport::read(&p) {
            out.push(r);
        }
    }
    Ok(out)
}

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 8] = [
    "step",
    "L_original",
    "L_adversarial",
    "R_t",
    "b_t",
    "mean_policy_prob",
    "aid_keep_fraction",
    "val_accuracy",
];

/// One row of the per-step log. Fields a mode does not produce are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub l_original: f64,
    pub l_adversarial: Option<f64>,
    pub reward: Option<f64>,
    pub baseline: Option<f64>,
    pub mean_policy_prob: Option<f64>,
    /// Kept fraction of the mask used for the classifier's second update.
    pub aid_keep_fraction: Option<f64>,
    pub val_accuracy: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StepMetrics {
    fn record(&self) -> [String; 8] {
        [
            self.step.to_string(),
            self.l_original.to_string(),
            cell(self.l_adversarial),
            cell(self.reward),
            cell(self.baseline),
            cell(self.mean_policy_prob),
            cell(self.aid_keep_fraction),
            cell(self.val_accuracy),
        ]
    }
}

/// Appends rows to a metrics CSV, writing the header when the file is new.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    /// Creates (truncating) `path` and writes `rows` after the header.
    pub fn create(path: &Path, rows: &[StepMetrics]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            inner: csv::Writer::from_writer(file),
            path: path.to_path_buf(),
        };
        w.inner.write_record(METRICS_HEADER).map_err(|e| w.csv_err(e))?;
        for r in rows {
            w.push(r)?;
        }
        Ok(w)
    }

    pub fn push(&mut self, row: &StepMetrics) -> Result<()> {
        self.inner.write_record(row.record()).map_err(|e| self.csv_err(e))?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn csv_err(&self, source: csv::Error) -> Error {
        Error::Csv { path: self.path.clone(), source }
    }
}

pub fn write_metrics(path: &Path, rows: &[StepMetrics]) -> Result<()> {
    MetricsWriter::create(path, rows)?.inner.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::InvalidArgument(format!("{}: unexpected metrics header", path.display())));
    }
    let bad = |line: usize, what: &str| Error::InvalidArgument(format!("{}: row {line}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let opt = |k: usize| -> Result<Option<f64>> {
            let s = rec.get(k).unwrap_or("");
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(i + 1, METRICS_HEADER[k]))
            }
        };
        rows.push(StepMetrics {
            step: rec.get(0).unwrap_or("").parse().map_err(|_| bad(i + 1, "step"))?,
            l_original: opt(1)?.ok_or_else(|| bad(i + 1, "L_original"))?,
            l_adversarial: opt(2)?,
            reward: opt(3)?,
            baseline: opt(4)?,
            mean_policy_prob: opt(5)?,
            aid_keep_fraction: opt(6)?,
            val_accuracy: opt(7)?,
        });
    }
    Ok(rows)
}

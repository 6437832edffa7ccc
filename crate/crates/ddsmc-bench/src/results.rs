//! Result rows and their CSV file.
//!
//! The file is appended to one row per seed, so a run interrupted midway
//! resumes at the first seed without a row. Floats are printed with 17
//! significant digits, which round-trips `f64` exactly.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

/// Bumped whenever columns are added, removed or reordered.
pub const SCHEMA_VERSION: u32 = 1;

pub const HEADER: [&str; 17] = [
    "schema_version",
    "task",
    "seed",
    "d_x",
    "d_y",
    "eta",
    "recon",
    "n",
    "steps",
    "sigma_y",
    "metric",
    "value",
    "swd_projections",
    "metric_seed",
    "num_samples",
    "ess_min",
    "wall_ms",
];

/// One row per (config, seed). `value` is the sliced Wasserstein distance for
/// the continuous tasks and the TV distance for the discrete one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub task: String,
    pub seed: u64,
    pub d_x: usize,
    pub d_y: usize,
    pub eta: f64,
    pub recon: String,
    pub n: usize,
    pub steps: usize,
    pub sigma_y: f64,
    pub metric: String,
    pub value: f64,
    pub swd_projections: usize,
    pub metric_seed: u64,
    pub num_samples: usize,
    pub ess_min: f64,
    pub wall_ms: u64,
}

/// `x` with 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

impl ResultRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.schema_version.to_string(),
            self.task.clone(),
            self.seed.to_string(),
            self.d_x.to_string(),
            self.d_y.to_string(),
            format_float(self.eta),
            self.recon.clone(),
            self.n.to_string(),
            self.steps.to_string(),
            format_float(self.sigma_y),
            self.metric.clone(),
            format_float(self.value),
            self.swd_projections.to_string(),
            self.metric_seed.to_string(),
            self.num_samples.to_string(),
            format_float(self.ess_min),
            self.wall_ms.to_string(),
        ]
    }
}

/// Appends rows to a CSV file, writing the header when the file is new.
pub struct ResultSink {
    path: PathBuf,
    writer: csv::Writer<File>,
    done: BTreeSet<u64>,
    rows: Vec<ResultRow>,
}

impl ResultSink {
    /// Opens `path`, keeping rows already present. A file with a different
    /// header is refused rather than mixed.
    pub fn open(path: &Path) -> anyhow::Result<Self> {
        let existing = if path.exists() {
            read_rows(path)?
        } else {
            Vec::new()
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
        }
        let fresh = existing.is_empty();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        if fresh {
            file.set_len(0)
                .with_context(|| format!("truncating {}", path.display()))?;
        }
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer
                .write_record(HEADER)
                .and_then(|_| writer.flush().map_err(Into::into))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            writer,
            done: existing.iter().map(|r| r.seed).collect(),
            rows: existing,
        })
    }

    pub fn has_seed(&self, seed: u64) -> bool {
        self.done.contains(&seed)
    }

    pub fn push(&mut self, row: ResultRow) -> anyhow::Result<()> {
        self.writer
            .write_record(row.record())
            .and_then(|_| self.writer.flush().map_err(Into::into))
            .with_context(|| format!("writing {}", self.path.display()))?;
        self.done.insert(row.seed);
        self.rows.push(row);
        Ok(())
    }

    /// Every row in the file, previous runs included.
    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_rows(path: &Path) -> anyhow::Result<Vec<ResultRow>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = reader
        .headers()
        .with_context(|| format!("reading {}", path.display()))?
        .clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.iter().ne(HEADER.iter().copied()) {
        bail!(
            "{} has an incompatible header (schema version {} expected)",
            path.display(),
            SCHEMA_VERSION
        );
    }
    reader
        .deserialize()
        .map(|r| r.with_context(|| format!("parsing {}", path.display())))
        .collect()
}

/// Mean and sample standard deviation of the `value` column.
pub fn summarize(rows: &[ResultRow]) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.value).sum::<f64>() / n;
    let var = if rows.len() > 1 {
        rows.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kmsig_core::detector::WindowSummary;
use kmsig_core::io::{write_distances_csv, write_frame_csv, write_labels_csv, write_scores_csv};
use kmsig_core::{DeltaScoreSeries, TimeSeriesFrame, WindowConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// One written artifact.
#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Run manifest, written last as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    /// Hash of the scenario file's bytes, when one was read.
    pub config_sha256: Option<String>,
    pub window: Option<WindowConfig>,
    pub files: Vec<FileEntry>,
}

/// Collects files written to one directory together with their hashes.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn frame(&mut self, name: &str, frame: &TimeSeriesFrame) -> Result<()> {
        let mut buf = Vec::new();
        write_frame_csv(frame, &mut buf)?;
        self.write(name, &buf)
    }

    pub fn labels(&mut self, ids: &[String], attacked: &[bool]) -> Result<()> {
        let mut buf = Vec::new();
        write_labels_csv(ids, attacked, &mut buf)?;
        self.write("labels.csv", &buf)
    }

    /// `scores.csv`, `distances.csv` and `summary.json`.
    pub fn scores(&mut self, series: &DeltaScoreSeries, labels: Option<&[bool]>) -> Result<()> {
        let mut buf = Vec::new();
        write_scores_csv(series, &mut buf)?;
        self.write("scores.csv", &buf)?;
        let mut buf = Vec::new();
        write_distances_csv(series, &mut buf)?;
        self.write("distances.csv", &buf)?;
        let summary = Summary::new(series, labels);
        let json = serde_json::to_vec_pretty(&summary)?;
        self.write("summary.json", &json)
    }

    pub fn finish(
        mut self,
        command: &'static str,
        seed: Option<u64>,
        config_sha256: Option<String>,
        window: Option<WindowConfig>,
    ) -> Result<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config_sha256,
            window,
            files: std::mem::take(&mut self.files),
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Per-window argmin summary, with ground truth when labels are known.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub n_windows: usize,
    pub n_sensors: usize,
    pub attacked_sensors: Vec<String>,
    /// Windows whose argmin is an attacked sensor, when labels are known.
    pub attacked_argmin_windows: Option<usize>,
    pub windows: Vec<SummaryRow>,
}

#[derive(Debug, Serialize)]
pub struct SummaryRow {
    #[serde(flatten)]
    pub window: WindowSummary,
    pub argmin_attacked: Option<bool>,
}

impl Summary {
    pub fn new(series: &DeltaScoreSeries, labels: Option<&[bool]>) -> Self {
        let attacked_sensors = labels
            .map(|l| {
                series
                    .sensor_ids
                    .iter()
                    .zip(l)
                    .filter(|(_, a)| **a)
                    .map(|(id, _)| id.clone())
                    .collect()
            })
            .unwrap_or_default();
        let windows: Vec<SummaryRow> = series
            .summary()
            .into_iter()
            .enumerate()
            .map(|(w, window)| SummaryRow {
                argmin_attacked: labels.and_then(|l| series.argmin(w).map(|i| l[i])),
                window,
            })
            .collect();
        let attacked_argmin_windows = labels.map(|_| {
            windows
                .iter()
                .filter(|r| r.argmin_attacked == Some(true))
                .count()
        });
        Self {
            n_windows: series.n_windows(),
            n_sensors: series.sensor_ids.len(),
            attacked_sensors,
            attacked_argmin_windows,
            windows,
        }
    }
}

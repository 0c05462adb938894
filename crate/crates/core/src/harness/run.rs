//! `modfl run`: executes an experiment and writes its artifact directory.
//!
//! - `config.toml`: the normalised configuration, enough to rerun
//! - `metrics.csv`: appended after every round
//! - `summary.md`: final cohort accuracies
//! - `manifest.json`: code version, seed, status and the final summary

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::metrics::{round_rows, CSV_HEADER};
use crate::error::{Error, Result};
use crate::federation::{RoundMetrics, Simulation};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub framework: String,
    pub arch: String,
    pub clients: usize,
    pub labels_per_group: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub code_version: String,
    /// Decimal string so the full 64-bit range survives JSON readers.
    pub seed: String,
    pub rounds_planned: usize,
    pub rounds_completed: usize,
    pub config: String,
    pub artifacts: Vec<String>,
    pub summary: Vec<SummaryRow>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub metrics: Vec<RoundMetrics>,
    pub summary: Vec<SummaryRow>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn summarize(config: &ExperimentConfig, last: Option<&RoundMetrics>) -> Vec<SummaryRow> {
    let Some(m) = last else { return Vec::new() };
    m.cohort_mean
        .iter()
        .map(|(arch, &acc)| SummaryRow {
            framework: config.framework.name().into(),
            arch: arch.clone(),
            clients: config.clients,
            labels_per_group: config.labels_per_group,
            accuracy: acc,
        })
        .collect()
}

/// Markdown table of final accuracies, in percent.
pub fn summary_table(rows: &[SummaryRow], round: usize) -> String {
    let mut s = format!("Final test accuracy after round {round}\n\n| framework | arch | N | P | accuracy (%) |\n|---|---|---|---|---|\n");
    for r in rows {
        s += &format!(
            "| {} | {} | {} | {} | {:.2} |\n",
            r.framework,
            r.arch,
            r.clients,
            r.labels_per_group,
            100.0 * r.accuracy
        );
    }
    s
}

struct Writer {
    dir: PathBuf,
    manifest: Manifest,
}

impl Writer {
    fn save_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Io(e.into()))?;
        write_file(&self.dir.join("manifest.json"), &(text + "\n"))
    }
}

/// Runs `config` and writes artifacts under `out_dir`. On failure the
/// manifest is left with status `incomplete` and the error.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let config_text = config.to_toml();
    write_file(&out_dir.join("config.toml"), &config_text)?;
    let mut w = Writer {
        dir: out_dir.to_path_buf(),
        manifest: Manifest {
            status: RunStatus::Running,
            code_version: CODE_VERSION.into(),
            seed: config.seed.to_string(),
            rounds_planned: config.rounds,
            rounds_completed: 0,
            config: config_text,
            artifacts: vec!["config.toml".into(), "metrics.csv".into(), "manifest.json".into()],
            summary: Vec::new(),
            error: None,
        },
    };
    w.save_manifest()?;

    let result = execute(config, &mut w);
    match result {
        Ok(metrics) => {
            let summary = summarize(config, metrics.last());
            write_file(&out_dir.join("summary.md"), &summary_table(&summary, metrics.len()))?;
            w.manifest.artifacts.push("summary.md".into());
            w.manifest.summary = summary.clone();
            w.manifest.status = RunStatus::Complete;
            w.save_manifest()?;
            Ok(RunOutcome {
                dir: out_dir.to_path_buf(),
                metrics,
                summary,
            })
        }
        Err(e) => {
            w.manifest.status = RunStatus::Incomplete;
            w.manifest.error = Some(e.to_string());
            // the original error matters more than a failed manifest write
            let _ = w.save_manifest();
            Err(e)
        }
    }
}

fn execute(config: &ExperimentConfig, w: &mut Writer) -> Result<Vec<RoundMetrics>> {
    let csv_path = w.dir.join("metrics.csv");
    let mut csv = File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    writeln!(csv, "{CSV_HEADER}").map_err(|e| io_err(&csv_path, e))?;
    let mut sim = Simulation::new(config)?;
    let arch_of: BTreeMap<usize, String> = sim.clients().iter().map(|c| (c.id, c.arch_id.clone())).collect();
    let mut out = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let m = sim.step()?;
        let rows = round_rows(&m, &|id| arch_of[&id].clone());
        csv.write_all(super::metrics::format_rows(&rows).as_bytes())
            .map_err(|e| io_err(&csv_path, e))?;
        csv.flush().map_err(|e| io_err(&csv_path, e))?;
        out.push(m);
        w.manifest.rounds_completed = out.len();
        w.save_manifest()?;
    }
    Ok(out)
}

//! Experiment reports: JSON echo of the configuration, summaries, per-run
//! traces and plot-ready CSVs, plus the merge behind `softservo report`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::config::{ExperimentConfig, Pipeline, PredictorKind};
use super::scenario::Scenario;
use super::ExperimentError;
use crate::arm_sim::ActuationVector;
use crate::metrics::{MetricUnits, RunSummary};
use crate::servo::{gain_sweep, geometric_iterations, GainSchedule, Predictor, ServoTrace, SimContext, StoppingRule};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Cells whose mean iteration count is within this many iterations of the
/// best cell form the fastest-converging plateau.
pub const PLATEAU_SLACK: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub software_version: String,
    pub scenario: Scenario,
    pub pipeline: Pipeline,
    pub predictor: PredictorKind,
    pub config: ExperimentConfig,
    /// Simulator the episodes ran in.
    pub context: SimContext,
    /// Fields of `context` that differ from the training baseline.
    pub audit: Vec<String>,
    pub summary: Option<RunSummary>,
    /// Trace files, relative to the report's directory.
    pub traces: Vec<String>,
    pub gain_sweep: Option<GainSweepResult>,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig, scenario: Scenario, predictor: PredictorKind, context: SimContext, audit: Vec<String>) -> Self {
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario,
            pipeline: scenario.pipeline(),
            predictor,
            config: cfg.clone(),
            context,
            audit,
            summary: None,
            traces: Vec::new(),
            gain_sweep: None,
        }
    }
}

/// Wall-clock time, kept out of the reproducible report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSweepCell {
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub mean_iterations: f64,
    pub converged: usize,
    /// Iterations per episode, measured and from the geometric closed form.
    pub measured: Vec<usize>,
    pub closed_form: Vec<usize>,
    pub max_gap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSweepResult {
    pub cells: Vec<GainSweepCell>,
    pub best_mean_iterations: f64,
    /// `(lambda_r, lambda_s)` of cells within [`PLATEAU_SLACK`] of the best.
    pub plateau: Vec<(f64, f64)>,
    pub default_gains: GainSchedule,
    pub default_in_plateau: bool,
    /// Largest |measured - closed form| over all cells and episodes.
    pub max_gap: usize,
}

impl GainSweepResult {
    /// Runs every `(lambda_r, lambda_s)` pair from `lambdas` over the
    /// episodes and compares against the closed form.
    pub fn measure(
        lambdas: &[f64],
        episodes: &[(ActuationVector, ActuationVector)],
        predictor: &dyn Predictor,
        ctx: &SimContext,
        default_gains: &GainSchedule,
    ) -> Result<Self, ExperimentError> {
        let (stop, units) = (StoppingRule::default(), MetricUnits::default());
        let raw = gain_sweep(lambdas, lambdas, episodes, predictor, ctx, &stop, &units)?;
        let cells: Vec<GainSweepCell> = raw
            .into_iter()
            .map(|c| {
                let g = GainSchedule {
                    lambda_r: c.lambda_r,
                    lambda_s: c.lambda_s,
                };
                let closed_form: Vec<usize> = episodes
                    .iter()
                    .map(|(i, t)| geometric_iterations(i, t, &g, &stop, &units))
                    .collect();
                let max_gap = c
                    .iterations
                    .iter()
                    .zip(&closed_form)
                    .map(|(m, f)| m.abs_diff(*f))
                    .max()
                    .unwrap_or(0);
                GainSweepCell {
                    lambda_r: c.lambda_r,
                    lambda_s: c.lambda_s,
                    mean_iterations: c.mean_iterations,
                    converged: c.converged,
                    measured: c.iterations,
                    closed_form,
                    max_gap,
                }
            })
            .collect();
        let best = cells.iter().map(|c| c.mean_iterations).fold(f64::INFINITY, f64::min);
        let plateau: Vec<(f64, f64)> = cells
            .iter()
            .filter(|c| c.mean_iterations <= best + PLATEAU_SLACK)
            .map(|c| (c.lambda_r, c.lambda_s))
            .collect();
        let same = |a: f64, b: f64| (a - b).abs() < 1e-9;
        let default_in_plateau = plateau
            .iter()
            .any(|(r, s)| same(*r, default_gains.lambda_r) && same(*s, default_gains.lambda_s));
        Ok(GainSweepResult {
            max_gap: cells.iter().map(|c| c.max_gap).max().unwrap_or(0),
            cells,
            best_mean_iterations: best,
            plateau,
            default_gains: *default_gains,
            default_in_plateau,
        })
    }

    pub const CSV_HEADER: &'static str = "lambda_r,lambda_s,mean_iterations,converged,max_gap";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.lambda_r, c.lambda_s, c.mean_iterations, c.converged, c.max_gap
            ));
        }
        s
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Format(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(ExperimentError::io(parent))?;
    }
    fs::write(path, text).map_err(ExperimentError::io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path).map_err(ExperimentError::io(path))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Format(format!("{}: {e}", path.display())))
}

pub fn trace_name(run: usize) -> String {
    format!("traces/run_{run:02}.json")
}

pub const ERRORS_HEADER: &str = "run,iteration,translation_cm,rotation_rad";

fn runs_csv(traces: &[ServoTrace]) -> String {
    let mut s = format!("{}\n", ServoTrace::CSV_HEADER);
    for (i, t) in traces.iter().enumerate() {
        s.push_str(&t.csv_row(i));
        s.push('\n');
    }
    s
}

fn errors_csv(traces: &[ServoTrace]) -> String {
    let mut s = format!("{ERRORS_HEADER}\n");
    for (i, t) in traces.iter().enumerate() {
        for row in t.error_rows(i) {
            s.push_str(&row);
            s.push('\n');
        }
    }
    s
}

/// Writes `report.json`, one JSON file per trace, `runs.csv`, the error
/// histograms and the long-format per-iteration error table into `dir`.
pub fn write_scenario(dir: &Path, report: &ExperimentReport, traces: &[ServoTrace]) -> Result<Vec<PathBuf>, ExperimentError> {
    let trace_dir = dir.join("traces");
    if trace_dir.exists() {
        fs::remove_dir_all(&trace_dir).map_err(ExperimentError::io(&trace_dir))?;
    }
    let mut written = vec![dir.join("report.json")];
    write_json(&written[0], report)?;
    for (name, t) in report.traces.iter().zip(traces) {
        let p = dir.join(name);
        write_json(&p, t)?;
        written.push(p);
    }
    let mut files: Vec<(&str, String)> = Vec::new();
    if let Some(s) = &report.summary {
        files.push(("runs.csv", runs_csv(traces)));
        files.push(("hist_translation.csv", s.translation_hist.to_csv()));
        files.push(("hist_rotation.csv", s.rotation_hist.to_csv()));
        files.push(("errors_long.csv", errors_csv(traces)));
    }
    if let Some(g) = &report.gain_sweep {
        files.push(("gain_sweep.csv", g.to_csv()));
    }
    for (name, text) in files {
        let p = dir.join(name);
        write_text(&p, &text)?;
        written.push(p);
    }
    Ok(written)
}

/// Reads a report, checking its schema version before anything else.
pub fn read_report(path: &Path) -> Result<ExperimentReport, ExperimentError> {
    let value: serde_json::Value = read_json(path)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != REPORT_SCHEMA_VERSION {
        return Err(ExperimentError::Schema {
            path: path.to_path_buf(),
            found,
            expected: REPORT_SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| ExperimentError::Format(format!("{}: {e}", path.display())))
}

/// Table header of the merged report.
pub const TABLE_HEADER: &str = RunSummary::TABLE_HEADER;

/// Merges reports into `out`: `table.csv` (one row per scenario report),
/// `errors_long.csv` (scenario, run, iteration, errors), per-scenario
/// histogram CSVs and gain-sweep grids, and `merged.json`.
pub fn merge_reports(paths: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    if paths.is_empty() {
        return Err(ExperimentError::Config("no reports given".into()));
    }
    let mut table = format!("{TABLE_HEADER}\n");
    let mut errors = format!("scenario,{ERRORS_HEADER}\n");
    let mut labels = BTreeSet::new();
    let mut merged = Vec::new();
    let mut written = Vec::new();
    for (i, path) in paths.iter().enumerate() {
        let report = read_report(path)?;
        let mut label = report.scenario.name().to_string();
        if !labels.insert(label.clone()) {
            label = format!("{label}_{i}");
            labels.insert(label.clone());
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        if let Some(s) = &report.summary {
            table.push_str(&s.table_row(&label));
            table.push('\n');
            for name in &report.traces {
                let t: ServoTrace = read_json(&dir.join(name))?;
                let run = trace_index(name).unwrap_or(0);
                for row in t.error_rows(run) {
                    errors.push_str(&format!("{label},{row}\n"));
                }
            }
            for (kind, h) in [("translation", &s.translation_hist), ("rotation", &s.rotation_hist)] {
                let p = out.join(format!("hist_{kind}_{label}.csv"));
                write_text(&p, &h.to_csv())?;
                written.push(p);
            }
        }
        if let Some(g) = &report.gain_sweep {
            let p = out.join(format!("gain_sweep_{label}.csv"));
            write_text(&p, &g.to_csv())?;
            written.push(p);
        }
        merged.push(MergedEntry {
            label,
            source: path.display().to_string(),
            summary: report.summary,
            gain_sweep: report.gain_sweep,
        });
    }
    for (name, text) in [("table.csv", table), ("errors_long.csv", errors)] {
        let p = out.join(name);
        write_text(&p, &text)?;
        written.push(p);
    }
    let p = out.join("merged.json");
    write_json(
        &p,
        &MergedReport {
            schema_version: REPORT_SCHEMA_VERSION,
            entries: merged,
        },
    )?;
    written.push(p);
    Ok(written)
}

fn trace_index(name: &str) -> Option<usize> {
    name.strip_prefix("traces/run_")?.strip_suffix(".json")?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedEntry {
    pub label: String,
    pub source: String,
    pub summary: Option<RunSummary>,
    pub gain_sweep: Option<GainSweepResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedReport {
    pub schema_version: u32,
    pub entries: Vec<MergedEntry>,
}

/// Index of everything written under `--out`, keyed by the step that
/// wrote it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputManifest {
    pub schema_version: u32,
    pub software_version: String,
    pub config: ExperimentConfig,
    pub steps: std::collections::BTreeMap<String, Vec<String>>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Records `files` (made relative to `out`) under `step` in
/// `out/manifest.json`, replacing that step's previous entry.
pub fn update_manifest(out: &Path, cfg: &ExperimentConfig, step: &str, files: &[PathBuf]) -> Result<(), ExperimentError> {
    let path = out.join(MANIFEST_FILE);
    let mut m = match read_json::<OutputManifest>(&path) {
        Ok(m) if m.schema_version == REPORT_SCHEMA_VERSION => m,
        _ => OutputManifest {
            schema_version: REPORT_SCHEMA_VERSION,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            steps: Default::default(),
        },
    };
    m.config = cfg.clone();
    let rel = files
        .iter()
        .map(|f| f.strip_prefix(out).unwrap_or(f).display().to_string())
        .collect();
    m.steps.insert(step.to_string(), rel);
    write_json(&path, &m)
}

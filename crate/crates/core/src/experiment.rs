//! The benchmark harness: experiment configuration, the method/seed matrix,
//! metric aggregation, and CSV/JSON report emission.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, load_checkins, CheckinOptions, Dataset, GenConfig};
use crate::error::{Error, Result};
use crate::model::{confusion_metrics, ContactParams, Metrics};
use crate::net;
use crate::protocols::{classify_population, Backend, ClassificationResult, Method, ServerState};
use crate::rng::RngStream;
use crate::secure::SecureConstraint;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Where the benchmark data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Synthetic data; the experiment seed overrides the embedded seed.
    Synthetic {
        #[serde(flatten)]
        gen: GenConfig,
    },
    /// A check-in CSV on disk.
    File {
        path: String,
        #[serde(flatten, default)]
        options: CheckinOptions,
    },
}

/// How classifications are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Real secret sharing over in-memory channels.
    Inproc,
    /// Real secret sharing over TCP loopback (client and server threads).
    Tcp,
    /// Plaintext evaluation with exact simulated counters.
    Counting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// One experiment: a dataset source, the methods to compare, and the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub methods: Vec<Method>,
    pub params: ContactParams,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    pub format: ReportFormat,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        self.params.validate()?;
        if let DataSource::Synthetic { gen } = &self.source {
            gen.validate()?;
        }
        Ok(())
    }
}

/// One (method, seed) cell of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub n_users: usize,
    pub eps: f64,
    pub eps_p: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub secure_cmps: u64,
    pub secure_mults: u64,
    pub wall_seconds: f64,
}

/// Cross-seed aggregate for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n_users: usize,
    pub eps: f64,
    pub eps_p: f64,
    pub stat: String,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub secure_cmps: f64,
    pub secure_mults: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
}

fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &cfg.source {
        DataSource::Synthetic { gen } => {
            let gen = GenConfig { seed, ..*gen };
            gen_synthetic(&gen, &cfg.params)
        }
        DataSource::File { path, options } => {
            load_checkins(std::path::Path::new(path), options, &cfg.params)
        }
    }
}

fn classify_tcp(
    dataset: &Dataset,
    server_state: &ServerState,
    method: Method,
    seed: u64,
) -> Result<Vec<ClassificationResult>> {
    let handle = net::spawn_server(
        "127.0.0.1:0",
        server_state.clone(),
        method,
        seed,
        Some(dataset.users.len()),
    )?;
    let addr = handle.addr();
    let constraint = SecureConstraint::from_params(&server_state.params)?;
    let mut results = Vec::with_capacity(dataset.users.len());
    for (id, traj) in &dataset.users {
        results.push(net::run_client(
            addr,
            *id,
            traj,
            method,
            server_state.params.eps_user,
            &constraint,
            seed,
        )?);
    }
    let server_report = handle.join()?;
    // both halves saw the same session: cross-check decisions and counters
    if server_report.results.len() != results.len() {
        return Err(Error::protocol(format!(
            "server completed {} of {} sessions",
            server_report.results.len(),
            results.len()
        )));
    }
    let mut by_id = results.clone();
    by_id.sort_by_key(|r| r.user_id);
    for (client, server) in by_id.iter().zip(&server_report.results) {
        if client.user_id != server.user_id
            || client.predicted != server.predicted
            || client.secure_ops != server.secure_ops
        {
            return Err(Error::protocol(format!(
                "client and server disagree for user {}",
                client.user_id
            )));
        }
    }
    Ok(results)
}

/// Run the full experiment matrix: for every seed, build the dataset and run
/// every method over it; deterministic per seed in inproc and counting modes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let dataset = build_dataset(cfg, seed)
            .map_err(|e| Error::invalid(format!("seed {seed}: {e}")))?;
        let server_state = ServerState::new(dataset.patients_union.clone(), cfg.params)?;
        for &method in &cfg.methods {
            let start = Instant::now();
            let results = match cfg.mode {
                Mode::Inproc => classify_population(
                    &dataset.users,
                    &server_state,
                    method,
                    Backend::Sharing,
                    &RngStream::from_seed(seed),
                )?,
                Mode::Counting => classify_population(
                    &dataset.users,
                    &server_state,
                    method,
                    Backend::Counting,
                    &RngStream::from_seed(seed),
                )?,
                Mode::Tcp => classify_tcp(&dataset, &server_state, method, seed)?,
            };
            let wall_seconds = start.elapsed().as_secs_f64();
            let predicted: Vec<bool> = results.iter().map(|r| r.predicted).collect();
            let metrics = confusion_metrics(&predicted, &dataset.ground_truth)?;
            rows.push(ReportRow {
                method,
                n_users: dataset.users.len(),
                eps: cfg.params.eps_user,
                eps_p: cfg.params.eps_patients,
                seed,
                metrics,
                secure_cmps: results.iter().map(|r| r.secure_ops.secure_cmps).sum(),
                secure_mults: results.iter().map(|r| r.secure_ops.secure_mults).sum(),
                wall_seconds,
            });
        }
    }
    Ok(ExperimentReport::from_rows(rows))
}

impl ExperimentReport {
    /// Assemble a report from per-seed rows, computing cross-seed summaries
    /// per (method, n_users, eps, eps_p) setting in first-appearance order.
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let summary = summarize(&rows);
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            rows,
            summary,
        }
    }

    /// Concatenate several reports (e.g. the cells of a parameter sweep)
    /// into one, recomputing the summaries.
    pub fn merge(reports: Vec<ExperimentReport>) -> Self {
        ExperimentReport::from_rows(reports.into_iter().flat_map(|r| r.rows).collect())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut settings: Vec<(Method, usize, f64, f64)> = Vec::new();
    for r in rows {
        let key = (r.method, r.n_users, r.eps, r.eps_p);
        if !settings.contains(&key) {
            settings.push(key);
        }
    }
    let mut out = Vec::new();
    for (method, n_users, eps, eps_p) in settings {
        let group: Vec<&ReportRow> = rows
            .iter()
            .filter(|r| {
                r.method == method && r.n_users == n_users && r.eps == eps && r.eps_p == eps_p
            })
            .collect();
        let stats_of = |f: &dyn Fn(&ReportRow) -> f64| -> (f64, f64) {
            mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        let columns: [&dyn Fn(&ReportRow) -> f64; 7] = [
            &|r| r.metrics.recall,
            &|r| r.metrics.precision,
            &|r| r.metrics.f1,
            &|r| r.metrics.accuracy,
            &|r| r.secure_cmps as f64,
            &|r| r.secure_mults as f64,
            &|r| r.wall_seconds,
        ];
        let mut means = [0.0f64; 7];
        let mut stds = [0.0f64; 7];
        for (idx, f) in columns.iter().enumerate() {
            let (m, s) = stats_of(f);
            means[idx] = m;
            stds[idx] = s;
        }
        for (stat, vals) in [("mean", means), ("stddev", stds)] {
            out.push(SummaryRow {
                method,
                n_users,
                eps,
                eps_p,
                stat: stat.to_string(),
                recall: vals[0],
                precision: vals[1],
                f1: vals[2],
                accuracy: vals[3],
                secure_cmps: vals[4],
                secure_mults: vals[5],
                wall_seconds: vals[6],
            });
        }
    }
    out
}

/// Round to 6 significant digits; report floats are emitted through this so
/// serialized values parse back exactly as written.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(5 - mag);
    (x * factor).round() / factor
}

fn fmt_f(x: f64) -> String {
    format!("{}", round_sig6(x))
}

fn rounded_report(report: &ExperimentReport) -> ExperimentReport {
    let mut r = report.clone();
    for row in &mut r.rows {
        row.eps = round_sig6(row.eps);
        row.eps_p = round_sig6(row.eps_p);
        row.metrics.recall = round_sig6(row.metrics.recall);
        row.metrics.precision = round_sig6(row.metrics.precision);
        row.metrics.f1 = round_sig6(row.metrics.f1);
        row.metrics.accuracy = round_sig6(row.metrics.accuracy);
        row.wall_seconds = round_sig6(row.wall_seconds);
    }
    for s in &mut r.summary {
        s.eps = round_sig6(s.eps);
        s.eps_p = round_sig6(s.eps_p);
        s.recall = round_sig6(s.recall);
        s.precision = round_sig6(s.precision);
        s.f1 = round_sig6(s.f1);
        s.accuracy = round_sig6(s.accuracy);
        s.secure_cmps = round_sig6(s.secure_cmps);
        s.secure_mults = round_sig6(s.secure_mults);
        s.wall_seconds = round_sig6(s.wall_seconds);
    }
    r
}

pub const CSV_HEADER: &str = "method,n_users,eps,eps_p,seed,tp,fp,tn,fn,recall,precision,f1,accuracy,secure_cmps,secure_mults,wall_seconds";

/// Serialize a report. Column order is stable; floats carry 6 significant
/// digits; summary rows reuse the seed column for the statistic name.
pub fn emit_report<W: Write>(
    report: &ExperimentReport,
    format: ReportFormat,
    out: &mut W,
) -> Result<()> {
    let report = rounded_report(report);
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &report)
                .map_err(|e| Error::invalid(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            for r in &report.rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.method,
                    r.n_users,
                    fmt_f(r.eps),
                    fmt_f(r.eps_p),
                    r.seed,
                    r.metrics.tp,
                    r.metrics.fp,
                    r.metrics.tn,
                    r.metrics.fn_,
                    fmt_f(r.metrics.recall),
                    fmt_f(r.metrics.precision),
                    fmt_f(r.metrics.f1),
                    fmt_f(r.metrics.accuracy),
                    r.secure_cmps,
                    r.secure_mults,
                    fmt_f(r.wall_seconds),
                )?;
            }
            for s in &report.summary {
                writeln!(
                    out,
                    "{},{},{},{},{},,,,,{},{},{},{},{},{},{}",
                    s.method,
                    s.n_users,
                    fmt_f(s.eps),
                    fmt_f(s.eps_p),
                    s.stat,
                    fmt_f(s.recall),
                    fmt_f(s.precision),
                    fmt_f(s.f1),
                    fmt_f(s.accuracy),
                    fmt_f(s.secure_cmps),
                    fmt_f(s.secure_mults),
                    fmt_f(s.wall_seconds),
                )?;
            }
        }
    }
    Ok(())
}

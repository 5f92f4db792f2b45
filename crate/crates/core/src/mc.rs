//! Monte Carlo experiments: replicated estimation, summary statistics and
//! table output.
//!
//! Replication `r` draws its observed data and its simulation draws from
//! `SeedSpec(seed, r)`. Replications may run in any order and on any number
//! of threads; records are stored by index and reduced in index order, so
//! the summary tables are bit-identical across runs. Elapsed times are kept
//! out of the summary and reported in a separate timing table.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{estimate, CriterionKind, EstimOptions, StopReason, WeightScheme, Z95};
use crate::models::Model;
use crate::randsrc::SeedSpec;

/// Denominators smaller than this make a ratio cell `n/a`.
pub const RATIO_GUARD: f64 = 1e-12;

/// A replicated estimation experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McDesign {
    pub model: String,
    /// True parameter; defaults to the model's reference value.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    pub n: usize,
    /// Total periods per unit, including any unobserved initial periods.
    pub periods: usize,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses every logical core.
    #[serde(default)]
    pub threads: Option<usize>,
    pub methods: Vec<EstimOptions>,
}

impl McDesign {
    pub fn model(&self) -> Result<Model> {
        Model::from_name(&self.model)
    }

    pub fn theta0(&self, model: &Model) -> Vec<f64> {
        self.theta0.clone().unwrap_or_else(|| model.info().theta0.clone())
    }

    /// Periods that enter the data after dropping unobserved ones.
    pub fn observed_periods(&self, model: &Model) -> Result<usize> {
        let hidden = model.info().hidden;
        if self.periods <= hidden {
            return Err(Error::invalid(format!(
                "{} drops {hidden} initial periods, so periods must exceed {hidden}",
                model.name()
            )));
        }
        Ok(self.periods - hidden)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("a design needs at least one method"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be at least 1"));
        }
        model.check_theta(&self.theta0(&model))?;
        self.observed_periods(&model)?;
        let labels = self.labels();
        for (k, l) in labels.iter().enumerate() {
            if labels[..k].contains(l) {
                return Err(Error::invalid(format!("method {l:?} is listed twice")));
            }
        }
        for m in &self.methods {
            m.validate()?;
        }
        Ok(())
    }

    /// Table labels of the methods, in design order.
    pub fn labels(&self) -> Vec<String> {
        self.methods.iter().map(method_label).collect()
    }
}

/// Method name, suffixed with the criterion and weight when they differ from
/// the defaults.
pub fn method_label(opts: &EstimOptions) -> String {
    let mut s = opts.method.label().to_string();
    if opts.criterion == CriterionKind::Wald {
        s.push_str("/wald");
    }
    if opts.weight == WeightScheme::Identity {
        s.push_str("/identity");
    }
    s
}

/// Outcome of one method on one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: String,
    pub theta: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub converged: bool,
    pub stop: Option<StopReason>,
    pub iterations: usize,
    pub seconds: f64,
    /// Set when the estimation raised an error instead of returning.
    pub error: Option<String>,
}

/// Statistics for one `(model, n, method, parameter)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub n: usize,
    pub method: String,
    pub param: String,
    pub mbias: f64,
    pub ab: f64,
    pub std: f64,
    pub cv95: f64,
    /// Replications entering the statistics.
    pub used: usize,
    pub nonconverged: usize,
}

/// Mean elapsed seconds per replication for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: String,
    pub n: usize,
    pub method: String,
    pub mean_seconds: f64,
}

/// Summary of a design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub rows: Vec<SummaryRow>,
    pub timing: Vec<TimingRow>,
}

impl McSummary {
    /// Rows of a single method.
    pub fn method(&self, label: &str) -> McSummary {
        McSummary {
            rows: self.rows.iter().filter(|r| r.method == label).cloned().collect(),
            timing: self.timing.iter().filter(|r| r.method == label).cloned().collect(),
        }
    }

    pub fn row(&self, method: &str, param: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.param == param)
    }

    pub fn mean_seconds(&self, method: &str) -> Option<f64> {
        self.timing.iter().find(|r| r.method == method).map(|r| r.mean_seconds)
    }
}

/// Summary plus the per-replication records it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct McRun {
    pub summary: McSummary,
    pub records: Vec<ReplicationRecord>,
}

/// Runs every method on replication `r`.
pub fn run_replication(design: &McDesign, model: &Model, r: usize) -> Vec<ReplicationRecord> {
    let theta0 = design.theta0(model);
    let seed = SeedSpec::new(design.seed, r as u64);
    let labels = design.labels();
    let data = design
        .observed_periods(model)
        .and_then(|t| model.simulate_observed(&theta0, seed, design.n, t));
    design
        .methods
        .iter()
        .zip(labels)
        .map(|(opts, method)| {
            let res = data.as_ref().map_err(Clone::clone).and_then(|d| estimate(model, d, seed, opts, Some(&theta0)));
            match res {
                Ok(e) => ReplicationRecord {
                    replication: r,
                    method,
                    theta: e.theta,
                    se: e.se,
                    converged: e.converged,
                    stop: Some(e.stop),
                    iterations: e.iterations,
                    seconds: e.elapsed_seconds,
                    error: None,
                },
                Err(err) => ReplicationRecord {
                    replication: r,
                    method,
                    theta: Vec::new(),
                    se: None,
                    converged: false,
                    stop: None,
                    iterations: 0,
                    seconds: 0.0,
                    error: Some(err.to_string()),
                },
            }
        })
        .collect()
}

/// Runs all replications of a design and summarises them.
pub fn run_design(design: &McDesign) -> Result<McRun> {
    design.validate()?;
    let model = design.model()?;
    let records = run_all(design, &model)?;
    let summary = summarize(design, &records, Z95)?;
    Ok(McRun { summary, records })
}

#[cfg(feature = "parallel")]
fn run_all(design: &McDesign, model: &Model) -> Result<Vec<ReplicationRecord>> {
    use rayon::prelude::*;
    let work = || -> Vec<ReplicationRecord> {
        (0..design.replications)
            .into_par_iter()
            .map(|r| run_replication(design, model, r))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    match design.threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start {k} worker threads: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_all(design: &McDesign, model: &Model) -> Result<Vec<ReplicationRecord>> {
    Ok((0..design.replications).flat_map(|r| run_replication(design, model, r)).collect())
}

/// Summary statistics with intervals `θ̂ ± z · se`. Records may come in any
/// order; they are sorted by replication before reduction.
pub fn summarize(design: &McDesign, records: &[ReplicationRecord], z: f64) -> Result<McSummary> {
    let model = design.model()?;
    let theta0 = design.theta0(&model);
    let names = &model.info().param_names;
    let mut sorted: Vec<&ReplicationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.replication);
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for label in design.labels() {
        let mine: Vec<&ReplicationRecord> = sorted.iter().copied().filter(|r| r.method == label).collect();
        let ok: Vec<&ReplicationRecord> = mine.iter().copied().filter(|r| r.converged && r.theta.len() == theta0.len()).collect();
        let nonconverged = mine.len() - ok.len();
        for (k, name) in names.iter().enumerate() {
            let dev: Vec<f64> = ok.iter().map(|r| r.theta[k] - theta0[k]).collect();
            let covered = ok
                .iter()
                .filter(|r| {
                    r.se.as_ref()
                        .is_some_and(|se| (r.theta[k] - theta0[k]).abs() <= z * se[k])
                })
                .count();
            let m = dev.len() as f64;
            let (mbias, ab, std, cv95) = if dev.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mbias = dev.iter().sum::<f64>() / m;
                let ab = dev.iter().map(|d| d.abs()).sum::<f64>() / m;
                let std = if dev.len() > 1 {
                    (dev.iter().map(|d| (d - mbias).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
                } else {
                    0.0
                };
                (mbias, ab, std, covered as f64 / m)
            };
            rows.push(SummaryRow {
                model: model.name().to_string(),
                n: design.n,
                method: label.clone(),
                param: name.clone(),
                mbias,
                ab,
                std,
                cv95,
                used: dev.len(),
                nonconverged,
            });
        }
        let secs: Vec<f64> = mine.iter().filter(|r| r.error.is_none()).map(|r| r.seconds).collect();
        timing.push(TimingRow {
            model: model.name().to_string(),
            n: design.n,
            method: label,
            mean_seconds: if secs.is_empty() { f64::NAN } else { secs.iter().sum::<f64>() / secs.len() as f64 },
        });
    }
    Ok(McSummary { rows, timing })
}

/// MBIAS and STD of `b` relative to `a`; `None` marks a guarded division.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub model: String,
    pub n: usize,
    pub param: String,
    pub method_a: String,
    pub method_b: String,
    pub mbias_ratio: Option<f64>,
    pub std_ratio: Option<f64>,
}

fn guarded(num: f64, den: f64) -> Option<f64> {
    (den.abs() >= RATIO_GUARD && num.is_finite() && den.is_finite()).then(|| num / den)
}

/// Elementwise ratios of two single-method summaries over matching
/// `(model, n, parameter)` cells.
pub fn compare_ratio(a: &McSummary, b: &McSummary) -> Result<Vec<RatioRow>> {
    let key = |r: &SummaryRow| (r.model.clone(), r.n, r.param.clone());
    let mut ka: Vec<_> = a.rows.iter().map(key).collect();
    let mut kb: Vec<_> = b.rows.iter().map(key).collect();
    ka.sort();
    kb.sort();
    if ka.windows(2).any(|w| w[0] == w[1]) || kb.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("each summary must hold exactly one method"));
    }
    if ka != kb {
        return Err(Error::invalid("summaries cover different models, sample sizes or parameters"));
    }
    Ok(a.rows
        .iter()
        .map(|ra| {
            let rb = b.rows.iter().find(|rb| key(rb) == key(ra)).expect("keys match");
            RatioRow {
                model: ra.model.clone(),
                n: ra.n,
                param: ra.param.clone(),
                method_a: ra.method.clone(),
                method_b: rb.method.clone(),
                mbias_ratio: guarded(rb.mbias, ra.mbias),
                std_ratio: guarded(rb.std, ra.std),
            }
        })
        .collect())
}

/// Output layout of [`write_tables`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableFormat {
    Csv,
    AlignedText,
}

pub const SUMMARY_COLUMNS: [&str; 10] = ["model", "n", "method", "param", "mbias", "ab", "std", "cv95", "used", "nonconverged"];

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "n/a".to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

fn summary_cells(r: &SummaryRow) -> Vec<String> {
    vec![
        r.model.clone(),
        r.n.to_string(),
        r.method.clone(),
        r.param.clone(),
        fmt_num(r.mbias),
        fmt_num(r.ab),
        fmt_num(r.std),
        fmt_num(r.cv95),
        r.used.to_string(),
        r.nonconverged.to_string(),
    ]
}

/// Pads columns to a common width, numbers right-aligned.
pub fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (k, c) in r.iter().enumerate() {
            width[k] = width[k].max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k < 4 {
                    format!("{c:<w$}", w = width[k])
                } else {
                    format!("{c:>w$}", w = width[k])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>(), &mut out);
    let total: usize = width.iter().sum::<usize>() + 2 * (width.len().saturating_sub(1));
    let _ = writeln!(out, "{}", "-".repeat(total));
    for r in rows {
        line(r, &mut out);
    }
    out
}

/// Renders summary rows as CSV or aligned text. Empty input gives the header
/// only.
pub fn render_summary(summaries: &[McSummary], format: TableFormat) -> Result<String> {
    let rows: Vec<Vec<String>> = summaries.iter().flat_map(|s| s.rows.iter().map(summary_cells)).collect();
    match format {
        TableFormat::AlignedText => Ok(aligned(&SUMMARY_COLUMNS, &rows)),
        TableFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
            for s in summaries {
                for r in &s.rows {
                    w.serialize(r).map_err(csv_err)?;
                }
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes summary rows, one per `(model, n, method, parameter)`.
pub fn write_tables(summaries: &[McSummary], path: impl AsRef<Path>, format: TableFormat) -> Result<()> {
    std::fs::write(path, render_summary(summaries, format)?)?;
    Ok(())
}

/// Reads a CSV written by [`write_tables`].
pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Timing table in aligned text.
pub fn render_timing(summaries: &[McSummary]) -> String {
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .flat_map(|s| s.timing.iter())
        .map(|t| vec![t.model.clone(), t.n.to_string(), t.method.clone(), format!("{:.4}", t.mean_seconds)])
        .collect();
    aligned(&["model", "n", "method", "mean_seconds"], &rows)
}

/// Ratio table in aligned text.
pub fn render_ratios(rows: &[RatioRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.n.to_string(),
                format!("{} / {}", r.method_b, r.method_a),
                r.param.clone(),
                fmt_opt(r.mbias_ratio),
                fmt_opt(r.std_ratio),
            ]
        })
        .collect();
    aligned(&["model", "n", "methods", "param", "mbias_ratio", "std_ratio"], &cells)
}

/// One JSON object per line and replication record.
pub fn write_log<W: Write>(records: &[ReplicationRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

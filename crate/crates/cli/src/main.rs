//! `giicov` command-line interface.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use giicov::data::PanelData;
use giicov::estimate::{estimate, CriterionKind, EstimOptions, EstimationResult, Method, WeightScheme};
use giicov::mc::{self, McSummary, TableFormat};
use giicov::models::{streams, Model};
use giicov::randsrc::{make_uniform_panel, SeedSpec};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "giicov", version, about = "Indirect inference with a change of variables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a model at a known parameter.
    Simulate(SimulateArgs),
    /// Estimate a model from a CSV dataset.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo design from a config file.
    Mc(McArgs),
    /// Ratio of MBIAS and STD between two summary CSV files.
    Compare(CompareArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args)]
struct DesignArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model name (overrides the config).
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Comma-separated true parameter.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<usize>,
    /// Total periods per unit, including unobserved initial ones.
    #[arg(long)]
    periods: Option<usize>,
    /// Replication index mixed into the seed.
    #[arg(long, default_value_t = 0)]
    replication: u64,
    /// Output CSV; metadata goes next to it with extension `.meta.json`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the outcome uniforms as CSV (columns i,t,r,u).
    #[arg(long)]
    dump_uniforms: Option<PathBuf>,
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    criterion: Option<CriterionKind>,
    #[arg(long)]
    weight: Option<WeightScheme>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    fd_step: Option<f64>,
    /// Simulated paths per unit.
    #[arg(long)]
    reps: Option<usize>,
}

impl MethodArgs {
    fn apply(&self, o: &mut EstimOptions) {
        if let Some(m) = self.method {
            o.method = m;
        }
        if let Some(c) = self.criterion {
            o.criterion = c;
        }
        if let Some(w) = self.weight {
            o.weight = w;
        }
        if self.bandwidth.is_some() {
            o.bandwidth = self.bandwidth;
        }
        if self.fd_step.is_some() {
            o.fd_step = self.fd_step;
        }
        if let Some(r) = self.reps {
            o.reps = r;
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Dataset in the `unit,time,y,x1..` layout.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated start value; without one a coarse grid scan is run.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    /// Write the full result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    config: PathBuf,
    /// Use the full replication count (1000 unless configured).
    #[arg(long)]
    full: bool,
    #[arg(long, conflicts_with = "full")]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to every logical core.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Summary CSV holding the reference method.
    a: PathBuf,
    /// Summary CSV holding the compared method.
    b: PathBuf,
    /// Method label to take from `a` (needed when it holds several).
    #[arg(long)]
    method_a: Option<String>,
    #[arg(long)]
    method_b: Option<String>,
}

/// Failures mapped to exit codes.
enum Failure {
    NotConverged,
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Compute(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::NotConverged | Failure::Compute(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

/// Classifies a library error raised while reading inputs or computing.
fn classify(e: giicov::Error) -> Failure {
    match e {
        giicov::Error::InvalidArgument(_) => Failure::Usage(e.into()),
        giicov::Error::Data { .. } | giicov::Error::Io(_) => Failure::Data(e.into()),
        _ => Failure::Compute(e.into()),
    }
}

fn usage(e: anyhow::Error) -> Failure {
    Failure::Usage(e)
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Selftest => cmd_selftest(),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::NotConverged => eprintln!("giicov: estimation did not converge"),
                Failure::Usage(e) | Failure::Data(e) | Failure::Compute(e) => eprintln!("giicov: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Option<RunConfig>, Failure> {
    path.map(RunConfig::load).transpose().map_err(usage)
}

fn resolve_model(cfg: Option<&RunConfig>, name: Option<&str>) -> Result<Model, Failure> {
    let name = name
        .or(cfg.map(|c| c.design.model.as_str()))
        .ok_or_else(|| usage(anyhow!("give --model or a config with [design] model")))?;
    Model::from_name(name).map_err(classify)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.into()))?;
    fs::write(path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Data)
}

/// Sidecar written next to a simulated dataset.
#[derive(Serialize)]
struct SimulationMeta<'a> {
    model: &'a str,
    theta0: &'a [f64],
    param_names: &'a [String],
    seed: u64,
    replication: u64,
    n: usize,
    periods: usize,
    observed_periods: usize,
    first_period: usize,
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let cfg = load_config(a.design.config.as_deref())?;
    let model = resolve_model(cfg.as_ref(), a.design.model.as_deref())?;
    let info = model.info();
    let d = cfg.as_ref().map(|c| &c.design);
    let theta0 = a
        .theta0
        .or_else(|| d.and_then(|d| d.theta0.clone()))
        .unwrap_or_else(|| info.theta0.clone());
    let n = a.n.or(d.and_then(|d| d.n)).ok_or_else(|| usage(anyhow!("give --n or [design] n")))?;
    let periods = a
        .periods
        .or(d.and_then(|d| d.periods))
        .ok_or_else(|| usage(anyhow!("give --periods or [design] periods")))?;
    let seed = a.design.seed.or(d.map(|d| d.seed)).unwrap_or(0);
    if periods <= info.hidden {
        return Err(usage(anyhow!("{} drops {} initial periods, so --periods must exceed it", info.name, info.hidden)));
    }
    let observed = periods - info.hidden;
    let spec = SeedSpec::new(seed, a.replication);
    let data = model.simulate_observed(&theta0, spec, n, observed).map_err(classify)?;
    data.save_csv(&a.out).map_err(classify)?;
    let meta = SimulationMeta {
        model: info.name,
        theta0: &theta0,
        param_names: &info.param_names,
        seed,
        replication: a.replication,
        n,
        periods,
        observed_periods: observed,
        first_period: data.first_period(),
    };
    write_json(&sidecar_path(&a.out), &meta)?;
    if let Some(path) = &a.dump_uniforms {
        let panel = make_uniform_panel(spec.with_stream(streams::OBS_MAIN), n, periods, 1).map_err(classify)?;
        panel.write_csv(path).map_err(classify)?;
    }
    println!("wrote {} rows to {}", n * observed, a.out.display());
    Ok(())
}

fn print_result(r: &EstimationResult) {
    println!("model       {}", r.model);
    println!("method      {}", r.method.label());
    println!("criterion   {:?}  weight {:?}", r.criterion, r.weight);
    if let Some(b) = r.bandwidth {
        println!("bandwidth   {b}");
    }
    if let Some(h) = r.fd_step {
        println!("fd step     {h}");
    }
    println!("{:>8} {:>12} {:>12} {:>25}", "param", "estimate", "se", "95% interval");
    for (k, name) in r.param_names.iter().enumerate() {
        let se = r.se.as_ref().map_or("n/a".to_string(), |s| format!("{:.6}", s[k]));
        let ci = r
            .ci95
            .as_ref()
            .map_or("n/a".to_string(), |c| format!("[{:.5}, {:.5}]", c[k][0], c[k][1]));
        println!("{name:>8} {:>12.6} {se:>12} {ci:>25}", r.theta[k]);
    }
    println!("Q           {:.6e}", r.criterion_value);
    println!("iterations  {} ({:?})", r.iterations, r.stop);
    println!("converged   {}", r.converged);
    println!("seconds     {:.3}", r.elapsed_seconds);
}

fn cmd_estimate(a: EstimateArgs) -> CmdResult {
    let cfg = load_config(a.design.config.as_deref())?;
    let model = resolve_model(cfg.as_ref(), a.design.model.as_deref())?;
    let mut opts = cfg
        .as_ref()
        .and_then(|c| c.methods.first().cloned())
        .unwrap_or_default();
    a.method.apply(&mut opts);
    opts.validate().map_err(classify)?;
    let data = PanelData::load_csv(&a.data).map_err(|e| match e {
        giicov::Error::Io(m) => Failure::Data(anyhow!("cannot read {}: {m}", a.data.display())),
        e => Failure::Data(anyhow::Error::from(e).context(a.data.display().to_string())),
    })?;
    model.check_data(&data).map_err(|e| Failure::Data(anyhow::Error::from(e).context(a.data.display().to_string())))?;
    let seed = a.design.seed.or(cfg.as_ref().map(|c| c.design.seed)).unwrap_or(0);
    let start = a.start.or_else(|| cfg.as_ref().and_then(|c| c.estimate.start.clone()));
    if let Some(s) = &start {
        model.check_theta(s).map_err(classify)?;
    }
    let res = estimate(&model, &data, SeedSpec::new(seed, 0), &opts, start.as_deref()).map_err(classify)?;
    print_result(&res);
    if let Some(out) = &a.out {
        write_json(out, &res)?;
    }
    if res.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn cmd_mc(a: McArgs) -> CmdResult {
    let cfg = RunConfig::load(&a.config).map_err(usage)?;
    let mut design = cfg.mc_design(a.full).map_err(usage)?;
    if let Some(r) = a.replications {
        design.replications = r;
    }
    if let Some(s) = a.seed {
        design.seed = s;
    }
    if a.threads.is_some() {
        design.threads = a.threads;
    }
    design.validate().map_err(classify)?;
    let dir = a
        .out_dir
        .or(cfg.output.dir.clone())
        .ok_or_else(|| usage(anyhow!("give --out-dir or [output] dir")))?;
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::Data)?;
    log::info!("running {} replications of {}", design.replications, design.model);
    let run = mc::run_design(&design).map_err(classify)?;
    let summaries = std::slice::from_ref(&run.summary);
    let io = |e: giicov::Error| Failure::Data(e.into());
    mc::write_tables(summaries, dir.join("summary.csv"), TableFormat::Csv).map_err(io)?;
    mc::write_tables(summaries, dir.join("summary.txt"), TableFormat::AlignedText).map_err(io)?;
    let timing = mc::render_timing(summaries);
    fs::write(dir.join("timing.txt"), &timing)
        .context("cannot write timing table")
        .map_err(Failure::Data)?;
    let log = fs::File::create(dir.join("replications.jsonl"))
        .context("cannot create replication log")
        .map_err(Failure::Data)?;
    mc::write_log(&run.records, std::io::BufWriter::new(log)).map_err(io)?;
    print!("{}", mc::render_summary(summaries, TableFormat::AlignedText).map_err(io)?);
    println!();
    print!("{timing}");
    Ok(())
}

fn summary_from_csv(path: &Path, method: Option<&str>) -> Result<McSummary, Failure> {
    let rows = mc::read_summary_csv(path).map_err(|e| Failure::Data(anyhow::Error::from(e).context(path.display().to_string())))?;
    let s = McSummary { rows, timing: Vec::new() };
    Ok(match method {
        Some(m) => s.method(m),
        None => s,
    })
}

fn cmd_compare(a: CompareArgs) -> CmdResult {
    let sa = summary_from_csv(&a.a, a.method_a.as_deref())?;
    let sb = summary_from_csv(&a.b, a.method_b.as_deref())?;
    let rows = mc::compare_ratio(&sa, &sb).map_err(classify)?;
    print!("{}", mc::render_ratios(&rows));
    Ok(())
}

fn cmd_selftest() -> CmdResult {
    let checks = giicov::selftest::run_selftest();
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!("{status}  {}  [tolerance: {}; {} cases, {} failures]", c.name, c.tolerance, c.cases, c.failures);
        if !c.detail.is_empty() {
            println!("      {}", c.detail);
        }
        failed += usize::from(!c.passed());
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Compute(anyhow!("{failed} self-test suite(s) failed")))
    }
}

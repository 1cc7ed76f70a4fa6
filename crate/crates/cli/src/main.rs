//! Command-line front end: dataset generation, experiment runs, the
//! benchmark matrix, and the client/server halves for cross-process runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use contactguard::data::{gen_synthetic, load_dataset, save_dataset, GenConfig};
use contactguard::experiment::{
    emit_report, run_experiment, DataSource, ExperimentConfig, ExperimentReport, Mode,
    ReportFormat,
};
use contactguard::model::{ContactParams, RPrimePolicy, TemporalMode};
use contactguard::net;
use contactguard::protocols::{Method, ServerState};
use contactguard::secure::SecureConstraint;

#[derive(Parser)]
#[command(
    name = "contactguard",
    version,
    about = "Privacy-preserving trajectory contact tracing: secure-comparison and perturbed-location classifiers with a benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted contacts
    Gen(GenArgs),
    /// Run one experiment setting over one or more seeds
    Run(RunArgs),
    /// Serve classifications over TCP (the health-authority side)
    Serve(ServeArgs),
    /// Classify one user against a running server (the device side)
    Client(ClientArgs),
    /// Run the predefined benchmark matrix
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct ParamArgs {
    /// Contact distance threshold, in coordinate units
    #[arg(long)]
    r: Option<f64>,
    /// Contact time threshold, in seconds
    #[arg(long)]
    delta: Option<i64>,
    /// High-risk radius: "auto" or a fixed value >= r
    #[arg(long)]
    r_prime: Option<String>,
    /// Per-user privacy budget
    #[arg(long)]
    eps: Option<f64>,
    /// Patient-side privacy budget
    #[arg(long)]
    eps_p: Option<f64>,
    /// Temporal constraint: "patient-earlier" or "absolute"
    #[arg(long)]
    temporal_mode: Option<String>,
}

impl ParamArgs {
    fn apply(&self, params: &mut ContactParams) -> anyhow::Result<()> {
        if let Some(r) = self.r {
            params.r = r;
        }
        if let Some(d) = self.delta {
            params.delta = d;
        }
        if let Some(rp) = &self.r_prime {
            params.r_prime = if rp == "auto" {
                RPrimePolicy::Auto
            } else {
                RPrimePolicy::Fixed(rp.parse().context("--r-prime expects 'auto' or a number")?)
            };
        }
        if let Some(e) = self.eps {
            params.eps_user = e;
        }
        if let Some(e) = self.eps_p {
            params.eps_patients = e;
        }
        if let Some(m) = &self.temporal_mode {
            params.temporal_mode = match m.as_str() {
                "patient-earlier" => TemporalMode::PatientEarlier,
                "absolute" => TemporalMode::Absolute,
                other => bail!("unknown temporal mode '{other}'"),
            };
        }
        Ok(())
    }
}

#[derive(Args)]
struct GenArgs {
    /// Output dataset path (line-delimited records)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 2)]
    patients: usize,
    #[arg(long, default_value_t = 2)]
    visits_min: usize,
    #[arg(long, default_value_t = 8)]
    visits_max: usize,
    #[arg(long, default_value_t = 10_549.0)]
    x_max: f64,
    #[arg(long, default_value_t = 8_499.0)]
    y_max: f64,
    /// Fraction of users given one guaranteed contact visit
    #[arg(long, default_value_t = 0.05)]
    plant_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags override individual fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic population size
    #[arg(long)]
    users: Option<usize>,
    /// Synthetic patient count
    #[arg(long)]
    patients: Option<usize>,
    /// Synthetic plant rate
    #[arg(long)]
    plant_rate: Option<f64>,
    /// Classify a check-in CSV instead of synthetic data
    #[arg(long)]
    checkins: Option<PathBuf>,
    /// Patient fraction when loading check-ins
    #[arg(long)]
    patient_ratio: Option<f64>,
    /// Comma-separated methods (mpc,geoi,cg)
    #[arg(long)]
    methods: Option<String>,
    /// Seeds: "0..20" or "1,2,3"
    #[arg(long)]
    seeds: Option<String>,
    /// Execution mode: counting, inproc, or tcp
    #[arg(long)]
    mode: Option<String>,
    /// Report format: csv or json
    #[arg(long)]
    format: Option<String>,
    /// Report destination (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7309")]
    bind: String,
    /// Dataset file produced by `gen` (holds the patient visits and params)
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "cg")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop after serving this many sessions (serves forever if omitted)
    #[arg(long)]
    sessions: Option<usize>,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, default_value = "127.0.0.1:7309")]
    server: String,
    /// Dataset file holding this user's trajectory and the run params
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    user_id: u64,
    #[arg(long, default_value = "cg")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite: tradeoff, users, eps, eps-p, scalability, or all
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value = "bench-out")]
    out_dir: PathBuf,
    /// Seeds for every cell of the matrix
    #[arg(long, default_value = "0..20")]
    seeds: String,
}

fn parse_seeds(expr: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((a, b)) = expr.split_once("..") {
        let lo: u64 = a.trim().parse().context("bad seed range start")?;
        let hi: u64 = b.trim().parse().context("bad seed range end")?;
        if lo >= hi {
            bail!("empty seed range '{expr}'");
        }
        return Ok((lo..hi).collect());
    }
    expr.split(',')
        .map(|s| s.trim().parse::<u64>().context("bad seed list"))
        .collect()
}

fn parse_methods(expr: &str) -> anyhow::Result<Vec<Method>> {
    expr.split(',')
        .map(|s| Method::from_str(s.trim()).map_err(Into::into))
        .collect()
}

fn parse_mode(s: &str) -> anyhow::Result<Mode> {
    Ok(match s {
        "counting" => Mode::Counting,
        "inproc" => Mode::Inproc,
        "tcp" => Mode::Tcp,
        other => bail!("unknown mode '{other}' (expected counting|inproc|tcp)"),
    })
}

fn parse_format(s: &str) -> anyhow::Result<ReportFormat> {
    Ok(match s {
        "csv" => ReportFormat::Csv,
        "json" => ReportFormat::Json,
        other => bail!("unknown format '{other}' (expected csv|json)"),
    })
}

fn default_experiment() -> ExperimentConfig {
    ExperimentConfig {
        source: DataSource::Synthetic {
            gen: GenConfig::default(),
        },
        methods: vec![Method::Mpc, Method::Geoi, Method::Cg],
        params: ContactParams::default(),
        seeds: vec![0],
        mode: Mode::Counting,
        format: ReportFormat::Csv,
    }
}

fn cmd_gen(args: &GenArgs) -> anyhow::Result<()> {
    let mut params = ContactParams::default();
    args.params.apply(&mut params)?;
    let cfg = GenConfig {
        n_users: args.users,
        n_patients: args.patients,
        visits_min: args.visits_min,
        visits_max: args.visits_max,
        x_max: args.x_max,
        y_max: args.y_max,
        contact_plant_rate: args.plant_rate,
        seed: args.seed,
    };
    let dataset = gen_synthetic(&cfg, &params)?;
    save_dataset(&dataset, &args.out)?;
    println!(
        "wrote {}: {} users, {} patient visits, {} oracle-positive",
        args.out.display(),
        dataset.users.len(),
        dataset.patients_union.len(),
        dataset.positives()
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let mut cfg = if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        default_experiment()
    };
    if let Some(path) = &args.checkins {
        let mut options = contactguard::data::CheckinOptions::default();
        if let Some(ratio) = args.patient_ratio {
            options.patient_ratio = ratio;
        }
        cfg.source = DataSource::File {
            path: path.display().to_string(),
            options,
        };
    }
    if let DataSource::Synthetic { gen } = &mut cfg.source {
        if let Some(u) = args.users {
            gen.n_users = u;
            // keep the ~1% default ratio unless patients are pinned
            if args.patients.is_none() {
                gen.n_patients = ((u as f64 * 0.01).round() as usize).max(1);
            }
        }
        if let Some(p) = args.patients {
            gen.n_patients = p;
        }
        if let Some(rate) = args.plant_rate {
            gen.contact_plant_rate = rate;
        }
    }
    if let Some(m) = &args.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(m) = &args.mode {
        cfg.mode = parse_mode(m)?;
    }
    if let Some(f) = &args.format {
        cfg.format = parse_format(f)?;
    }
    args.params.apply(&mut cfg.params)?;

    let report = run_experiment(&cfg)?;
    write_report(&report, cfg.format, args.out.as_deref())
}

fn write_report(
    report: &ExperimentReport,
    format: ReportFormat,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            emit_report(report, format, &mut file)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            emit_report(report, format, &mut std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn cmd_serve(args: &ServeArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let method = Method::from_str(&args.method)?;
    let state = ServerState::new(dataset.patients_union.clone(), dataset.params)?;
    eprintln!(
        "serving {method} on {} ({} patient visits, seed {})",
        args.bind,
        state.l_p.len(),
        args.seed
    );
    let report = net::run_server(&args.bind, state, method, args.seed, args.sessions)?;
    for r in &report.results {
        println!("{}", serde_json::to_string(r)?);
    }
    Ok(())
}

fn cmd_client(args: &ClientArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let method = Method::from_str(&args.method)?;
    let (_, trajectory) = dataset
        .users
        .iter()
        .find(|(id, _)| *id == args.user_id)
        .with_context(|| format!("user {} not in {}", args.user_id, args.dataset.display()))?;
    let constraint = SecureConstraint::from_params(&dataset.params)?;
    let result = net::run_client(
        &args.server,
        args.user_id,
        trajectory,
        method,
        dataset.params.eps_user,
        &constraint,
        args.seed,
    )?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> anyhow::Result<()> {
    let seeds = parse_seeds(&args.seeds)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let all = args.suite == "all";
    let base = default_experiment();

    let synthetic = |n_users: usize, n_patients: usize| DataSource::Synthetic {
        gen: GenConfig {
            n_users,
            n_patients,
            ..GenConfig::default()
        },
    };

    if all || args.suite == "tradeoff" {
        let cfg = ExperimentConfig {
            seeds: seeds.clone(),
            ..base.clone()
        };
        let report = run_experiment(&cfg)?;
        emit_to(&args.out_dir.join("tradeoff.csv"), &report)?;
    }
    if all || args.suite == "users" {
        let mut cells = Vec::new();
        for n in [200usize, 400, 800, 1600] {
            let cfg = ExperimentConfig {
                source: synthetic(n, ((n as f64 * 0.01).round() as usize).max(1)),
                seeds: seeds.clone(),
                ..base.clone()
            };
            cells.push(run_experiment(&cfg)?);
        }
        emit_to(&args.out_dir.join("users_sweep.csv"), &ExperimentReport::merge(cells))?;
    }
    if all || args.suite == "eps" {
        let mut cells = Vec::new();
        for eps in [2.0, 3.0, 4.0, 5.0] {
            let cfg = ExperimentConfig {
                params: ContactParams {
                    eps_user: eps,
                    ..base.params
                },
                seeds: seeds.clone(),
                ..base.clone()
            };
            cells.push(run_experiment(&cfg)?);
        }
        emit_to(&args.out_dir.join("eps_sweep.csv"), &ExperimentReport::merge(cells))?;
    }
    if all || args.suite == "eps-p" {
        let mut cells = Vec::new();
        for eps_p in [2.0, 3.0, 4.0, 5.0] {
            let cfg = ExperimentConfig {
                params: ContactParams {
                    eps_patients: eps_p,
                    ..base.params
                },
                seeds: seeds.clone(),
                ..base.clone()
            };
            cells.push(run_experiment(&cfg)?);
        }
        emit_to(&args.out_dir.join("eps_p_sweep.csv"), &ExperimentReport::merge(cells))?;
    }
    if all || args.suite == "scalability" {
        // counting mode with a fixed patient set so secure-op totals scale
        // only with the population's visit count; 1M runs are possible but
        // long, so the default stops at 100K
        let mut cells = Vec::new();
        for n in [10_000usize, 100_000] {
            let cfg = ExperimentConfig {
                source: synthetic(n, 50),
                methods: vec![Method::Mpc, Method::Cg],
                mode: Mode::Counting,
                seeds: vec![seeds[0]],
                ..base.clone()
            };
            cells.push(run_experiment(&cfg)?);
        }
        emit_to(&args.out_dir.join("scalability.csv"), &ExperimentReport::merge(cells))?;
    }
    if !all
        && !["tradeoff", "users", "eps", "eps-p", "scalability"].contains(&args.suite.as_str())
    {
        bail!("unknown suite '{}'", args.suite);
    }
    Ok(())
}

fn emit_to(path: &Path, report: &ExperimentReport) -> anyhow::Result<()> {
    let mut file =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    emit_report(report, ReportFormat::Csv, &mut file)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<contactguard::Error>() {
        Some(contactguard::Error::InvalidArgument(_)) => 2,
        Some(contactguard::Error::Parse { .. }) => 3,
        Some(contactguard::Error::Io(_)) => 4,
        Some(contactguard::Error::Handshake(_)) => 5,
        Some(contactguard::Error::Protocol(_)) => 6,
        Some(contactguard::Error::Framing(_)) => 7,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Client(args) => cmd_client(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = err
                .downcast_ref::<contactguard::Error>()
                .map(|e| e.category())
                .unwrap_or("error");
            eprintln!("error[{category}]: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

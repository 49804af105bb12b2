use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use opfree::config::{self, CheckConfig, ConvolveConfig, HinchinConfig, SteinitzConfig};
use opfree::dist::{free_convolve, is_semicircular_plus_shift, moments_from_cumulants, CumulantSequence, DistributionJson};
use opfree::hinchin::{check_complete_positivity, check_tracial_conditions, Verdict};
use opfree::linalg::op_norm;
use opfree::steinitz::{rearrange_zero_sum, subset_select, SteinitzInstance};
use opfree::transforms::{cauchy_series, subordination_convolve, CauchyProvider, SemicircularLaw};
use opfree::Error;

#[derive(Parser, Debug)]
#[command(name = "opfree", version, about = "Operator-valued free probability experiments")]
struct Cli {
    /// TOML or JSON config for the subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Fixed-point tolerance (overrides the config)
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convolve two distributions and cross-check the cumulant and subordination routes
    Convolve,
    /// Rearrange a zero-sum vector family, or select a subset approximating t times the sum
    Steinitz {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        t: Option<f64>,
    },
    /// Run the divisibility experiment on a triangular array
    Hinchin,
    /// Trace conditions and complete positivity of a distribution document
    Check {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        bound: Option<f64>,
        #[arg(long)]
        degree: Option<usize>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    usage(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_failure(&path, e))
}

fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| io_failure(&path, e))
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn require_config(cli: &Cli) -> Result<&Path, Failure> {
    cli.config.as_deref().ok_or_else(|| usage("--config is required for this command"))
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    unix_time: u64,
    elapsed_ms: u128,
    jobs: usize,
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(usage(format!("--tol must be positive, got {t}")));
        }
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(&cli.out).map_err(|e| io_failure(&cli.out, e))?;
    let start = Instant::now();
    let (name, seed) = match &cli.command {
        Command::Convolve => ("convolve", cmd_convolve(cli)?),
        Command::Steinitz { input, t } => ("steinitz", cmd_steinitz(cli, input.as_deref(), *t)?),
        Command::Hinchin => ("hinchin", cmd_hinchin(cli)?),
        Command::Check { input, bound, degree } => ("check", cmd_check(cli, input.as_deref(), *bound, *degree)?),
    };
    let meta = Metadata {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        elapsed_ms: start.elapsed().as_millis(),
        jobs: cli.jobs,
        seed,
    };
    write_json(&cli.out, "metadata.json", &meta)
}

/// Exact resolvent for semicircular-plus-shift laws, the moment series otherwise.
fn provider(k: &CumulantSequence) -> Result<Box<dyn CauchyProvider>, Failure> {
    if is_semicircular_plus_shift(k) {
        Ok(Box::new(SemicircularLaw::from_cumulants(k)?))
    } else {
        Ok(Box::new(moments_from_cumulants(k)?))
    }
}

fn cmd_convolve(cli: &Cli) -> Result<Option<u64>, Failure> {
    let path = require_config(cli)?;
    let cfg: ConvolveConfig = config::load(path)?;
    cfg.validate()?;
    let base = config_base(path);
    let tol = cli.tol.unwrap_or(cfg.tol);
    let order = cfg.resolve_order(&base)?;
    let tail_order = cfg.tail_order.unwrap_or(order);
    let left = cfg.left.build(cfg.dim, order, &base)?;
    let right = cfg.right.build(cfg.dim, order, &base)?;
    let sum = free_convolve(&left, &right)?;
    write_json(&cli.out, "convolved.json", &DistributionJson::from(&sum))?;

    let exact = is_semicircular_plus_shift(&sum);
    let sum_law = if exact { Some(SemicircularLaw::from_cumulants(&sum)?) } else { None };
    let sum_moments = moments_from_cumulants(&sum)?;
    let sides = [(&left, provider(&left)?), (&right, provider(&right)?)];
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["probe", "level", "deviation", "budget", "series_tail", "iterations", "within"])
        .map_err(|e| usage(e.to_string()))?;
    for (i, spec) in cfg.probes.iter().enumerate() {
        let b = spec.build(cfg.dim)?;
        let (value, tail) = match &sum_law {
            Some(law) => (law.cauchy(&b)?, 0.0),
            None => {
                let s = cauchy_series(&sum_moments, &b, tail_order)?;
                (s.value, s.tail_bound)
            }
        };
        let sub = subordination_convolve(sides[0].1.as_ref(), sides[1].1.as_ref(), &b, tol)?;
        // truncated operands enter the fixed point through their own series tails
        let mut side_tail = 0.0;
        for (k, _) in &sides {
            if !is_semicircular_plus_shift(k) {
                side_tail += cauchy_series(&moments_from_cumulants(k)?, &b, tail_order)?.tail_bound;
            }
        }
        let deviation = op_norm(&(value - &sub.value));
        let budget = tail + 10.0 * tol + 100.0 * side_tail;
        w.write_record([
            i.to_string(),
            b.level().to_string(),
            format!("{deviation:e}"),
            format!("{budget:e}"),
            format!("{tail:e}"),
            sub.iterations.to_string(),
            (deviation <= budget).to_string(),
        ])
        .map_err(|e| usage(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| usage(e.to_string()))?;
    write_bytes(&cli.out, "crosscheck.csv", &bytes)?;
    Ok(None)
}

fn cmd_steinitz(cli: &Cli, input: Option<&Path>, t: Option<f64>) -> Result<Option<u64>, Failure> {
    let (input, t) = match &cli.config {
        Some(path) => {
            let cfg: SteinitzConfig = config::load(path)?;
            let file = config_base(path).join(&cfg.input);
            (input.map(Path::to_path_buf).unwrap_or(file), t.or(cfg.t))
        }
        None => (
            input
                .map(Path::to_path_buf)
                .ok_or_else(|| usage("steinitz needs --input or --config"))?,
            t,
        ),
    };
    if !input.exists() {
        return Err(usage(format!("{} does not exist", input.display())));
    }
    let file = fs::File::open(&input).map_err(|e| io_failure(&input, e))?;
    let inst = SteinitzInstance::from_csv(file)?;
    let result = match t {
        Some(t) => subset_select(&inst, t)?,
        None => rearrange_zero_sum(&inst)?,
    };
    write_json(&cli.out, "selection.json", &result)?;
    println!(
        "{} vectors in R^{}: deviation {:e} <= bound {:e}",
        inst.len(),
        inst.dim(),
        result.achieved_deviation,
        result.certified_bound
    );
    Ok(None)
}

fn cmd_hinchin(cli: &Cli) -> Result<Option<u64>, Failure> {
    let path = require_config(cli)?;
    let mut cfg: HinchinConfig = config::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let run = cfg.run(&config_base(path))?;
    let report = run.report;

    write_json(&cli.out, "report.json", &report)?;
    write_json(&cli.out, "infinitesimality.json", &run.infinitesimality)?;
    let mut jsonl = Vec::new();
    report.write_jsonl(&mut jsonl)?;
    write_bytes(&cli.out, "rows.jsonl", &jsonl)?;
    let mut summary = Vec::new();
    report.write_csv(&mut summary)?;
    write_bytes(&cli.out, "summary.csv", &summary)?;

    let mut stdout = std::io::stdout().lock();
    for r in &report.rows {
        let verdict = if r.verdict == Verdict::Pass { "PASS" } else { "INCONCLUSIVE" };
        let _ = writeln!(
            stdout,
            "row {} (n = {}, |sigma| = {}): {:e} <= {:e} {verdict}",
            r.row, r.n, r.subset_size, r.phi_deviation.value, r.phi_deviation.budget
        );
    }
    Ok(Some(cfg.seed))
}

#[derive(Serialize)]
struct CheckOutput {
    pass: bool,
    tracial: opfree::hinchin::TracialReport,
    positivity: opfree::hinchin::PositivityReport,
}

fn cmd_check(cli: &Cli, input: Option<&Path>, bound: Option<f64>, degree: Option<usize>) -> Result<Option<u64>, Failure> {
    let cfg = match &cli.config {
        Some(path) => {
            let mut cfg: CheckConfig = config::load(path)?;
            cfg.input = config_base(path).join(&cfg.input);
            cfg
        }
        None => CheckConfig {
            input: input
                .map(Path::to_path_buf)
                .ok_or_else(|| usage("check needs --input or --config"))?,
            bound: None,
            degree: 3,
        },
    };
    let input = input.map(Path::to_path_buf).unwrap_or(cfg.input);
    let mu = config::read_distribution(&input)?.to_moments()?;
    let bound = bound.or(cfg.bound).unwrap_or(mu.bound());
    let degree = degree.unwrap_or(cfg.degree);
    let tracial = check_tracial_conditions(&mu, bound, degree)?;
    let positivity = check_complete_positivity(&mu, degree)?;
    let out = CheckOutput {
        pass: tracial.pass() && positivity.pass,
        tracial,
        positivity,
    };
    println!(
        "bounded {} cauchy-schwarz {} tracial {} positivity {}",
        out.tracial.bounded.pass, out.tracial.cauchy_schwarz.pass, out.tracial.tracial.pass, out.positivity.pass
    );
    write_json(&cli.out, "check.json", &out)?;
    Ok(None)
}

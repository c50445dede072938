use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use pps_core::datio::{bind_local, serve_tcp};
use pps_core::{
    buffer_coverage, explore, make_env, read_buffer, serve_env, write_buffer_with_dims, Config,
    CoverageReport, ExploreConfig,
};

/// Planner-driven exploration, coverage analysis and environment serving.
#[derive(Parser, Debug)]
#[command(name = "pps", version)]
struct Cli {
    /// Config file of `key = value` overrides.
    #[arg(long, global = true, env = "PPS_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run AQR-RRT exploration for seeds 0..N and write buffers plus coverage.
    Explore(ExploreArgs),
    /// Print the coverage report of a buffer file.
    Coverage {
        buffer: PathBuf,
    },
    /// Serve an environment over newline-delimited JSON.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct ExploreArgs {
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 100_000)]
    budget: usize,
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("transport").required(true).args(["stdio", "tcp"])))]
struct ServeArgs {
    #[arg(long)]
    env: String,
    #[arg(long)]
    stdio: bool,
    /// Loopback port; 0 picks a free one.
    #[arg(long, value_name = "PORT")]
    tcp: Option<u16>,
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pps: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> AnyResult<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::new(),
    };
    match cli.command {
        Command::Explore(args) => cmd_explore(&args, &cfg),
        Command::Coverage { buffer } => {
            let report = cmd_coverage(&buffer, &cfg)?;
            print!("{}", report.to_record());
            Ok(())
        }
        Command::Serve(args) => cmd_serve(&args, &cfg),
    }
}

struct SeedRun {
    seed: u64,
    buffer: PathBuf,
    coverage_file: PathBuf,
    report: CoverageReport,
}

fn run_seed(args: &ExploreArgs, cfg: &Config, seed: u64) -> AnyResult<SeedRun> {
    let env = make_env::<f64>(&args.env, cfg)?;
    let spec = env.spec();
    let ecfg = ExploreConfig::standard(spec, args.budget, args.horizon, seed);
    let (_, buffer, _) = explore(env.as_ref(), &ecfg)?;
    let buffer_path = args.out.join(format!("seed-{seed}.buffer.csv"));
    write_buffer_with_dims(&buffer, spec.state_dim, spec.action_dim, &buffer_path)?;
    let report = buffer_coverage(&buffer, spec)?;
    let coverage_file = args.out.join(format!("seed-{seed}.coverage.txt"));
    let mut record = format!("env={}\nseed={seed}\n", args.env);
    record.push_str(&report.to_record());
    fs::write(&coverage_file, record).map_err(|e| format!("{}: {e}", coverage_file.display()))?;
    Ok(SeedRun {
        seed,
        buffer: buffer_path,
        coverage_file,
        report,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn cmd_explore(args: &ExploreArgs, cfg: &Config) -> AnyResult<()> {
    if args.horizon == 0 {
        return Err("--horizon must be at least 1".into());
    }
    // fail on a bad id before creating anything
    make_env::<f64>(&args.env, cfg)?;
    fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let mut runs: Vec<SeedRun> = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(workers) {
        let results: Vec<AnyResult<SeedRun>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| scope.spawn(move || run_seed(args, cfg, seed).map_err(|e| e.to_string())))
                .collect();
            handles
                .into_iter()
                .map(|h| match h.join() {
                    Ok(r) => r.map_err(Into::into),
                    Err(_) => Err("exploration thread panicked".into()),
                })
                .collect()
        });
        for r in results {
            runs.push(r?);
        }
    }

    let mut manifest = String::new();
    writeln!(manifest, "env={}", args.env)?;
    let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    writeln!(manifest, "seeds={}", seed_list.join(","))?;
    writeln!(manifest, "budget={}", args.budget)?;
    writeln!(manifest, "horizon={}", args.horizon)?;
    writeln!(manifest, "out={}", args.out.display())?;
    for r in &runs {
        writeln!(manifest, "buffer.{}={}", r.seed, r.buffer.display())?;
        writeln!(manifest, "coverage.{}={}", r.seed, r.coverage_file.display())?;
    }
    write_file(&args.out.join("manifest.txt"), &manifest)?;

    let mut table = String::from("seed,coverage,nonempty,total_bins,samples\n");
    for r in &runs {
        writeln!(
            table,
            "{},{},{},{},{}",
            r.seed, r.report.coverage, r.report.nonempty, r.report.total_bins, r.report.samples
        )?;
    }
    write_file(&args.out.join("coverage.csv"), &table)?;

    let mut values: Vec<f64> = runs.iter().map(|r| r.report.coverage).collect();
    values.sort_by(f64::total_cmp);
    let (q25, median, q75) = (quantile(&values, 0.25), quantile(&values, 0.5), quantile(&values, 0.75));
    let mut summary = String::new();
    writeln!(summary, "env={}", args.env)?;
    writeln!(summary, "runs={}", runs.len())?;
    writeln!(summary, "coverage_median={median}")?;
    writeln!(summary, "coverage_q25={q25}")?;
    writeln!(summary, "coverage_q75={q75}")?;
    writeln!(summary, "coverage_iqr={}", q75 - q25)?;
    write_file(&args.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn write_file(path: &Path, text: &str) -> AnyResult<()> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn cmd_coverage(path: &Path, cfg: &Config) -> AnyResult<CoverageReport> {
    let (buffer, header) = read_buffer::<f64>(path)?;
    let env = make_env::<f64>(&header.env, cfg)?;
    let spec = env.spec();
    if header.d != spec.state_dim || header.m != spec.action_dim {
        return Err(format!(
            "buffer dimensions d={} m={} do not match `{}` (d={} m={})",
            header.d, header.m, header.env, spec.state_dim, spec.action_dim
        )
        .into());
    }
    Ok(buffer_coverage(&buffer, spec)?)
}

fn cmd_serve(args: &ServeArgs, cfg: &Config) -> AnyResult<()> {
    let env = make_env::<f64>(&args.env, cfg)?;
    if args.stdio {
        let stdin = io::stdin();
        serve_env(env.as_ref(), stdin.lock(), io::stdout().lock())?;
        return Ok(());
    }
    let port = args.tcp.expect("clap requires one transport");
    let listener = bind_local(port)?;
    let mut out = io::stdout().lock();
    writeln!(out, "port={}", listener.local_addr()?.port())?;
    out.flush()?;
    drop(out);
    serve_tcp(env.as_ref(), &listener, None)?;
    Ok(())
}

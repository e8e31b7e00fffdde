use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use blocksale::bench::{
    calibrate, calibration_tables, markdown_tables, run, run_grid, size_from_exponents,
    write_bench_csv, write_calibration_csv, write_jsonl, Algorithm, AlgorithmParams, EtaChoice,
    GridSpec, PriceMode, DEFAULT_SIZES, LARGE_SIZES,
};
use blocksale::dp::{Grain, SolveOptions, DEFAULT_LAMBDA};
use blocksale::model::{DEFAULT_BETA, DEFAULT_THRESHOLD};
use blocksale::prices::{
    build_batch, subsample, write_csv, BatchSpec, DEFAULT_HORIZON, DEFAULT_P0, DEFAULT_PATHS,
};
use blocksale::{Error, InstanceSpec, Prototype, Result};

#[derive(Parser)]
#[command(name = "blocksale", version, about = "Large block sale solvers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate averaged GBM prices (CSV), or a full instance with --total (JSON).
    Simulate(SimulateArgs),
    /// Solve an instance file; prints one JSON object per algorithm.
    Solve(SolveArgs),
    /// Run a benchmark grid and write CSV, JSON lines and markdown tables.
    Bench(BenchArgs),
    /// Fire-sale and uniform-sale gaps for several penalty calibrations.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct SolverFlags {
    /// Coarse grain P, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_grain)]
    grain: Grain,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: usize,
    /// Funnel radius; overrides lambda * P.
    #[arg(long)]
    radius: Option<usize>,
    /// Seconds per run.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Bytes; defaults to the BLOCKSALE_MEMORY_LIMIT environment variable or 24 GiB.
    #[arg(long)]
    memory_limit: Option<u64>,
}

impl SolverFlags {
    fn params(&self, default_limit: Option<Duration>) -> Result<AlgorithmParams> {
        let time_limit = match self.time_limit {
            Some(s) if s.is_finite() && s > 0.0 => Some(Duration::from_secs_f64(s)),
            Some(s) => return Err(Error::Validation(format!("time limit {s} must be positive"))),
            None => default_limit,
        };
        let mut solve = SolveOptions { time_limit, ..SolveOptions::default() };
        if let Some(bytes) = self.memory_limit {
            solve.memory_limit = bytes;
        }
        Ok(AlgorithmParams { grain: self.grain, lambda: self.lambda, radius: self.radius, solve })
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 0.25)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_P0)]
    p0: f64,
    /// Length of every simulated path.
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = DEFAULT_PATHS)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subsample the averaged path down to T prices.
    #[arg(long)]
    steps: Option<usize>,
    /// Block size; switches the output to an instance JSON.
    #[arg(long)]
    total: Option<usize>,
    #[arg(long, default_value = "arctan")]
    prototype: Prototype,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long = "H", default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Repeatable.
    #[arg(long = "alg", required = true)]
    algorithms: Vec<Algorithm>,
    #[command(flatten)]
    solver: SolverFlags,
    /// Overrides the generator seed of the instance.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    prototype: Option<Prototype>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "H")]
    threshold: Option<f64>,
    /// Append results here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridFlags {
    /// `a,b` runs T = 10^a, N = 10^b. Repeatable; defaults to the CI grid.
    #[arg(long = "size", value_parser = parse_size)]
    sizes: Vec<(u32, u32)>,
    /// Add the large sizes (minutes to hours of exact DP per cell).
    #[arg(long)]
    large: bool,
    /// Repeatable; defaults to all three.
    #[arg(long = "prototype")]
    prototypes: Vec<Prototype>,
    /// Cells solved concurrently. Above 1, wall times are flagged unreliable.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl GridFlags {
    fn sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes = if self.sizes.is_empty() { DEFAULT_SIZES.to_vec() } else { self.sizes.clone() };
        if self.large {
            sizes.extend(LARGE_SIZES);
        }
        sizes.into_iter().map(size_from_exponents).collect()
    }

    fn prototypes(&self) -> Vec<Prototype> {
        if self.prototypes.is_empty() {
            Prototype::ALL.to_vec()
        } else {
            self.prototypes.clone()
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    grid: GridFlags,
    /// `cst`, `avg` or `MU:SIGMA`. Repeatable.
    #[arg(long = "prices", default_values = ["cst"])]
    modes: Vec<PriceMode>,
    /// Repeatable; `--alg none` runs nothing.
    #[arg(long = "alg", default_values = ["fire-sale", "uniform", "exact", "upper-bound"])]
    algorithms: Vec<String>,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "H", default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    grid: GridFlags,
    /// Calibration thresholds; eta = 1 is always added.
    #[arg(long = "H", default_values_t = [0.75, 0.99])]
    thresholds: Vec<f64>,
    /// Seconds per exact solve.
    #[arg(long, default_value_t = 600.0)]
    time_limit: f64,
    #[arg(long)]
    memory_limit: Option<u64>,
}

fn parse_grain(s: &str) -> std::result::Result<Grain, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Grain::Auto);
    }
    match s.parse::<usize>() {
        Ok(p) if p > 0 => Ok(Grain::Fixed(p)),
        _ => Err(format!("grain must be a positive integer or `auto`, got `{s}`")),
    }
}

fn parse_size(s: &str) -> std::result::Result<(u32, u32), String> {
    let bad = || format!("size must look like `a,b` (T = 10^a, N = 10^b), got `{s}`");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a = a.trim().parse().map_err(|_| bad())?;
    let b = b.trim().parse().map_err(|_| bad())?;
    if a > 6 || b > 9 {
        return Err(bad());
    }
    Ok((a, b))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_)
        | Error::Domain(_)
        | Error::Infeasible(_)
        | Error::InfeasibleFunnel { .. }
        | Error::Divisibility { .. }
        | Error::Json(_)
        | Error::Csv(_) => 2,
        Error::TimeLimit { .. } => 3,
        Error::MemoryBudget { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn output(path: Option<&Path>, append: bool) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            let file = fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(p)?;
            Box::new(BufWriter::new(file))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let dt = 1.0 / args.horizon.max(1) as f64;
    let batch = build_batch(args.mu, args.sigma, args.p0, args.horizon, dt, args.paths, args.seed)?;
    let prices = match args.steps {
        Some(steps) => subsample(&batch.averaged, steps)?,
        None => batch.averaged,
    };
    let mut out = output(args.out.as_deref(), false)?;
    match args.total {
        Some(total) => {
            let spec = InstanceSpec {
                steps: prices.len(),
                total,
                beta: args.beta,
                prototype: args.prototype,
                threshold: args.threshold,
                level: None,
                prices: Some(prices),
                generator: None,
            };
            spec.build()?;
            serde_json::to_writer_pretty(&mut out, &spec)?;
            out.write_all(b"\n")?;
        }
        None => write_csv(&mut out, &prices)?,
    }
    out.flush()?;
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<()> {
    let mut spec = InstanceSpec::from_json(&fs::read_to_string(&args.instance)?)?;
    if let Some(p) = args.prototype {
        spec.prototype = p;
    }
    if let Some(b) = args.beta {
        spec.beta = b;
    }
    if let Some(h) = args.threshold {
        spec.threshold = h;
    }
    if let (Some(seed), Some(generator)) = (args.seed, spec.generator.as_mut()) {
        *generator = BatchSpec { seed, ..*generator };
    }
    let inst = spec.build()?;
    let params = args.solver.params(None)?;
    let mut out = output(args.out.as_deref(), true)?;
    let mut failure = None;
    for &alg in &args.algorithms {
        match run(&inst, alg, &params) {
            Ok(result) => write_jsonl(&mut out, &[result])?,
            Err(e) => {
                eprintln!("{alg}: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    out.flush()?;
    failure.map_or(Ok(()), Err)
}

fn write_file(dir: &Path, name: &str, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut file = BufWriter::new(File::create(dir.join(name))?);
    fill(&mut file)?;
    file.flush()?;
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let algorithms = args
        .algorithms
        .iter()
        .filter(|a| !a.eq_ignore_ascii_case("none"))
        .map(|a| a.parse())
        .collect::<Result<Vec<Algorithm>>>()?;
    let spec = GridSpec {
        sizes: args.grid.sizes(),
        prototypes: args.grid.prototypes(),
        modes: args.modes.clone(),
        algorithms,
        seed: args.seed,
        beta: args.grid.beta,
        threshold: args.threshold,
        params: args.solver.params(Some(blocksale::bench::DEFAULT_RUN_CAP))?,
        workers: args.grid.workers,
    };
    let outcome = run_grid(&spec)?;
    let dir = &args.grid.out;
    fs::create_dir_all(dir)?;
    write_file(dir, "bench.csv", |w| write_bench_csv(w, &outcome.rows))?;
    write_file(dir, "bench.jsonl", |w| write_jsonl(w, &outcome.rows))?;
    let tables = markdown_tables(&outcome);
    write_file(dir, "bench.md", |w| Ok(w.write_all(tables.as_bytes())?))?;
    print!("{tables}");
    Ok(())
}

fn calibration(args: &CalibrateArgs) -> Result<()> {
    let mut etas: Vec<EtaChoice> = args.thresholds.iter().map(|&h| EtaChoice::Threshold(h)).collect();
    etas.push(EtaChoice::Unit);
    let mut opts = SolveOptions::default().with_time_limit(Duration::from_secs_f64(args.time_limit));
    if let Some(bytes) = args.memory_limit {
        opts = opts.with_memory_limit(bytes);
    }
    let rows = calibrate(
        &args.grid.sizes(),
        &args.grid.prototypes(),
        &etas,
        args.grid.beta,
        &opts,
        args.grid.workers,
    )?;
    let dir = &args.grid.out;
    fs::create_dir_all(dir)?;
    write_file(dir, "calibration.csv", |w| write_calibration_csv(w, &rows))?;
    let tables = calibration_tables(&rows);
    write_file(dir, "calibration.md", |w| Ok(w.write_all(tables.as_bytes())?))?;
    print!("{tables}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Solve(args) => solve(args),
        Command::Bench(args) => bench(args),
        Command::Calibrate(args) => calibration(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

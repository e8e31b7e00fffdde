//! Algorithm dispatch, benchmark grids and the tables built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{upper_bound, BoundReport};
use crate::dp::{
    solve_coarse, solve_continuous_radius, solve_exact, solve_two_step_radius, Grain,
    SolveOptions, DEFAULT_LAMBDA,
};
use crate::error::{Error, Result};
use crate::local_search::{fire_sale, ils, uniform_sale, IlsConfig, IlsStatus};
use crate::model::{Instance, Penalty, Prototype, Schedule, DEFAULT_BETA, DEFAULT_THRESHOLD};
use crate::prices::{BatchSpec, DEFAULT_P0, MOMENT_GRID};

/// Per-run cap used by `bench` and `calibrate` unless overridden.
pub const DEFAULT_RUN_CAP: Duration = Duration::from_secs(600);

/// `(log10 T, log10 N)` pairs run by default.
pub const DEFAULT_SIZES: [(u32, u32); 5] = [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4)];

/// Extra sizes behind `--large`. Exact runs at these sizes take minutes to
/// hours and up to a few hundred MB of parent storage.
pub const LARGE_SIZES: [(u32, u32); 4] = [(1, 5), (1, 6), (2, 5), (3, 5)];

/// Relative gap under which a heuristic is reported as optimal.
pub const OPTIMAL_TOLERANCE: f64 = 1e-6;

pub fn size_from_exponents((a, b): (u32, u32)) -> (usize, usize) {
    (10usize.pow(a), 10usize.pow(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Exact,
    Coarse,
    TwoStep,
    TwoStepContinuous,
    Ils,
    FireSale,
    Uniform,
    UpperBound,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::FireSale,
        Algorithm::Uniform,
        Algorithm::Ils,
        Algorithm::Coarse,
        Algorithm::TwoStep,
        Algorithm::TwoStepContinuous,
        Algorithm::Exact,
        Algorithm::UpperBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Exact => "exact",
            Algorithm::Coarse => "coarse",
            Algorithm::TwoStep => "two-step",
            Algorithm::TwoStepContinuous => "two-step-continuous",
            Algorithm::Ils => "ils",
            Algorithm::FireSale => "fire-sale",
            Algorithm::Uniform => "uniform",
            Algorithm::UpperBound => "upper-bound",
        }
    }

    /// Short column label.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Exact => "DP",
            Algorithm::Coarse => "CG",
            Algorithm::TwoStep => "TS1",
            Algorithm::TwoStepContinuous => "TS2",
            Algorithm::Ils => "ILS",
            Algorithm::FireSale => "FS",
            Algorithm::Uniform => "US",
            Algorithm::UpperBound => "UB",
        }
    }

    pub fn is_upper(self) -> bool {
        self == Algorithm::UpperBound
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key || a.label().eq_ignore_ascii_case(&key))
            .ok_or_else(|| Error::Validation(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmParams {
    pub grain: Grain,
    pub lambda: usize,
    /// Overrides `lambda * P` when set.
    pub radius: Option<usize>,
    pub solve: SolveOptions,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        Self {
            grain: Grain::Auto,
            lambda: DEFAULT_LAMBDA,
            radius: None,
            solve: SolveOptions::default(),
        }
    }
}

impl AlgorithmParams {
    fn radius_for(&self, grain: usize) -> usize {
        self.radius.unwrap_or(self.lambda * grain).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Optimal,
    Heuristic,
    Dnc,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Optimal => "optimal",
            RunStatus::Heuristic => "heuristic",
            RunStatus::Dnc => "dnc",
        })
    }
}

/// One solver run, serialized as a single JSON line by `solve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub x: Option<Vec<usize>>,
    pub value: Option<f64>,
    pub wall_ms: f64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

fn finished(algorithm: Algorithm, s: Schedule, status: RunStatus, begin: Instant) -> RunResult {
    RunResult {
        algorithm,
        x: Some(s.x),
        value: Some(s.value),
        wall_ms: elapsed_ms(begin),
        status,
        bound: None,
        detail: None,
    }
}

fn elapsed_ms(begin: Instant) -> f64 {
    begin.elapsed().as_secs_f64() * 1e3
}

/// Runs one algorithm. Time and memory overruns come back as errors
/// (`Error::is_dnc`); an upper bound whose hypothesis fails comes back as a
/// `dnc` result without a value.
pub fn run(inst: &Instance, algorithm: Algorithm, params: &AlgorithmParams) -> Result<RunResult> {
    let begin = Instant::now();
    let opts = &params.solve;
    let heuristic = RunStatus::Heuristic;
    Ok(match algorithm {
        Algorithm::Exact => finished(algorithm, solve_exact(inst, opts)?, RunStatus::Optimal, begin),
        Algorithm::Coarse => {
            let grain = params.grain.resolve(inst);
            let mut r = finished(algorithm, solve_coarse(inst, grain, opts)?, heuristic, begin);
            r.detail = Some(format!("P={grain}"));
            r
        }
        Algorithm::TwoStep => {
            let grain = params.grain.resolve(inst);
            let radius = params.radius_for(grain);
            let out = solve_two_step_radius(inst, Grain::Fixed(grain), radius, opts)?;
            let mut r = finished(algorithm, out.refined, heuristic, begin);
            r.detail = Some(format!("P={grain} radius={radius} first={}", out.first_value));
            r
        }
        Algorithm::TwoStepContinuous => {
            let grain = params.grain.resolve(inst);
            let radius = params.radius_for(grain);
            let out = solve_continuous_radius(inst, grain, radius, opts)?;
            let mut r = finished(algorithm, out.refined, heuristic, begin);
            r.detail = Some(format!("radius={radius} first={}", out.first_value));
            r
        }
        Algorithm::Ils => {
            let config = IlsConfig { time_limit: opts.time_limit, ..IlsConfig::default() };
            let out = ils(inst, &uniform_sale(inst).x, &config)?;
            if out.status == IlsStatus::TimeCap {
                return Err(Error::TimeLimit {
                    limit: opts.time_limit.unwrap_or_default(),
                    elapsed: begin.elapsed(),
                });
            }
            let mut r = finished(algorithm, out.schedule, heuristic, begin);
            r.detail = Some(format!("shifts={} status={:?}", out.shifts, out.status));
            r
        }
        Algorithm::FireSale => finished(algorithm, fire_sale(inst), heuristic, begin),
        Algorithm::Uniform => finished(algorithm, uniform_sale(inst), heuristic, begin),
        Algorithm::UpperBound => {
            let report = upper_bound(inst);
            let certified = report.certified();
            RunResult {
                algorithm,
                x: None,
                value: certified,
                wall_ms: elapsed_ms(begin),
                status: if certified.is_some() { heuristic } else { RunStatus::Dnc },
                bound: Some(report),
                detail: certified.is_none().then(|| "x g(x) is not convex".to_string()),
            }
        }
    })
}

/// `100 (ref - v) / ref` for lower bounds, `100 (v - ref) / ref` for the upper bound.
pub fn gap_pct(algorithm: Algorithm, value: f64, reference: f64) -> f64 {
    let diff = if algorithm.is_upper() { value - reference } else { reference - value };
    100.0 * diff / reference
}

/// Two decimals, or `<ε` under 0.01.
pub fn format_gap(gap: f64) -> String {
    if gap < 0.01 {
        "<ε".to_string()
    } else {
        format!("{gap:.2}")
    }
}

/// Seconds with two decimals, or `<ε` under 0.01 s.
pub fn format_seconds(ms: f64) -> String {
    format_gap(ms / 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriceMode {
    /// Every price equal to the default initial price.
    Constant,
    /// One instance per entry of the moment grid; tables show the mean.
    Average,
    Moment { mu: f64, sigma: f64 },
}

impl PriceMode {
    pub fn label(&self) -> String {
        match self {
            PriceMode::Constant => "CST".into(),
            PriceMode::Average => "AVG".into(),
            PriceMode::Moment { mu, sigma } => format!("mu={mu},sigma={sigma}"),
        }
    }
}

impl FromStr for PriceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        match key.as_str() {
            "cst" | "constant" => return Ok(PriceMode::Constant),
            "avg" | "average" => return Ok(PriceMode::Average),
            _ => {}
        }
        let bad = || Error::Validation(format!("price mode `{s}`: expected cst, avg or MU:SIGMA"));
        let (mu, sigma) = key.split_once(':').ok_or_else(bad)?;
        Ok(PriceMode::Moment {
            mu: mu.parse().map_err(|_| bad())?,
            sigma: sigma.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// `(T, N)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub prototypes: Vec<Prototype>,
    pub modes: Vec<PriceMode>,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    pub beta: f64,
    pub threshold: f64,
    pub params: AlgorithmParams,
    pub workers: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            sizes: DEFAULT_SIZES.iter().copied().map(size_from_exponents).collect(),
            prototypes: Prototype::ALL.to_vec(),
            modes: vec![PriceMode::Constant],
            algorithms: vec![
                Algorithm::FireSale,
                Algorithm::Uniform,
                Algorithm::Exact,
                Algorithm::UpperBound,
            ],
            seed: 0,
            beta: DEFAULT_BETA,
            threshold: DEFAULT_THRESHOLD,
            params: AlgorithmParams {
                solve: SolveOptions::default().with_time_limit(DEFAULT_RUN_CAP),
                ..AlgorithmParams::default()
            },
            workers: 1,
        }
    }
}

/// One row per (instance, algorithm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub instance_id: String,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub total: usize,
    pub prototype: Prototype,
    /// Price column label (`CST`, `AVG`, or explicit moments).
    pub prices: String,
    pub algorithm: Algorithm,
    pub value: Option<f64>,
    pub reference_value: Option<f64>,
    /// Algorithm that produced the reference; exact unless it did not finish.
    pub reference_algorithm: Option<Algorithm>,
    pub gap_pct: Option<f64>,
    pub wall_ms: Option<f64>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundReport>,
}

#[derive(Debug, Clone)]
struct Cell {
    instance_id: String,
    prices: String,
    prototype: Prototype,
    inst: Instance,
}

fn constant_instance(
    steps: usize,
    total: usize,
    prototype: Prototype,
    beta: f64,
    threshold: f64,
) -> Result<Instance> {
    Instance::with_floor(total, vec![DEFAULT_P0; steps], beta, prototype, threshold, total as f64)
}

fn cells(spec: &GridSpec) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    for &(steps, total) in &spec.sizes {
        for &prototype in &spec.prototypes {
            for mode in &spec.modes {
                let tag = format!("T{steps}-N{total}-{prototype}");
                let generated = |j: usize, mu: f64, sigma: f64| -> Result<Cell> {
                    let seed = spec.seed.wrapping_add((j * 1000) as u64);
                    let prices = BatchSpec::new(mu, sigma, seed).prices_for(steps)?;
                    let inst = Instance::with_floor(
                        total,
                        prices,
                        spec.beta,
                        prototype,
                        spec.threshold,
                        total as f64,
                    )?;
                    Ok(Cell {
                        instance_id: format!("{tag}-mu{mu}-sigma{sigma}-seed{seed}"),
                        prices: mode.label(),
                        prototype,
                        inst,
                    })
                };
                match *mode {
                    PriceMode::Constant => out.push(Cell {
                        instance_id: format!("{tag}-cst"),
                        prices: mode.label(),
                        prototype,
                        inst: constant_instance(steps, total, prototype, spec.beta, spec.threshold)?,
                    }),
                    PriceMode::Average => {
                        for (j, &(mu, sigma)) in MOMENT_GRID.iter().enumerate() {
                            out.push(generated(j, mu, sigma)?);
                        }
                    }
                    PriceMode::Moment { mu, sigma } => out.push(generated(0, mu, sigma)?),
                }
            }
        }
    }
    Ok(out)
}

fn run_cell(cell: &Cell, algorithms: &[Algorithm], params: &AlgorithmParams) -> Vec<BenchReport> {
    if algorithms.is_empty() {
        return Vec::new();
    }
    let results: Vec<(Algorithm, Result<RunResult>)> =
        algorithms.iter().map(|&alg| (alg, run(&cell.inst, alg, params))).collect();
    let value_of = |alg: Algorithm| {
        results.iter().find(|(a, _)| *a == alg).and_then(|(_, r)| r.as_ref().ok()?.value)
    };
    let exact_value = value_of(Algorithm::Exact);
    let reference = exact_value.map(|v| (v, Algorithm::Exact)).or_else(|| {
        results
            .iter()
            .filter(|(a, _)| matches!(a, Algorithm::TwoStep | Algorithm::TwoStepContinuous))
            .filter_map(|(a, r)| Some((r.as_ref().ok()?.value?, *a)))
            .max_by(|l, r| l.0.total_cmp(&r.0))
    });

    let mut rows: Vec<BenchReport> = results
        .into_iter()
        .map(|(algorithm, result)| {
            let (value, wall_ms, mut status, bound) = match result {
                Ok(r) => (r.value, Some(r.wall_ms), r.status, r.bound),
                Err(_) => (None, None, RunStatus::Dnc, None),
            };
            let gap = value.zip(reference).map(|(v, (rv, _))| gap_pct(algorithm, v, rv));
            if status == RunStatus::Heuristic
                && !algorithm.is_upper()
                && exact_value.is_some()
                && gap.is_some_and(|g| g < 100.0 * OPTIMAL_TOLERANCE)
            {
                status = RunStatus::Optimal;
            }
            BenchReport {
                instance_id: cell.instance_id.clone(),
                steps: cell.inst.steps(),
                total: cell.inst.total(),
                prototype: cell.prototype,
                prices: cell.prices.clone(),
                algorithm,
                value,
                reference_value: reference.map(|r| r.0),
                reference_algorithm: reference.map(|r| r.1),
                gap_pct: gap,
                wall_ms,
                status,
                bound,
            }
        })
        .collect();
    let order = |a: Algorithm| algorithms.iter().position(|&b| b == a).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| order(r.algorithm));
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub rows: Vec<BenchReport>,
    pub workers: usize,
}

impl BenchOutcome {
    /// Wall times are only comparable when every cell had the machine to itself.
    pub fn timing_reliable(&self) -> bool {
        self.workers <= 1
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("worker pool: {e}")))
}

/// Runs the full cross-product. Failing runs become `dnc` rows. Gaps are
/// measured against `exact` when it is listed and finishes, otherwise
/// against the best two-step value.
pub fn run_grid(spec: &GridSpec) -> Result<BenchOutcome> {
    let cells = cells(spec)?;
    let rows = pool(spec.workers)?.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(cell, &spec.algorithms, &spec.params))
            .collect::<Vec<_>>()
    });
    Ok(BenchOutcome { rows: rows.into_iter().flatten().collect(), workers: spec.workers.max(1) })
}

const CSV_HEADER: [&str; 12] = [
    "instance_id",
    "T",
    "N",
    "prototype",
    "prices",
    "algorithm",
    "value",
    "reference_value",
    "reference_algorithm",
    "gap_pct",
    "wall_ms",
    "status",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_bench_csv<W: Write>(writer: W, rows: &[BenchReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.instance_id.clone(),
            r.steps.to_string(),
            r.total.to_string(),
            r.prototype.to_string(),
            r.prices.clone(),
            r.algorithm.to_string(),
            opt(r.value),
            opt(r.reference_value),
            opt(r.reference_algorithm),
            opt(r.gap_pct),
            opt(r.wall_ms),
            r.status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut writer: W, rows: &[T]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Default)]
struct Aggregate {
    gaps: Vec<f64>,
    times: Vec<f64>,
    dnc: bool,
}

impl Aggregate {
    fn gap(&self) -> String {
        if self.dnc {
            "DNC".into()
        } else if self.gaps.is_empty() {
            "-".into()
        } else {
            format_gap(mean(&self.gaps))
        }
    }

    fn time(&self) -> String {
        if self.dnc {
            "DNC".into()
        } else if self.times.is_empty() {
            "-".into()
        } else {
            format_seconds(mean(&self.times))
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn first_seen<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

/// Gap and wall-time tables, one pair per prototype, with a column per
/// (algorithm, price mode). `AVG` cells average over the moment grid.
pub fn markdown_tables(outcome: &BenchOutcome) -> String {
    let rows = &outcome.rows;
    let mut cells: BTreeMap<(Prototype, usize, usize, Algorithm, String), Aggregate> = BTreeMap::new();
    for r in rows {
        let a = cells
            .entry((r.prototype, r.steps, r.total, r.algorithm, r.prices.clone()))
            .or_default();
        if r.status == RunStatus::Dnc {
            a.dnc = true;
        }
        a.gaps.extend(r.gap_pct);
        a.times.extend(r.wall_ms);
    }
    let prototypes = first_seen(rows.iter().map(|r| r.prototype));
    let sizes = first_seen(rows.iter().map(|r| (r.steps, r.total)));
    let algorithms = first_seen(rows.iter().map(|r| r.algorithm));
    let modes = first_seen(rows.iter().map(|r| r.prices.clone()));

    let mut out = String::new();
    if !outcome.timing_reliable() {
        out.push_str(&format!(
            "> timing-unreliable: {} workers shared the machine\n\n",
            outcome.workers
        ));
    }
    for (title, pick) in [
        ("gap to reference (%)", Aggregate::gap as fn(&Aggregate) -> String),
        ("wall time (s)", Aggregate::time),
    ] {
        for &proto in &prototypes {
            out.push_str(&format!("### {proto}: {title}\n\n| T | N |"));
            let mut rule = String::from("|---|---|");
            for alg in &algorithms {
                for mode in &modes {
                    out.push_str(&format!(" {} {} |", alg.label(), mode));
                    rule.push_str("---|");
                }
            }
            out.push('\n');
            out.push_str(&rule);
            out.push('\n');
            for &(steps, total) in &sizes {
                out.push_str(&format!("| {steps} | {total} |"));
                for &alg in &algorithms {
                    for mode in &modes {
                        let text = cells
                            .get(&(proto, steps, total, alg, mode.clone()))
                            .map(pick)
                            .unwrap_or_else(|| "-".into());
                        out.push_str(&format!(" {text} |"));
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaChoice {
    /// `eta` calibrated so that `G(eta N) = H`.
    Threshold(f64),
    /// Uncalibrated penalty, `eta = 1`.
    Unit,
}

impl EtaChoice {
    pub fn label(&self) -> String {
        match self {
            EtaChoice::Threshold(h) => format!("eta_{h}"),
            EtaChoice::Unit => "eta=1".into(),
        }
    }

    fn penalty(&self, prototype: Prototype, total: usize) -> Result<Penalty> {
        match *self {
            EtaChoice::Threshold(h) => Penalty::calibrated(prototype, total as f64, h),
            EtaChoice::Unit => Penalty::new(prototype, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub eta_label: String,
    pub eta: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub total: usize,
    pub prototype: Prototype,
    pub exact_value: Option<f64>,
    pub fs_gap: Option<f64>,
    pub us_gap: Option<f64>,
    pub status: RunStatus,
}

/// Constant-price instance with an explicit penalty choice.
pub fn calibration_instance(
    steps: usize,
    total: usize,
    prototype: Prototype,
    eta: EtaChoice,
    beta: f64,
) -> Result<Instance> {
    let prices = vec![DEFAULT_P0; steps];
    let ranges = prices.iter().map(|p| beta * p).collect();
    Instance::new(total, prices, ranges, eta.penalty(prototype, total)?)
}

/// Fire-sale and uniform-sale gaps against the exact optimum for every
/// (eta, size, prototype). Cells whose exact solve fails are marked `dnc`.
pub fn calibrate(
    sizes: &[(usize, usize)],
    prototypes: &[Prototype],
    etas: &[EtaChoice],
    beta: f64,
    opts: &SolveOptions,
    workers: usize,
) -> Result<Vec<CalibrationRow>> {
    let mut jobs = Vec::new();
    for &eta in etas {
        for &(steps, total) in sizes {
            for &prototype in prototypes {
                let inst = calibration_instance(steps, total, prototype, eta, beta)?;
                jobs.push((eta, prototype, inst));
            }
        }
    }
    let rows = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|(eta, prototype, inst)| {
                let exact = solve_exact(inst, opts).ok().map(|s| s.value);
                let gap = |v: f64| exact.map(|e| gap_pct(Algorithm::FireSale, v, e));
                CalibrationRow {
                    eta_label: eta.label(),
                    eta: inst.penalty().eta,
                    steps: inst.steps(),
                    total: inst.total(),
                    prototype: *prototype,
                    exact_value: exact,
                    fs_gap: gap(fire_sale(inst).value),
                    us_gap: gap(uniform_sale(inst).value),
                    status: if exact.is_some() { RunStatus::Optimal } else { RunStatus::Dnc },
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(rows)
}

/// One table per eta with FS and US columns per prototype.
pub fn calibration_tables(rows: &[CalibrationRow]) -> String {
    let etas = first_seen(rows.iter().map(|r| r.eta_label.clone()));
    let prototypes = first_seen(rows.iter().map(|r| r.prototype));
    let mut out = String::new();
    for eta in &etas {
        let table: Vec<&CalibrationRow> = rows.iter().filter(|r| &r.eta_label == eta).collect();
        out.push_str(&format!("### {eta}\n\n| T | N |"));
        let mut rule = String::from("|---|---|");
        for proto in &prototypes {
            out.push_str(&format!(" {proto} FS | {proto} US |"));
            rule.push_str("---|---|");
        }
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for (steps, total) in first_seen(table.iter().map(|r| (r.steps, r.total))) {
            out.push_str(&format!("| {steps} | {total} |"));
            for proto in &prototypes {
                let row = table
                    .iter()
                    .find(|r| r.steps == steps && r.total == total && r.prototype == *proto);
                let show = |g: Option<f64>| match (row.map(|r| r.status), g) {
                    (Some(RunStatus::Dnc), _) => "DNC".to_string(),
                    (_, Some(g)) => format_gap(g),
                    _ => "-".to_string(),
                };
                out.push_str(&format!(
                    " {} | {} |",
                    show(row.and_then(|r| r.fs_gap)),
                    show(row.and_then(|r| r.us_gap))
                ));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn write_calibration_csv<W: Write>(writer: W, rows: &[CalibrationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["eta_label", "eta", "T", "N", "prototype", "exact_value", "fs_gap", "us_gap", "status"])?;
    for r in rows {
        w.write_record([
            r.eta_label.clone(),
            r.eta.to_string(),
            r.steps.to_string(),
            r.total.to_string(),
            r.prototype.to_string(),
            opt(r.exact_value),
            opt(r.fs_gap),
            opt(r.us_gap),
            r.status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid(algorithms: Vec<Algorithm>) -> GridSpec {
        GridSpec {
            sizes: vec![(10, 100)],
            prototypes: vec![Prototype::Arctan],
            algorithms,
            ..GridSpec::default()
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(a.label().parse::<Algorithm>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert!("simplex".parse::<Algorithm>().is_err());
    }

    #[test]
    fn gap_conventions() {
        assert_eq!(gap_pct(Algorithm::FireSale, 80.0, 100.0), 20.0);
        assert_eq!(gap_pct(Algorithm::UpperBound, 150.0, 100.0), 50.0);
        assert_eq!(format_gap(20.4249), "20.42");
        assert_eq!(format_gap(0.0099), "<ε");
        assert_eq!(format_gap(-1e-12), "<ε");
        assert_eq!(format_seconds(9.0), "<ε");
        assert_eq!(format_seconds(30.0), "0.03");
    }

    #[test]
    fn price_modes_parse() {
        assert_eq!("CST".parse::<PriceMode>().unwrap(), PriceMode::Constant);
        assert_eq!("avg".parse::<PriceMode>().unwrap(), PriceMode::Average);
        assert_eq!(
            "0.05:0.25".parse::<PriceMode>().unwrap(),
            PriceMode::Moment { mu: 0.05, sigma: 0.25 }
        );
        assert!("fast".parse::<PriceMode>().is_err());
    }

    #[test]
    fn fire_sale_run_matches_closed_form() {
        let inst = constant_instance(10, 100, Prototype::Arctan, 0.9, 0.99).unwrap();
        let r = run(&inst, Algorithm::FireSale, &AlgorithmParams::default()).unwrap();
        let expected = (100.0 - 90.0 * inst.penalty().value(100.0)) * 100.0;
        assert_eq!(r.value, Some(expected));
        assert_eq!(r.status, RunStatus::Heuristic);
    }

    #[test]
    fn every_algorithm_runs() {
        let inst = constant_instance(10, 1000, Prototype::Sqrt, 0.9, 0.99).unwrap();
        let params = AlgorithmParams::default();
        let exact = run(&inst, Algorithm::Exact, &params).unwrap().value.unwrap();
        for a in Algorithm::ALL {
            let r = run(&inst, a, &params).unwrap();
            let v = r.value.unwrap();
            if a.is_upper() {
                assert!(v >= exact);
                assert!(r.x.is_none() && r.bound.is_some());
            } else {
                assert!(v <= exact * (1.0 + 1e-12), "{a}");
                assert_eq!(r.x.unwrap().iter().sum::<usize>(), 1000);
            }
        }
    }

    #[test]
    fn dnc_errors_surface() {
        let inst = constant_instance(10, 1000, Prototype::Sqrt, 0.9, 0.99).unwrap();
        let params = AlgorithmParams {
            solve: SolveOptions::default().with_memory_limit(1024),
            ..AlgorithmParams::default()
        };
        assert!(run(&inst, Algorithm::Exact, &params).unwrap_err().is_dnc());
    }

    #[test]
    fn constant_arctan_row() {
        let outcome = run_grid(&small_grid(vec![
            Algorithm::FireSale,
            Algorithm::Uniform,
            Algorithm::Exact,
            Algorithm::UpperBound,
        ]))
        .unwrap();
        let gaps: Vec<String> =
            outcome.rows.iter().map(|r| format_gap(r.gap_pct.unwrap())).collect();
        assert_eq!(gaps, ["20.42", "7.81", "<ε", "38.19"]);
        assert_eq!(outcome.rows[2].status, RunStatus::Optimal);
        assert!(outcome.rows.iter().all(|r| r.reference_algorithm == Some(Algorithm::Exact)));
    }

    #[test]
    fn empty_algorithm_list_gives_header_only_csv() {
        let outcome = run_grid(&small_grid(Vec::new())).unwrap();
        assert!(outcome.rows.is_empty());
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &outcome.rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn dnc_rows_carry_no_value() {
        let mut spec = small_grid(vec![Algorithm::Exact, Algorithm::FireSale]);
        spec.params.solve = SolveOptions::default().with_memory_limit(16);
        let rows = run_grid(&spec).unwrap().rows;
        assert_eq!(rows[0].status, RunStatus::Dnc);
        assert_eq!(rows[0].value, None);
        assert_eq!(rows[1].status, RunStatus::Heuristic);
        assert_eq!(rows[1].gap_pct, None);
    }

    #[test]
    fn two_step_marked_optimal_when_it_matches() {
        let outcome = run_grid(&small_grid(vec![Algorithm::TwoStep, Algorithm::Exact])).unwrap();
        assert_eq!(outcome.rows[0].status, RunStatus::Optimal);
    }

    #[test]
    fn average_mode_expands_moment_grid() {
        let mut spec = small_grid(vec![Algorithm::Uniform, Algorithm::Exact]);
        spec.modes = vec![PriceMode::Average];
        let outcome = run_grid(&spec).unwrap();
        assert_eq!(outcome.rows.len(), 2 * MOMENT_GRID.len());
        assert!(outcome.rows.iter().all(|r| r.gap_pct.unwrap() >= -1e-6));
        let md = markdown_tables(&outcome);
        assert!(md.contains("US AVG"));
    }

    #[test]
    fn tables_are_deterministic() {
        let spec = small_grid(vec![Algorithm::FireSale, Algorithm::Exact]);
        let a = run_grid(&spec).unwrap();
        let b = run_grid(&spec).unwrap();
        let strip = |o: &BenchOutcome| {
            o.rows.iter().map(|r| (r.value, r.gap_pct)).collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        let md = markdown_tables(&a);
        assert!(md.contains("| 10 | 100 | 20.42 | <ε |"));
    }

    #[test]
    fn two_step_reference_without_exact() {
        let rows = run_grid(&small_grid(vec![Algorithm::FireSale, Algorithm::TwoStep])).unwrap().rows;
        assert_eq!(rows[0].reference_algorithm, Some(Algorithm::TwoStep));
        assert_eq!(format_gap(rows[0].gap_pct.unwrap()), "20.42");
        assert_eq!(rows[1].status, RunStatus::Heuristic);
    }

    #[test]
    fn parallel_grid_is_flagged() {
        let mut spec = small_grid(vec![Algorithm::FireSale]);
        spec.workers = 2;
        let outcome = run_grid(&spec).unwrap();
        assert!(!outcome.timing_reliable());
        assert!(markdown_tables(&outcome).starts_with("> timing-unreliable"));
    }

    #[test]
    fn calibration_examples() {
        let rows = calibrate(
            &[(10, 100)],
            &Prototype::ALL,
            &[EtaChoice::Threshold(0.75), EtaChoice::Threshold(0.99), EtaChoice::Unit],
            0.9,
            &SolveOptions::default(),
            1,
        )
        .unwrap();
        let find = |label: &str, proto: Prototype| {
            rows.iter().find(|r| r.eta_label == label && r.prototype == proto).unwrap()
        };
        let r = find("eta_0.99", Prototype::Arctan);
        assert_eq!(format_gap(r.fs_gap.unwrap()), "20.42");
        assert_eq!(format_gap(r.us_gap.unwrap()), "7.81");
        let r = find("eta_0.75", Prototype::Rational);
        assert_eq!(format_gap(r.fs_gap.unwrap()), "33.44");
        assert_eq!(format_gap(r.us_gap.unwrap()), "0.84");
        assert_eq!(find("eta=1", Prototype::Sqrt).eta, 1.0);
        let md = calibration_tables(&rows);
        assert!(md.contains("### eta_0.75") && md.contains("### eta=1"));
    }
}

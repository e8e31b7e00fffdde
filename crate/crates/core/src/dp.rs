//! Dynamic programming solvers.
//!
//! All variants share one table fill. `O[t][n]` is the best proceeds from
//! selling exactly `n` cells within the first `t` steps, where a cell is
//! `unit` assets (1 for the exact and funnel solvers, the grain `P` for the
//! coarse solver):
//!
//! ```text
//! O[t][n] = max_{k in [l_t, u_t]} O[t-1][n-k] + [p_t - c_t g(n unit)] k unit
//! ```
//!
//! Row `t` only stores `n` in a window `[lo_t, hi_t]`. The window is the
//! cumulative funnel `[L_t, U_t]`, with `L_t` raised to `N - sum_{i>t} u_i`
//! so every stored state can still complete the block. Argmax parents are
//! stored per cell and the schedule is read back from them, never from
//! floating-point equality. Ties go to the smallest `k`.

use std::env;
use std::time::{Duration, Instant};

use crate::bounds::continuous_first_stage;
use crate::error::{Error, Result};
use crate::model::{Instance, PenaltyValues, Schedule};

/// Environment variable holding the default memory budget in bytes.
pub const MEMORY_ENV: &str = "BLOCKSALE_MEMORY_LIMIT";
pub const DEFAULT_MEMORY_LIMIT: u64 = 24 * (1 << 30);
pub const DEFAULT_LAMBDA: usize = 5;

const CHECK_EVERY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    pub time_limit: Option<Duration>,
    pub memory_limit: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        let memory_limit = env::var(MEMORY_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(DEFAULT_MEMORY_LIMIT);
        Self { time_limit: None, memory_limit }
    }
}

impl SolveOptions {
    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = Some(limit);
        self
    }

    pub fn with_memory_limit(mut self, bytes: u64) -> Self {
        self.memory_limit = bytes;
        self
    }
}

/// Per-step decision bounds and the cumulative window they induce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunnelBounds {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
    /// `max(min(sum_{i<=t} l_i, N), N - sum_{i>t} u_i)`
    pub cum_lower: Vec<usize>,
    /// `min(sum_{i<=t} u_i, N)`
    pub cum_upper: Vec<usize>,
}

impl FunnelBounds {
    pub fn new(lower: Vec<usize>, upper: Vec<usize>, total: usize) -> Result<Self> {
        let steps = lower.len();
        if steps == 0 || upper.len() != steps {
            return Err(Error::Validation("bounds must have one entry per step".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u || *u > total) {
            return Err(Error::Validation("bounds need 0 <= l_t <= u_t <= N".into()));
        }
        let mut cum_lower = Vec::with_capacity(steps);
        let mut cum_upper = Vec::with_capacity(steps);
        let (mut sl, mut su) = (0usize, 0usize);
        for t in 0..steps {
            sl = sl.saturating_add(lower[t]);
            su = su.saturating_add(upper[t]);
            cum_lower.push(sl.min(total));
            cum_upper.push(su.min(total));
        }
        if su < total {
            return Err(Error::InfeasibleFunnel { upper: su, total });
        }
        if sl > total {
            return Err(Error::Validation(format!(
                "lower bounds sum to {sl} > N = {total}"
            )));
        }
        let mut rest = 0usize;
        for t in (0..steps).rev() {
            cum_lower[t] = cum_lower[t].max(total.saturating_sub(rest));
            rest = rest.saturating_add(upper[t]);
        }
        Ok(Self { lower, upper, cum_lower, cum_upper })
    }

    pub fn vacuous(steps: usize, total: usize) -> Result<Self> {
        Self::new(vec![0; steps], vec![total; steps], total)
    }

    /// `l_t = max(0, floor(x0_t) - r)`, `u_t = min(N, ceil(x0_t) + r)`.
    pub fn around(x0: &[f64], radius: usize, total: usize) -> Result<Self> {
        if x0.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("funnel centre must be finite and non-negative".into()));
        }
        let lower = x0
            .iter()
            .map(|&v| (v.floor() as usize).saturating_sub(radius).min(total))
            .collect();
        let upper = x0
            .iter()
            .map(|&v| (v.ceil() as usize).saturating_add(radius).min(total))
            .collect();
        Self::new(lower, upper, total)
    }

    pub fn contains(&self, x: &[usize]) -> bool {
        x.len() == self.lower.len()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Number of table cells the fill will store.
    pub fn cells(&self) -> u64 {
        self.cum_lower
            .iter()
            .zip(&self.cum_upper)
            .map(|(&lo, &hi)| (hi + 1).saturating_sub(lo) as u64)
            .sum()
    }
}

#[derive(Debug, Clone)]
enum Parents {
    Narrow(Vec<u16>),
    Wide(Vec<u32>),
}

impl Parents {
    fn with_capacity(span: usize, cells: usize) -> Self {
        if span <= u16::MAX as usize {
            Parents::Narrow(Vec::with_capacity(cells))
        } else {
            Parents::Wide(Vec::with_capacity(cells))
        }
    }

    fn bytes_per_cell(span: usize) -> u64 {
        if span <= u16::MAX as usize {
            2
        } else {
            4
        }
    }

    #[inline]
    fn push(&mut self, offset: usize) {
        match self {
            Parents::Narrow(v) => v.push(offset as u16),
            Parents::Wide(v) => v.push(offset as u32),
        }
    }

    fn get(&self, i: usize) -> usize {
        match self {
            Parents::Narrow(v) => v[i] as usize,
            Parents::Wide(v) => v[i] as usize,
        }
    }
}

#[derive(Debug, Clone)]
struct Row {
    lo: usize,
    hi: usize,
    k_lo: usize,
    parents: Parents,
    values: Option<Vec<f64>>,
}

/// Filled DP table: per-row windows, argmax parents and, optionally, values.
#[derive(Debug, Clone)]
pub struct DpTable {
    unit: usize,
    rows: Vec<Row>,
    best: f64,
}

impl DpTable {
    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    /// Cells per unit of `n`.
    pub fn unit(&self) -> usize {
        self.unit
    }

    /// Stored range of `n` for step `t` (1-based; row 0 is `{0}`).
    pub fn window(&self, t: usize) -> (usize, usize) {
        if t == 0 {
            (0, 0)
        } else {
            let row = &self.rows[t - 1];
            (row.lo, row.hi)
        }
    }

    /// `O[t][n]` if the cell exists and values were kept.
    pub fn value(&self, t: usize, n: usize) -> Option<f64> {
        if t == 0 {
            return (n == 0).then_some(0.0);
        }
        let row = &self.rows[t - 1];
        if n < row.lo || n > row.hi {
            return None;
        }
        row.values.as_ref().map(|v| v[n - row.lo])
    }

    /// Chosen `k` for cell `(t, n)`.
    pub fn parent(&self, t: usize, n: usize) -> Option<usize> {
        let row = self.rows.get(t.checked_sub(1)?)?;
        if n < row.lo || n > row.hi {
            return None;
        }
        Some(row.k_lo + row.parents.get(n - row.lo))
    }

    /// Value of the final cell.
    pub fn optimum(&self) -> f64 {
        self.best
    }

    /// Cell counts per step, read back from the parents of `(T, target)`.
    pub fn backtrack(&self, target: usize) -> Vec<usize> {
        let mut x = vec![0; self.rows.len()];
        let mut n = target;
        for t in (1..=self.rows.len()).rev() {
            let k = self.parent(t, n).expect("backtrack left the stored window");
            x[t - 1] = k;
            n -= k;
        }
        debug_assert_eq!(n, 0);
        x
    }
}

struct Deadline {
    start: Instant,
    limit: Option<Duration>,
}

impl Deadline {
    fn new(limit: Option<Duration>) -> Self {
        Self { start: Instant::now(), limit }
    }

    fn check(&self) -> Result<()> {
        if let Some(limit) = self.limit {
            let elapsed = self.start.elapsed();
            if elapsed > limit {
                return Err(Error::TimeLimit { limit, elapsed });
            }
        }
        Ok(())
    }
}

/// Maximum of `values[len-1-j] + slope * (base + j)` over `j`, smallest `j`
/// on ties. Four independent lanes keep the comparison chain short.
#[inline]
fn argmax_affine(values: &[f64], slope: f64, base: f64) -> (f64, usize) {
    let mut best = [f64::NEG_INFINITY; 4];
    let mut arg = [0usize; 4];
    let mut k = [base, base + 1.0, base + 2.0, base + 3.0];
    let mut j = 0usize;
    let chunks = values.rchunks_exact(4);
    let rest = chunks.remainder();
    for chunk in chunks {
        for lane in 0..4 {
            let v = chunk[3 - lane] + slope * k[lane];
            if v > best[lane] {
                best[lane] = v;
                arg[lane] = j + lane;
            }
            k[lane] += 4.0;
        }
        j += 4;
    }
    for (lane, &value) in rest.iter().rev().enumerate() {
        let v = value + slope * k[lane];
        if v > best[lane] {
            best[lane] = v;
            arg[lane] = j + lane;
        }
    }
    let mut top = 0;
    for lane in 1..4 {
        if best[lane] > best[top] || (best[lane] == best[top] && arg[lane] < arg[top]) {
            top = lane;
        }
    }
    (best[top], arg[top])
}

fn estimate_bytes(bounds: &FunnelBounds, keep_values: bool, table_len: usize) -> u64 {
    let span = bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(l, u)| u - l)
        .max()
        .unwrap_or(0);
    let per_cell = Parents::bytes_per_cell(span) + if keep_values { 8 } else { 0 };
    let widest = bounds
        .cum_lower
        .iter()
        .zip(&bounds.cum_upper)
        .map(|(&lo, &hi)| (hi + 1 - lo.min(hi + 1)) as u64)
        .max()
        .unwrap_or(0);
    bounds.cells() * per_cell + 16 * widest + 8 * table_len as u64
}

/// Fills the table for `total` cells of `unit` assets each.
fn fill(
    inst: &Instance,
    bounds: &FunnelBounds,
    unit: usize,
    keep_values: bool,
    opts: &SolveOptions,
) -> Result<DpTable> {
    let steps = inst.steps();
    let total = *bounds.cum_upper.last().unwrap();
    if bounds.lower.len() != steps {
        return Err(Error::Validation("bounds length differs from T".into()));
    }
    let table_len = if total <= crate::model::PENALTY_TABLE_LIMIT { total + 1 } else { 0 };
    let required = estimate_bytes(bounds, keep_values, table_len);
    if required > opts.memory_limit {
        return Err(Error::MemoryBudget { required, available: opts.memory_limit });
    }

    let deadline = Deadline::new(opts.time_limit);
    let penalty = PenaltyValues::new(*inst.penalty(), unit, total);
    let unit_f = unit as f64;
    let mut rows: Vec<Row> = Vec::with_capacity(steps);
    let mut prev: Vec<f64> = vec![0.0];
    let mut prev_lo = 0usize;
    let mut cur: Vec<f64> = Vec::new();

    for t in 0..steps {
        deadline.check()?;
        let (lo, hi) = (bounds.cum_lower[t], bounds.cum_upper[t]);
        let (k_lo, k_hi) = (bounds.lower[t], bounds.upper[t]);
        let prev_hi = prev_lo + prev.len() - 1;
        let (p, c) = (inst.prices()[t], inst.ranges()[t]);
        let mut parents = Parents::with_capacity(k_hi - k_lo, hi + 1 - lo);
        cur.clear();
        cur.reserve(hi + 1 - lo);

        for n in lo..=hi {
            if (n - lo) % CHECK_EVERY == CHECK_EVERY - 1 {
                deadline.check()?;
            }
            let kmin = k_lo.max(n.saturating_sub(prev_hi));
            let kmax = k_hi.min(n.saturating_sub(prev_lo));
            if n < prev_lo || kmin > kmax {
                cur.push(f64::NEG_INFINITY);
                parents.push(0);
                continue;
            }
            let slope = (p - c * penalty.get(n)) * unit_f;
            let window = &prev[n - kmax - prev_lo..=n - kmin - prev_lo];
            let (value, j) = argmax_affine(window, slope, kmin as f64);
            cur.push(value);
            parents.push(kmin + j - k_lo);
        }

        let values = keep_values.then(|| cur.clone());
        rows.push(Row { lo, hi, k_lo, parents, values });
        std::mem::swap(&mut prev, &mut cur);
        prev_lo = lo;
    }

    let best = prev[total - prev_lo];
    Ok(DpTable { unit, rows, best })
}

fn validate_grain(inst: &Instance, grain: usize) -> Result<()> {
    if grain == 0 || grain > inst.total() {
        return Err(Error::Validation(format!(
            "grain {grain} outside [1, N = {}]",
            inst.total()
        )));
    }
    Ok(())
}

/// Exact optimum over all feasible schedules.
pub fn solve_exact(inst: &Instance, opts: &SolveOptions) -> Result<Schedule> {
    let bounds = FunnelBounds::vacuous(inst.steps(), inst.total())?;
    let table = fill(inst, &bounds, 1, false, opts)?;
    let x = table.backtrack(inst.total());
    inst.schedule(x)
}

/// Exact table with every value kept, for inspection on small instances.
pub fn exact_table(inst: &Instance, opts: &SolveOptions) -> Result<DpTable> {
    let bounds = FunnelBounds::vacuous(inst.steps(), inst.total())?;
    fill(inst, &bounds, 1, true, opts)
}

/// Exact DP over buckets of `grain` units; the `N mod grain` remainder is
/// sold at the last step.
pub fn solve_coarse(inst: &Instance, grain: usize, opts: &SolveOptions) -> Result<Schedule> {
    validate_grain(inst, grain)?;
    let buckets = inst.total() / grain;
    let bounds = FunnelBounds::vacuous(inst.steps(), buckets)?;
    let table = fill(inst, &bounds, grain, false, opts)?;
    let mut x: Vec<usize> = table.backtrack(buckets).into_iter().map(|b| b * grain).collect();
    *x.last_mut().unwrap() += inst.total() - buckets * grain;
    inst.schedule(x)
}

/// Best schedule inside explicit funnel bounds.
pub fn solve_within(inst: &Instance, bounds: &FunnelBounds, opts: &SolveOptions) -> Result<Schedule> {
    if *bounds.cum_upper.last().unwrap_or(&0) != inst.total() {
        return Err(Error::InfeasibleFunnel {
            upper: *bounds.cum_upper.last().unwrap_or(&0),
            total: inst.total(),
        });
    }
    let table = fill(inst, bounds, 1, false, opts)?;
    if !table.optimum().is_finite() {
        return Err(Error::InfeasibleFunnel { upper: 0, total: inst.total() });
    }
    inst.schedule(table.backtrack(inst.total()))
}

/// Funnel DP of radius `radius` around a (possibly fractional) start point.
pub fn solve_bounded(
    inst: &Instance,
    x0: &[f64],
    radius: usize,
    opts: &SolveOptions,
) -> Result<Schedule> {
    if x0.len() != inst.steps() {
        return Err(Error::Validation(format!(
            "start point has {} entries, expected {}",
            x0.len(),
            inst.steps()
        )));
    }
    if radius == 0 {
        return Err(Error::Validation("funnel radius must be at least 1".into()));
    }
    let bounds = FunnelBounds::around(x0, radius, inst.total())?;
    solve_within(inst, &bounds, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grain {
    Fixed(usize),
    Auto,
}

/// `P = floor(10^c)` with `c = (2 log10 N - log10 T - 2) / 4`, clamped to `[1, N]`.
pub fn auto_grain(steps: usize, total: usize) -> usize {
    let c = (2.0 * (total as f64).log10() - (steps as f64).log10() - 2.0) / 4.0;
    (10f64.powf(c).floor() as usize).clamp(1, total)
}

impl Grain {
    pub fn resolve(self, inst: &Instance) -> usize {
        match self {
            Grain::Fixed(p) => p,
            Grain::Auto => auto_grain(inst.steps(), inst.total()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStep {
    pub grain: usize,
    pub radius: usize,
    /// Objective of the first-stage point (integer or relaxed).
    pub first_value: f64,
    pub refined: Schedule,
}

/// Coarse DP followed by a funnel DP of radius `lambda * P` around it.
pub fn solve_two_step(
    inst: &Instance,
    grain: Grain,
    lambda: usize,
    opts: &SolveOptions,
) -> Result<TwoStep> {
    let p = grain.resolve(inst);
    solve_two_step_radius(inst, Grain::Fixed(p), (lambda * p).max(1), opts)
}

/// Coarse DP followed by a funnel DP of explicit radius.
pub fn solve_two_step_radius(
    inst: &Instance,
    grain: Grain,
    radius: usize,
    opts: &SolveOptions,
) -> Result<TwoStep> {
    let deadline = Deadline::new(opts.time_limit);
    let grain = grain.resolve(inst);
    let coarse = solve_coarse(inst, grain, opts)?;
    let centre: Vec<f64> = coarse.x.iter().map(|&v| v as f64).collect();
    let refined = solve_bounded(inst, &centre, radius, &remaining(opts, &deadline)?)?;
    Ok(TwoStep { grain, radius, first_value: coarse.value, refined })
}

/// Relaxed stationary point followed by a funnel DP of radius `lambda * P`.
pub fn solve_two_step_continuous(
    inst: &Instance,
    grain: Grain,
    lambda: usize,
    opts: &SolveOptions,
) -> Result<TwoStep> {
    let p = grain.resolve(inst);
    solve_continuous_radius(inst, p, (lambda * p).max(1), opts)
}

/// Relaxed stationary point followed by a funnel DP of explicit radius.
/// `grain` is only reported back.
pub fn solve_continuous_radius(
    inst: &Instance,
    grain: usize,
    radius: usize,
    opts: &SolveOptions,
) -> Result<TwoStep> {
    let deadline = Deadline::new(opts.time_limit);
    let stage = continuous_first_stage(inst, 1e-6, 20_000);
    let refined = solve_bounded(inst, &stage.x, radius, &remaining(opts, &deadline)?)?;
    Ok(TwoStep { grain, radius, first_value: stage.value, refined })
}

fn remaining(opts: &SolveOptions, deadline: &Deadline) -> Result<SolveOptions> {
    deadline.check()?;
    let mut next = *opts;
    if let Some(limit) = opts.time_limit {
        next.time_limit = Some(limit.saturating_sub(deadline.start.elapsed()));
    }
    Ok(next)
}

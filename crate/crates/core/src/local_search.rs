//! Naive baselines and iterated local search over adjacent-pair shifts.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Instance, Schedule};

/// Everything at the first step.
pub fn fire_sale(inst: &Instance) -> Schedule {
    let mut x = vec![0; inst.steps()];
    x[0] = inst.total();
    let value = inst.objective(&x);
    Schedule { x, value }
}

/// `N / T` per step; a remainder goes one unit at a time to the earliest steps.
pub fn uniform_sale(inst: &Instance) -> Schedule {
    let (steps, total) = (inst.steps(), inst.total());
    let (share, rest) = (total / steps, total % steps);
    let x: Vec<usize> = (0..steps).map(|t| share + usize::from(t < rest)).collect();
    let value = inst.objective(&x);
    Schedule { x, value }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlsConfig {
    /// Cap on applied shifts per shift size.
    pub max_iterations: usize,
    pub time_limit: Option<Duration>,
    /// Run shift sizes `2^R, 2^(R-1), ..., 1` with `R = floor(log2 N)`.
    pub dichotomy: bool,
    /// Shift size when `dichotomy` is off.
    pub shift: usize,
    /// Keep the objective after every applied shift.
    pub record_trace: bool,
}

impl Default for IlsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000_000,
            time_limit: None,
            dichotomy: true,
            shift: 1,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IlsStatus {
    LocalOptimum,
    IterationCap,
    TimeCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlsOutcome {
    pub schedule: Schedule,
    pub status: IlsStatus,
    pub shifts: usize,
    pub trace: Vec<f64>,
}

/// Relative gain a shift must beat to be applied; rounding noise of the
/// two-term difference stays below this.
pub const IMPROVEMENT_TOLERANCE: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move {
    /// Pair `(t, t + 1)`, 0-based.
    pub t: usize,
    /// `true` moves units from `t + 1` to `t`.
    pub forward: bool,
    pub delta: f64,
}

/// Best shift of size `shift` on pair `(t, t + 1)`, improving or not.
/// `sold` is the cumulative quantity through step `t`. Only the two affected
/// terms are recomputed.
fn pair_move(inst: &Instance, x: &[usize], t: usize, sold: usize, shift: usize) -> Option<Move> {
    let pen = inst.penalty();
    let (p, c) = (inst.prices(), inst.ranges());
    let step = shift as f64;
    let next = sold + x[t + 1];
    let (here, there) = (x[t] as f64, x[t + 1] as f64);
    let tail = p[t + 1] - c[t + 1] * pen.value(next as f64);
    let base = (p[t] - c[t] * pen.value(sold as f64)) * here + tail * there;
    let mut best: Option<Move> = None;
    if x[t + 1] >= shift {
        let d = (p[t] - c[t] * pen.value((sold + shift) as f64)) * (here + step)
            + tail * (there - step)
            - base;
        best = Some(Move { t, forward: true, delta: d });
    }
    if x[t] >= shift {
        let d = (p[t] - c[t] * pen.value((sold - shift) as f64)) * (here - step)
            + tail * (there + step)
            - base;
        if best.is_none_or(|b| d > b.delta) {
            best = Some(Move { t, forward: false, delta: d });
        }
    }
    best
}

fn pick(moves: &[Option<Move>], threshold: f64) -> Option<Move> {
    let mut best: Option<Move> = None;
    let mut best_delta = threshold;
    for mv in moves.iter().flatten() {
        if mv.delta > best_delta {
            best_delta = mv.delta;
            best = Some(*mv);
        }
    }
    best
}

/// Best shift of size `shift` over all adjacent pairs that gains more than
/// `threshold`; the first pair wins ties.
pub fn best_move(inst: &Instance, x: &[usize], shift: usize, threshold: f64) -> Option<Move> {
    let mut sold = 0usize;
    let moves: Vec<Option<Move>> = (0..x.len().saturating_sub(1))
        .map(|t| {
            sold += x[t];
            pair_move(inst, x, t, sold, shift)
        })
        .collect();
    pick(&moves, threshold)
}

fn apply(x: &mut [usize], mv: &Move, shift: usize) {
    if mv.forward {
        x[mv.t] += shift;
        x[mv.t + 1] -= shift;
    } else {
        x[mv.t] -= shift;
        x[mv.t + 1] += shift;
    }
}

/// Shift sizes tried in order.
pub fn shift_sequence(total: usize, config: &IlsConfig) -> Vec<usize> {
    if config.dichotomy {
        let levels = usize::BITS - 1 - total.max(1).leading_zeros();
        (0..=levels).rev().map(|r| 1usize << r).collect()
    } else {
        vec![config.shift.max(1)]
    }
}

/// Iterated local search from a feasible start. Each shift size runs to a
/// fixed point (best-improvement, scanning from the first pair every time).
pub fn ils(inst: &Instance, start: &[usize], config: &IlsConfig) -> Result<IlsOutcome> {
    inst.check_feasible(start)?;
    let begin = Instant::now();
    let mut x = start.to_vec();
    let mut value = inst.objective(&x);
    let mut status = IlsStatus::LocalOptimum;
    let mut shifts = 0usize;
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(value);
    }

    'phases: for shift in shift_sequence(inst.total(), config) {
        // A shift on pair t changes x_t, x_{t+1} and y_t only, so just the
        // cached moves of pairs t - 1, t and t + 1 go stale.
        let mut cum: Vec<usize> = x
            .iter()
            .scan(0, |acc, &v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let pairs = x.len() - 1;
        let mut moves: Vec<Option<Move>> =
            (0..pairs).map(|t| pair_move(inst, &x, t, cum[t], shift)).collect();
        let mut applied = 0usize;
        loop {
            if config.time_limit.is_some_and(|limit| begin.elapsed() > limit) {
                status = IlsStatus::TimeCap;
                break 'phases;
            }
            if applied >= config.max_iterations {
                status = IlsStatus::IterationCap;
                break;
            }
            let threshold = IMPROVEMENT_TOLERANCE * value.abs();
            let Some(mv) = pick(&moves, threshold) else {
                break;
            };
            apply(&mut x, &mv, shift);
            cum[mv.t] = if mv.forward { cum[mv.t] + shift } else { cum[mv.t] - shift };
            for t in mv.t.saturating_sub(1)..(mv.t + 2).min(pairs) {
                moves[t] = pair_move(inst, &x, t, cum[t], shift);
            }
            value += mv.delta;
            applied += 1;
            shifts += 1;
            if config.record_trace {
                trace.push(value);
            }
        }
        value = inst.objective(&x);
    }

    let value = inst.objective(&x);
    Ok(IlsOutcome { schedule: Schedule { x, value }, status, shifts, trace })
}

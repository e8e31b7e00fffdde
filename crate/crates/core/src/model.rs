//! Problem data: penalty prototypes, calibrated penalty functions, instances
//! and the objective every solver maximizes.
//!
//! The proceeds of a schedule `x` are
//!
//! ```text
//! f(x) = sum_t [p_t - c_t * g(y_t)] * x_t,   y_t = x_1 + ... + x_t
//! ```
//!
//! where `p_t` is the best bid, `c_t = p_t - q_t` the penalty range down to
//! the floor price `q_t`, and `g` a bounded increasing penalty applied to the
//! cumulative quantity already sold.
//!
//! All arithmetic is `f64`. Objective values stay below `max(p) * N`, far
//! inside the exact-integer range of a double, but sums are still rounded at
//! every step: two schedules whose values differ by less than a few ulps may
//! compare in either order depending on summation order.

use std::f64::consts::{FRAC_2_PI, FRAC_PI_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prices::BatchSpec;

/// Largest `N` for which solvers precompute `g(0..=N)` (8e7 bytes).
pub const PENALTY_TABLE_LIMIT: usize = 10_000_000;

pub const DEFAULT_BETA: f64 = 0.9;
pub const DEFAULT_THRESHOLD: f64 = 0.99;

/// Bounded, strictly increasing prototype `G` with `G(0) = 0` and `G -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prototype {
    /// `x / (1 + x)`
    Rational,
    /// `1 - 2 / (1 + sqrt(1 + x))`
    Sqrt,
    /// `(2 / pi) * atan(x)`
    Arctan,
}

impl Prototype {
    pub const ALL: [Prototype; 3] = [Prototype::Rational, Prototype::Arctan, Prototype::Sqrt];

    pub fn value(self, x: f64) -> f64 {
        match self {
            Prototype::Rational => x / (1.0 + x),
            Prototype::Sqrt => 1.0 - 2.0 / (1.0 + (1.0 + x).sqrt()),
            Prototype::Arctan => FRAC_2_PI * x.atan(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Prototype::Rational => 1.0 / ((1.0 + x) * (1.0 + x)),
            Prototype::Sqrt => {
                let s = (1.0 + x).sqrt();
                1.0 / (s * (1.0 + s) * (1.0 + s))
            }
            Prototype::Arctan => FRAC_2_PI / (1.0 + x * x),
        }
    }

    /// Inverse on `[0, 1)`.
    pub fn inverse(self, h: f64) -> f64 {
        match self {
            Prototype::Rational => h / (1.0 - h),
            Prototype::Sqrt => 4.0 * h / ((1.0 - h) * (1.0 - h)),
            Prototype::Arctan => (FRAC_PI_2 * h).tan(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Prototype::Rational => "rational",
            Prototype::Sqrt => "sqrt",
            Prototype::Arctan => "arctan",
        }
    }
}

impl fmt::Display for Prototype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Prototype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rational" => Ok(Prototype::Rational),
            "sqrt" => Ok(Prototype::Sqrt),
            "arctan" => Ok(Prototype::Arctan),
            other => Err(Error::Validation(format!("unknown prototype `{other}`"))),
        }
    }
}

/// Scaling factor `eta` such that `G(eta * level) = threshold`.
pub fn calibrate_eta(prototype: Prototype, level: f64, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::Domain(format!("level {level} must be positive")));
    }
    Ok(prototype.inverse(threshold) / level)
}

/// Penalty `g(y) = G(eta * y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub prototype: Prototype,
    pub eta: f64,
}

impl Penalty {
    pub fn new(prototype: Prototype, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Domain(format!("eta {eta} must be positive and finite")));
        }
        Ok(Self { prototype, eta })
    }

    pub fn calibrated(prototype: Prototype, level: f64, threshold: f64) -> Result<Self> {
        Self::new(prototype, calibrate_eta(prototype, level, threshold)?)
    }

    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        self.prototype.value(self.eta * y)
    }

    #[inline]
    pub fn derivative(&self, y: f64) -> f64 {
        self.eta * self.prototype.derivative(self.eta * y)
    }
}

/// `g(n * unit)` for `n = 0..=count`, tabulated when small enough.
#[derive(Debug, Clone)]
pub enum PenaltyValues {
    Table(Vec<f64>),
    OnDemand { penalty: Penalty, unit: f64 },
}

impl PenaltyValues {
    pub fn new(penalty: Penalty, unit: usize, count: usize) -> Self {
        let unit = unit as f64;
        if count <= PENALTY_TABLE_LIMIT {
            PenaltyValues::Table((0..=count).map(|n| penalty.value(n as f64 * unit)).collect())
        } else {
            PenaltyValues::OnDemand { penalty, unit }
        }
    }

    #[inline]
    pub fn get(&self, n: usize) -> f64 {
        match self {
            PenaltyValues::Table(values) => values[n],
            PenaltyValues::OnDemand { penalty, unit } => penalty.value(n as f64 * unit),
        }
    }
}

/// A validated problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    total: usize,
    prices: Vec<f64>,
    ranges: Vec<f64>,
    penalty: Penalty,
}

impl Instance {
    pub fn new(total: usize, prices: Vec<f64>, ranges: Vec<f64>, penalty: Penalty) -> Result<Self> {
        let steps = prices.len();
        if steps == 0 {
            return Err(Error::Validation("at least one time step is required".into()));
        }
        if ranges.len() != steps {
            return Err(Error::Validation(format!(
                "{} prices but {} penalty ranges",
                steps,
                ranges.len()
            )));
        }
        if total == 0 {
            return Err(Error::Validation("block size must be positive".into()));
        }
        if steps > total {
            return Err(Error::Validation(format!(
                "T = {steps} exceeds N = {total}"
            )));
        }
        for (t, (&p, &c)) in prices.iter().zip(&ranges).enumerate() {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Validation(format!("price p[{t}] = {p} must be positive")));
            }
            if !(c > 0.0 && c < p) {
                return Err(Error::Validation(format!(
                    "penalty range c[{t}] = {c} must lie in (0, p[{t}] = {p})"
                )));
            }
        }
        Penalty::new(penalty.prototype, penalty.eta)?;
        Ok(Self { total, prices, ranges, penalty })
    }

    /// Floor price `q_t = (1 - beta) p_t`, penalty calibrated by `G(eta L) = H`.
    pub fn with_floor(
        total: usize,
        prices: Vec<f64>,
        beta: f64,
        prototype: Prototype,
        threshold: f64,
        level: f64,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Validation(format!("beta {beta} outside (0, 1)")));
        }
        let penalty = Penalty::calibrated(prototype, level, threshold)?;
        let ranges = prices.iter().map(|p| beta * p).collect();
        Self::new(total, prices, ranges, penalty)
    }

    /// Floor at `beta = 0.9`, calibration `G(eta N) = 0.99`.
    pub fn with_defaults(total: usize, prices: Vec<f64>, prototype: Prototype) -> Result<Self> {
        Self::with_floor(total, prices, DEFAULT_BETA, prototype, DEFAULT_THRESHOLD, total as f64)
    }

    pub fn steps(&self) -> usize {
        self.prices.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    /// Unit value at step `t` once `sold` units have been sold in total.
    #[inline]
    pub fn unit_price(&self, t: usize, sold: f64) -> f64 {
        self.prices[t] - self.ranges[t] * self.penalty.value(sold)
    }

    pub fn check_feasible(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.steps() {
            return Err(Error::Infeasible(format!(
                "schedule has {} entries, expected {}",
                x.len(),
                self.steps()
            )));
        }
        let sum = x.iter().try_fold(0usize, |acc, &v| acc.checked_add(v));
        match sum {
            Some(s) if s == self.total => Ok(()),
            Some(s) => Err(Error::Infeasible(format!("sum {s} != N = {}", self.total))),
            None => Err(Error::Infeasible("sum overflows".into())),
        }
    }

    /// Objective value of a feasible schedule.
    pub fn evaluate(&self, x: &[usize]) -> Result<f64> {
        self.check_feasible(x)?;
        Ok(self.objective(x))
    }

    /// Objective without the feasibility check; one left-to-right pass.
    pub fn objective(&self, x: &[usize]) -> f64 {
        let mut sold = 0usize;
        let mut value = 0.0;
        for (t, &q) in x.iter().enumerate() {
            sold += q;
            if q > 0 {
                value += self.unit_price(t, sold as f64) * q as f64;
            }
        }
        value
    }

    pub fn schedule(&self, x: Vec<usize>) -> Result<Schedule> {
        let value = self.evaluate(&x)?;
        Ok(Schedule { x, value })
    }
}

/// Feasible integer schedule with its cached objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub x: Vec<usize>,
    pub value: f64,
}

/// JSON instance description. Either `prices` or `generator` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub total: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_prototype")]
    pub prototype: Prototype,
    #[serde(rename = "H", default = "default_threshold")]
    pub threshold: f64,
    /// Calibration level; defaults to `N`.
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<BatchSpec>,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_prototype() -> Prototype {
    Prototype::Arctan
}

impl InstanceSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<Instance> {
        let prices = match (&self.prices, &self.generator) {
            (Some(prices), _) => prices.clone(),
            (None, Some(generator)) => generator.prices_for(self.steps)?,
            (None, None) => {
                return Err(Error::Validation("instance needs `prices` or `generator`".into()))
            }
        };
        if prices.len() != self.steps {
            return Err(Error::Validation(format!(
                "T = {} but {} prices were given",
                self.steps,
                prices.len()
            )));
        }
        let level = self.level.unwrap_or(self.total as f64);
        Instance::with_floor(self.total, prices, self.beta, self.prototype, self.threshold, level)
    }
}

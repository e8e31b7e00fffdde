//! Price vectors: geometric Brownian motion paths, averaged batches and
//! the subsampling used to derive shorter horizons from one long path.
//!
//! Normal draws come from `ChaCha8Rng::seed_from_u64(seed)` fed through
//! `rand_distr::StandardNormal` (ziggurat). Both are portable and pinned by
//! the lock file, so a seed reproduces the same path on every platform.
//! Path `i` of a batch uses sub-seed `seed.wrapping_add(i)`.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_P0: f64 = 100.0;
pub const DEFAULT_HORIZON: usize = 1000;
pub const DEFAULT_PATHS: usize = 10;

/// Drift and volatility pairs of the standard experiment set.
pub const MOMENT_GRID: [(f64, f64); 9] = [
    (-0.05, 0.10),
    (-0.05, 0.25),
    (-0.05, 0.70),
    (0.0, 0.10),
    (0.0, 0.25),
    (0.0, 0.70),
    (0.05, 0.10),
    (0.05, 0.25),
    (0.05, 0.70),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmSpec {
    pub p0: f64,
    pub mu: f64,
    pub sigma: f64,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
}

impl GbmSpec {
    fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return Err(Error::Validation(format!("p0 = {} must be positive", self.p0)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !self.mu.is_finite() {
            return Err(Error::Validation("mu must be finite and sigma non-negative".into()));
        }
        if self.steps == 0 {
            return Err(Error::Validation("path needs at least one step".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation(format!("dt = {} must be positive", self.dt)));
        }
        Ok(())
    }
}

/// Simulates `S_1, ..., S_steps` starting from `S_0 = p0`:
/// `S_{k+1} = S_k exp[(mu - sigma^2/2) dt + sigma sqrt(dt) Z_k]`.
pub fn simulate_gbm(spec: &GbmSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let drift = (spec.mu - 0.5 * spec.sigma * spec.sigma) * spec.dt;
    let vol = spec.sigma * spec.dt.sqrt();
    let mut price = spec.p0;
    let mut path = Vec::with_capacity(spec.steps);
    for _ in 0..spec.steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        price *= (drift + vol * z).exp();
        path.push(price);
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceBatch {
    pub paths: Vec<Vec<f64>>,
    pub averaged: Vec<f64>,
}

/// Batch generator parameters; embeddable in instance JSON as `generator`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default = "default_p0")]
    pub p0: f64,
    /// Length of every simulated path (`T_max`).
    #[serde(default = "default_horizon")]
    pub steps: usize,
    /// Time increment; defaults to `1 / steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_p0() -> f64 {
    DEFAULT_P0
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_paths() -> usize {
    DEFAULT_PATHS
}

impl BatchSpec {
    pub fn new(mu: f64, sigma: f64, seed: u64) -> Self {
        Self {
            mu,
            sigma,
            p0: DEFAULT_P0,
            steps: DEFAULT_HORIZON,
            dt: None,
            paths: DEFAULT_PATHS,
            seed,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(1.0 / self.steps as f64)
    }

    pub fn build(&self) -> Result<PriceBatch> {
        build_batch(self.mu, self.sigma, self.p0, self.steps, self.dt(), self.paths, self.seed)
    }

    /// Averaged batch subsampled down to `steps` prices.
    pub fn prices_for(&self, steps: usize) -> Result<Vec<f64>> {
        subsample(&self.build()?.averaged, steps)
    }
}

pub fn build_batch(
    mu: f64,
    sigma: f64,
    p0: f64,
    horizon: usize,
    dt: f64,
    count: usize,
    seed: u64,
) -> Result<PriceBatch> {
    if count == 0 {
        return Err(Error::Validation("batch needs at least one path".into()));
    }
    let paths = (0..count as u64)
        .map(|i| {
            simulate_gbm(&GbmSpec {
                p0,
                mu,
                sigma,
                steps: horizon,
                dt,
                seed: seed.wrapping_add(i),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut averaged = vec![0.0; horizon];
    for path in &paths {
        for (acc, &p) in averaged.iter_mut().zip(path) {
            *acc += p;
        }
    }
    for acc in &mut averaged {
        *acc /= count as f64;
    }
    Ok(PriceBatch { paths, averaged })
}

/// Entries at 1-based positions `s, 2s, ..., steps * s` with `s = len / steps`.
pub fn subsample(averaged: &[f64], steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !averaged.len().is_multiple_of(steps) {
        return Err(Error::Divisibility { len: averaged.len(), by: steps });
    }
    let stride = averaged.len() / steps;
    Ok(averaged.iter().skip(stride - 1).step_by(stride).copied().collect())
}

pub fn write_csv<W: Write>(writer: W, prices: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["price"])?;
    for p in prices {
        out.write_record([p.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut input = csv::Reader::from_reader(reader);
    let mut prices = Vec::new();
    for record in input.records() {
        let record = record?;
        let field = record
            .get(0)
            .ok_or_else(|| Error::Validation("empty price row".into()))?;
        let value: f64 = field
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("bad price `{field}`")))?;
        prices.push(value);
    }
    Ok(prices)
}

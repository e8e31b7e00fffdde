//! Upper bound from the separated relaxation, and the continuous first stage
//! (projected gradient ascent on the relaxed objective).
//!
//! Replacing `g(y_t)` by the smaller `g(x_t)` gives the separated objective
//! `U(x) = sum_t [p_t - c_t g(x_t)] x_t >= f(x)`. When `x g(x)` is strictly
//! convex, `U` is strictly concave, and bounding every price by `max p` and
//! every range by `min c` makes the maximizer uniform:
//! `U <= N [max p - min c g(N/T)]`.

use serde::{Deserialize, Serialize};

use crate::model::{Instance, Penalty};

/// Anything that can play the role of `g` in `x g(x)`.
pub trait PenaltyCurve {
    fn value(&self, y: f64) -> f64;
}

impl PenaltyCurve for Penalty {
    fn value(&self, y: f64) -> f64 {
        Penalty::value(self, y)
    }
}

impl<F: Fn(f64) -> f64> PenaltyCurve for F {
    fn value(&self, y: f64) -> f64 {
        self(y)
    }
}

const CONVEXITY_GRID: usize = 256;
const CONVEXITY_START: f64 = 1e-3;
/// Second differences within this many ulps of the stencil magnitude are
/// indistinguishable from zero and do not count as violations.
const CONVEXITY_NOISE_ULPS: f64 = 16.0;

/// Checks `h(x) = x g(x)` for positive second differences on a geometric
/// grid over `(0, total]` with step `max(1e-4 x, 1e-6)`.
pub fn check_xg_convexity<G: PenaltyCurve + ?Sized>(g: &G, total: f64) -> bool {
    let h = |x: f64| x * g.value(x);
    let hi = total.max(CONVEXITY_START * 2.0);
    let ratio = (hi / CONVEXITY_START).powf(1.0 / (CONVEXITY_GRID - 1) as f64);
    let mut x = CONVEXITY_START;
    for _ in 0..CONVEXITY_GRID {
        let delta = (x * 1e-4).max(1e-6);
        let (a, b, c) = (h(x - delta), h(x), h(x + delta));
        let diff = c - 2.0 * b + a;
        let noise = CONVEXITY_NOISE_ULPS * f64::EPSILON * (a.abs() + 2.0 * b.abs() + c.abs());
        if !(diff > 0.0 || diff.abs() <= noise) {
            return false;
        }
        x = (x * ratio).min(hi);
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub ub: f64,
    pub pbar: f64,
    pub cunder: f64,
    pub convexity_ok: bool,
}

impl BoundReport {
    /// The bound, only when its hypothesis holds.
    pub fn certified(&self) -> Option<f64> {
        self.convexity_ok.then_some(self.ub)
    }
}

pub fn upper_bound(inst: &Instance) -> BoundReport {
    let pbar = inst.prices().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cunder = inst.ranges().iter().copied().fold(f64::INFINITY, f64::min);
    let total = inst.total() as f64;
    let share = total / inst.steps() as f64;
    BoundReport {
        ub: total * (pbar - cunder * inst.penalty().value(share)),
        pbar,
        cunder,
        convexity_ok: check_xg_convexity(inst.penalty(), total),
    }
}

/// Smooth objective over the scaled simplex.
pub trait SmoothObjective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

/// Continuous relaxation of the proceeds, `g` applied to cumulative sales.
pub struct Relaxation<'a>(pub &'a Instance);

impl SmoothObjective for Relaxation<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let inst = self.0;
        let mut sold = 0.0;
        let mut value = 0.0;
        for (t, &q) in x.iter().enumerate() {
            sold += q;
            value += inst.unit_price(t, sold) * q;
        }
        value
    }

    /// `p_j - c_j g(y_j) - sum_{t>=j} c_t g'(y_t) x_t`
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let inst = self.0;
        let pen = inst.penalty();
        let mut sold = 0.0;
        for (t, &q) in x.iter().enumerate() {
            sold += q;
            out[t] = inst.unit_price(t, sold);
        }
        let mut tail = 0.0;
        for t in (0..x.len()).rev() {
            tail += inst.ranges()[t] * pen.derivative(sold) * x[t];
            sold -= x[t];
            out[t] -= tail;
        }
    }
}

/// Separated objective `U(x) = sum_t [p_t - c_t g(x_t)] x_t`.
pub struct Separated<'a>(pub &'a Instance);

impl SmoothObjective for Separated<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(t, &q)| self.0.unit_price(t, q) * q).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let inst = self.0;
        let pen = inst.penalty();
        for (t, &q) in x.iter().enumerate() {
            out[t] = inst.unit_price(t, q) - inst.ranges()[t] * pen.derivative(q) * q;
        }
    }
}

/// Euclidean projection onto `{x >= 0, sum x = total}` by active-set
/// shrinking: repeatedly drop coordinates at or below the current shift.
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut active: Vec<usize> = (0..v.len()).collect();
    let mut tau;
    loop {
        let sum: f64 = active.iter().map(|&i| v[i]).sum();
        tau = (sum - total) / active.len() as f64;
        let before = active.len();
        active.retain(|&i| v[i] > tau);
        if active.len() == before || active.is_empty() {
            break;
        }
    }
    v.iter().map(|&vi| (vi - tau).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStage {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Projected-gradient residual at `x`.
    pub residual: f64,
    pub converged: bool,
}

fn residual(x: &[f64], grad: &[f64], total: f64) -> f64 {
    let shifted: Vec<f64> = x.iter().zip(grad).map(|(a, b)| a + b).collect();
    project_simplex(&shifted, total)
        .iter()
        .zip(x)
        .map(|(p, a)| (p - a).abs())
        .fold(0.0, f64::max)
}

/// Monotone projected gradient ascent with Armijo backtracking. Stops when
/// `|x - P(x + grad)|_inf <= tolerance` or after `max_iters` iterations.
pub fn projected_gradient_ascent<O: SmoothObjective>(
    objective: &O,
    start: &[f64],
    total: f64,
    tolerance: f64,
    max_iters: usize,
) -> ContinuousStage {
    let n = start.len();
    let mut x = project_simplex(start, total);
    let mut value = objective.value(&x);
    let mut grad = vec![0.0; n];
    objective.gradient(&x, &mut grad);
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(f64::MIN_POSITIVE);
    let mut step = (total / n as f64).max(1.0) / scale;
    let mut res = residual(&x, &grad, total);
    let mut iterations = 0;

    while iterations < max_iters && res > tolerance {
        iterations += 1;
        let mut accepted = false;
        for _ in 0..80 {
            let trial: Vec<f64> =
                project_simplex(&x.iter().zip(&grad).map(|(a, g)| a + step * g).collect::<Vec<_>>(), total);
            let ascent: f64 = trial.iter().zip(&x).zip(&grad).map(|((t, a), g)| g * (t - a)).sum();
            let trial_value = objective.value(&trial);
            if trial_value >= value + 1e-4 * ascent && ascent > 0.0 {
                x = trial;
                value = trial_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step *= 2.0;
        objective.gradient(&x, &mut grad);
        res = residual(&x, &grad, total);
    }

    ContinuousStage { x, value, iterations, residual: res, converged: res <= tolerance }
}

/// Stationary point of the relaxed proceeds, started from the uniform sale.
pub fn continuous_first_stage(inst: &Instance, tolerance: f64, max_iters: usize) -> ContinuousStage {
    let total = inst.total() as f64;
    let start = vec![total / inst.steps() as f64; inst.steps()];
    projected_gradient_ascent(&Relaxation(inst), &start, total, tolerance, max_iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Prototype;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant(steps: usize, total: usize, prototype: Prototype) -> Instance {
        Instance::with_defaults(total, vec![100.0; steps], prototype).unwrap()
    }

    /// Sort-based projection: largest rho with v_(rho) > (prefix - total) / rho.
    fn sort_projection(v: &[f64], total: f64) -> Vec<f64> {
        let mut u = v.to_vec();
        u.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut prefix = 0.0;
        let mut theta = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            prefix += ui;
            let candidate = (prefix - total) / (i + 1) as f64;
            if ui - candidate > 0.0 {
                theta = candidate;
            }
        }
        v.iter().map(|&vi| (vi - theta).max(0.0)).collect()
    }

    #[test]
    fn shipped_prototypes_pass_convexity() {
        for g in Prototype::ALL {
            for &total in &[1e2, 1e4, 1e6] {
                let pen = Penalty::calibrated(g, total, 0.99).unwrap();
                assert!(check_xg_convexity(&pen, total), "{g} at {total}");
                let pen = Penalty::calibrated(g, total, 0.75).unwrap();
                assert!(check_xg_convexity(&pen, total), "{g} at {total}");
            }
            assert!(check_xg_convexity(&Penalty::new(g, 1.0).unwrap(), 1e4));
        }
    }

    #[test]
    fn concave_segment_is_detected() {
        // Saturating base plus a steep logistic step at y = 5: the top of the
        // step bends x g(x) downwards.
        let curve = |y: f64| 0.5 * (1.0 - (-y).exp()) + 0.5 / (1.0 + (-(y - 5.0) * 8.0).exp());
        assert!(!check_xg_convexity(&curve, 10.0));
        // x g(x) = x^2 / (1 + x) is convex.
        let rational = |y: f64| y / (1.0 + y);
        assert!(check_xg_convexity(&rational, 10.0));
        // x (1 - e^-x) bends down past x = 2.
        let exponential = |y: f64| 1.0 - (-y).exp();
        assert!(!check_xg_convexity(&exponential, 10.0));
    }

    #[test]
    fn bound_on_constant_prices() {
        let inst = constant(10, 100, Prototype::Arctan);
        let report = upper_bound(&inst);
        assert!(report.convexity_ok);
        assert_eq!(report.pbar, 100.0);
        assert_eq!(report.cunder, 90.0);
        let expected = 100.0 * (100.0 - 90.0 * inst.penalty().value(10.0));
        assert_eq!(report.ub, expected);
        assert_eq!(report.certified(), Some(expected));
    }

    #[test]
    fn separated_objective_at_uniform_is_closed_form() {
        for g in Prototype::ALL {
            let inst = constant(8, 400, g);
            let x = vec![50.0; 8];
            let u = Separated(&inst).value(&x);
            let closed = 400.0 * (100.0 - 90.0 * inst.penalty().value(50.0));
            assert!((u - closed).abs() <= 1e-9 * closed);
            assert!((upper_bound(&inst).ub - closed).abs() <= 1e-9 * closed);
        }
    }

    #[test]
    fn bound_is_tight_without_penalty() {
        let inst = Instance::with_floor(50, vec![100.0; 50], 1e-12, Prototype::Arctan, 0.99, 50.0).unwrap();
        let report = upper_bound(&inst);
        assert!((report.ub - 5000.0).abs() < 1e-6);
        assert!((inst.evaluate(&[1; 50]).unwrap() - 5000.0).abs() < 1e-6);
    }

    #[test]
    fn relaxation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for g in Prototype::ALL {
            let prices: Vec<f64> = (0..12).map(|_| rng.random_range(80.0..120.0)).collect();
            let inst = Instance::with_defaults(1000, prices, g).unwrap();
            let raw: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let x: Vec<f64> = raw.iter().map(|v| 1000.0 * v / s).collect();
            for obj in [&Relaxation(&inst) as &dyn SmoothObjective, &Separated(&inst)] {
                let mut grad = vec![0.0; 12];
                obj.gradient(&x, &mut grad);
                for j in 0..12 {
                    let h = 1e-4 * x[j].max(1.0);
                    let mut up = x.clone();
                    let mut down = x.clone();
                    up[j] += h;
                    down[j] -= h;
                    let fd = (obj.value(&up) - obj.value(&down)) / (2.0 * h);
                    assert!((fd - grad[j]).abs() <= 1e-5 * grad[j].abs().max(1.0), "{g} j={j}");
                }
            }
        }
    }

    #[test]
    fn single_step_stage_is_the_block() {
        let inst = constant(1, 500, Prototype::Sqrt);
        let stage = continuous_first_stage(&inst, 1e-8, 100);
        assert_eq!(stage.x, vec![500.0]);
    }

    #[test]
    fn separated_ascent_finds_uniform_point() {
        for g in Prototype::ALL {
            let inst = constant(10, 1000, g);
            let mut start = vec![0.0; 10];
            start[0] = 1000.0;
            let stage = projected_gradient_ascent(&Separated(&inst), &start, 1000.0, 1e-9, 50_000);
            for &v in &stage.x {
                assert!((v - 100.0).abs() <= 0.5, "{g}: {:?}", stage.x);
            }
        }
    }

    #[test]
    fn relaxation_stage_is_feasible_and_ascends() {
        let inst = Instance::with_defaults(10_000, vec![100.0, 105.0, 97.0, 110.0, 99.0], Prototype::Arctan)
            .unwrap();
        let stage = continuous_first_stage(&inst, 1e-6, 20_000);
        assert!((stage.x.iter().sum::<f64>() - 10_000.0).abs() < 1e-6);
        assert!(stage.x.iter().all(|&v| v >= 0.0));
        let uniform = Relaxation(&inst).value(&[2000.0; 5]);
        assert!(stage.value >= uniform);
    }

    proptest! {
        #[test]
        fn projection_matches_sort_oracle(
            v in proptest::collection::vec(-50.0f64..150.0, 1..40),
            total in 0.5f64..500.0,
        ) {
            let fast = project_simplex(&v, total);
            let oracle = sort_projection(&v, total);
            prop_assert!((fast.iter().sum::<f64>() - total).abs() <= 1e-9 * total.max(1.0));
            prop_assert!(fast.iter().all(|&x| x >= 0.0));
            for (a, b) in fast.iter().zip(&oracle) {
                prop_assert!((a - b).abs() <= 1e-9 * total.max(1.0));
            }
        }
    }
}

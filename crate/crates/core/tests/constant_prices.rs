//! Published constant-price figures reproduced end to end.

use std::time::Instant;

use blocksale::bench::{format_gap, gap_pct, Algorithm};
use blocksale::bounds::upper_bound;
use blocksale::dp::{solve_exact, solve_two_step, solve_two_step_continuous, Grain, SolveOptions};
use blocksale::local_search::{fire_sale, ils, uniform_sale, IlsConfig};
use blocksale::{Instance, Prototype};

fn arctan(steps: usize, total: usize) -> Instance {
    Instance::with_defaults(total, vec![100.0; steps], Prototype::Arctan).unwrap()
}

fn ils_gap(inst: &Instance, reference: f64) -> String {
    let out = ils(inst, &uniform_sale(inst).x, &IlsConfig::default()).unwrap();
    format_gap(gap_pct(Algorithm::Ils, out.schedule.value, reference))
}

#[test]
fn arctan_quality_rows() {
    // (T, N, ILS, UB)
    let rows = [
        (10, 100, "0.41", "38.19"),
        (10, 1000, "0.02", "38.02"),
        (10, 10_000, "<ε", "38.02"),
        (100, 1000, "1.04", "364.61"),
        (100, 10_000, "0.13", "364.56"),
    ];
    for (steps, total, ils_expected, ub_expected) in rows {
        let inst = arctan(steps, total);
        let exact = solve_exact(&inst, &SolveOptions::default()).unwrap().value;
        assert_eq!(ils_gap(&inst, exact), ils_expected, "ILS at ({steps},{total})");
        let ub = upper_bound(&inst).certified().unwrap();
        assert_eq!(format_gap(gap_pct(Algorithm::UpperBound, ub, exact)), ub_expected);
    }
}

#[test]
fn two_step_variants_reach_the_optimum() {
    for (steps, total) in [(10, 100), (10, 1000), (100, 1000), (100, 10_000)] {
        let inst = arctan(steps, total);
        let exact = solve_exact(&inst, &SolveOptions::default()).unwrap().value;
        let ts1 = solve_two_step(&inst, Grain::Fixed(100), 5, &SolveOptions::default()).unwrap();
        let ts2 =
            solve_two_step_continuous(&inst, Grain::Fixed(100), 5, &SolveOptions::default()).unwrap();
        assert!((exact - ts1.refined.value) / exact < 1e-12);
        assert!((exact - ts2.refined.value) / exact < 1e-12);
    }
}

#[test]
fn exact_time_does_not_depend_on_penalty() {
    let times: Vec<f64> = Prototype::ALL
        .iter()
        .map(|&g| {
            let inst = Instance::with_defaults(10_000, vec![100.0; 10], g).unwrap();
            let begin = Instant::now();
            solve_exact(&inst, &SolveOptions::default()).unwrap();
            begin.elapsed().as_secs_f64()
        })
        .collect();
    let (lo, hi) = times.iter().fold((f64::MAX, 0.0f64), |(l, h), &t| (l.min(t), h.max(t)));
    assert!(hi <= 5.0 * lo, "{times:?}");
}

/// About a minute: the (10^3, 10^5) row against a two-step reference.
#[test]
#[ignore]
fn large_arctan_row() {
    let inst = arctan(1000, 100_000);
    let reference = solve_two_step(&inst, Grain::Fixed(100), 5, &SolveOptions::default())
        .unwrap()
        .refined
        .value;
    let gap = |alg, v| format_gap(gap_pct(alg, v, reference));
    assert_eq!(gap(Algorithm::FireSale, fire_sale(&inst).value), "25.49");
    assert_eq!(gap(Algorithm::Uniform, uniform_sale(&inst).value), "0.23");
    assert_eq!(ils_gap(&inst, reference), "0.12");
    let ub = upper_bound(&inst).certified().unwrap();
    assert_eq!(gap(Algorithm::UpperBound, ub), "558.72");
}

/// About a minute: exact DP at (10, 10^5) against both two-step variants
/// with a 500-unit funnel.
#[test]
#[ignore]
fn wide_funnel_reaches_exact_at_ten_steps() {
    let inst = arctan(10, 100_000);
    let exact = solve_exact(&inst, &SolveOptions::default()).unwrap().value;
    let ts1 = solve_two_step(&inst, Grain::Fixed(100), 5, &SolveOptions::default()).unwrap();
    let ts2 = solve_two_step_continuous(&inst, Grain::Fixed(100), 5, &SolveOptions::default()).unwrap();
    assert!((exact - ts1.refined.value) / exact < 1e-12);
    assert!((exact - ts2.refined.value) / exact < 1e-12);
}

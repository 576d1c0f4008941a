#![allow(dead_code)]

use biocap::birthday::BirthdayQuery;
use biocap::noisy_match::{IntervalPartition, MatchModel};
use biocap::open_world::OpenWorldModel;
use biocap::prob::BinomialSpec;
use biocap::simulator::{estimate_accept_all, estimate_open_world, SimConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, FileFailurePersistence, RngSeed};

pub fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x0b10_ca9e),
        failure_persistence: Some(Box::new(FileFailurePersistence::Off)),
        ..Config::default()
    }
}

/// `(k, flip, N, z)` small enough for the exact product.
pub fn sandwich_inputs() -> impl Strategy<Value = (u32, f64, u64, u64)> {
    (8u32..60, 0.0f64..0.2, 2u64..3000, 1u64..40)
}

pub fn bound_sandwich(k: u32, flip: f64, n: u64, z: u64) -> Result<(), TestCaseError> {
    let m = MatchModel::new(k, flip).unwrap();
    let exact = m.accept_all_exact_log(n).unwrap().ln();
    let part = IntervalPartition::equal(n, z).unwrap();
    let b = m.accept_all_bounds(&part).unwrap();
    let tol = 1e-9 * exact.abs().max(1e-300);
    prop_assert!(b.low.ln() <= exact + tol, "low {} > exact {}", b.low.ln(), exact);
    prop_assert!(b.high.ln() >= exact - tol, "high {} < exact {}", b.high.ln(), exact);
    let finer = m.accept_all_bounds(&part.refine()).unwrap();
    prop_assert!(finer.low.ln() >= b.low.ln() - tol);
    prop_assert!(finer.high.ln() <= b.high.ln() + tol);
    Ok(())
}

pub fn binomial_inputs() -> impl Strategy<Value = (u64, f64)> {
    (1u64..800, prop_oneof![Just(0.0), Just(0.5), Just(1.0), 0.0f64..=1.0])
}

pub fn pmf_normalisation(k: u64, q: f64) -> Result<(), TestCaseError> {
    let b = BinomialSpec::new(k, q).unwrap();
    let total: f64 = b.pmf_ln_table().iter().map(|x| x.exp()).sum();
    prop_assert!((total - 1.0).abs() < 1e-12, "sum of pmf = {total}");
    prop_assert_eq!(b.tail_gt_ln(-1).unwrap().ln(), 0.0);
    prop_assert!(b.tail_gt_ln(k as i64).unwrap().is_zero());
    let tails = b.tail_gt_ln_table();
    for d in [0i64, (k / 3) as i64, (k / 2) as i64, k as i64 - 1] {
        let s = b.cdf_ln(d).unwrap().prob() + b.tail_gt_ln(d).unwrap().prob();
        prop_assert!((s - 1.0).abs() < 1e-12, "cdf + tail = {s} at d = {d}");
        let point = b.tail_gt_ln(d).unwrap().ln();
        let table = tails[d as usize];
        prop_assert!(
            point == table || (point - table).abs() <= 1e-9 * point.abs().max(1e-300),
            "tail {point} vs table {table}"
        );
    }
    prop_assert!(tails.windows(2).all(|w| w[1] <= w[0]));
    Ok(())
}

pub fn fpir_inputs() -> impl Strategy<Value = (u32, u64, u64, u32, f64, f64)> {
    (1u32..300, 1u64..1_000_000_000, 0u64..1_000_000, 0u32..300, 0.0f64..=0.5, 0.0f64..=0.5)
}

pub fn fpir_noise_independent(
    k: u32,
    n: u64,
    n_minus: u64,
    thr: u32,
    p1: f64,
    p2: f64,
) -> Result<(), TestCaseError> {
    let thr = thr.min(k);
    let a = OpenWorldModel::new(k, p1, n, n_minus).unwrap();
    let b = OpenWorldModel::new(k, p2, n, n_minus).unwrap();
    let (fa, fb) = (a.fpir_log(thr).unwrap().ln(), b.fpir_log(thr).unwrap().ln());
    prop_assert_eq!(fa.to_bits(), fb.to_bits());
    let (ga, gb) = (
        a.fpir_aggregate_log(thr).unwrap().ln(),
        b.fpir_aggregate_log(thr).unwrap().ln(),
    );
    prop_assert_eq!(ga.to_bits(), gb.to_bits());
    Ok(())
}

pub fn sim_inputs() -> impl Strategy<Value = (u32, u64, f64, u64, Option<u32>)> {
    (1u32..130, 1u64..60, 0.0f64..=0.5, any::<u64>(), prop::option::of(0u32..130))
}

fn run_with_threads(threads: usize, cfg: &SimConfig) -> biocap::SimResult {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        if cfg.thr.is_some() {
            estimate_open_world(cfg).unwrap()
        } else {
            estimate_accept_all(cfg).unwrap()
        }
    })
}

pub fn simulator_determinism(
    k: u32,
    n: u64,
    flip: f64,
    seed: u64,
    thr: Option<u32>,
) -> Result<(), TestCaseError> {
    let cfg = SimConfig {
        k,
        enrolled: n,
        unenrolled: 7,
        flip,
        thr: thr.map(|t| t.min(k)),
        trials: 13,
        seed,
    };
    let one = run_with_threads(1, &cfg);
    let again = run_with_threads(1, &cfg);
    let three = run_with_threads(3, &cfg);
    prop_assert_eq!(one, again);
    prop_assert_eq!(one, three);
    Ok(())
}

pub fn birthday_inputs() -> impl Strategy<Value = (u64, u64)> {
    (1u64..100_000).prop_flat_map(|n| (Just(n), (n + 1)..1_000_000_000u64))
}

pub fn birthday_sandwich(n: u64, t: u64) -> Result<(), TestCaseError> {
    let q = BirthdayQuery::new(t as f64, n).unwrap();
    let exact = q.no_collision_exact_log().unwrap().ln();
    let tol = 1e-10 * exact.abs().max(1e-300);
    prop_assert!(q.no_collision_lower_log().unwrap().ln() <= exact + tol);
    prop_assert!(q.no_collision_upper_log().unwrap().ln() >= exact - tol);
    Ok(())
}

/// Exact outcome probabilities for the last of `n` enrolled users, plus the
/// per-probe false-positive rate, by enumerating every database, every flip
/// pattern and every outsider.
#[derive(Debug, Default, Clone, Copy)]
pub struct Enumerated {
    pub identified: f64,
    pub confused: f64,
    pub rejected: f64,
    /// Probe at distance `1..=thr` from its own template with an impostor no
    /// farther away.
    pub near_confused: f64,
    pub false_positive: f64,
}

fn databases(k: u32, n: usize) -> impl Iterator<Item = Vec<u32>> {
    let patterns = 1usize << k;
    (0..patterns.pow(n as u32)).map(move |mut idx| {
        (0..n)
            .map(|_| {
                let t = (idx % patterns) as u32;
                idx /= patterns;
                t
            })
            .collect()
    })
}

fn flip_weight(k: u32, p: f64, flips: u32) -> f64 {
    let w = flips.count_ones() as i32;
    p.powi(w) * (1.0 - p).powi(k as i32 - w)
}

pub fn enumerate_open_world(k: u32, p: f64, n: usize, thr: u32) -> Enumerated {
    let patterns = 1u32 << k;
    let db_p = 1.0 / (patterns as f64).powi(n as i32);
    let mut e = Enumerated::default();
    for db in databases(k, n) {
        let me = db[n - 1];
        let others = &db[..n - 1];
        for flips in 0..patterns {
            let fp = db_p * flip_weight(k, p, flips);
            let probe = me ^ flips;
            let own = flips.count_ones();
            let best_other = others.iter().map(|t| (probe ^ t).count_ones()).min();
            if best_other.map_or(own, |b| b.min(own)) > thr {
                e.rejected += fp;
            } else if own < best_other.unwrap_or(u32::MAX) {
                e.identified += fp;
            } else {
                e.confused += fp;
            }
            if own >= 1 && own <= thr && best_other.is_some_and(|b| b <= own) {
                e.near_confused += fp;
            }
        }
        for outsider in 0..patterns {
            if db.iter().any(|t| (outsider ^ t).count_ones() <= thr) {
                e.false_positive += db_p / patterns as f64;
            }
        }
    }
    e
}

/// Probability that every one of `n` users is strictly closest to their own
/// probe, all probes drawn against one shared database.
pub fn joint_all_correct(k: u32, p: f64, n: usize) -> f64 {
    let patterns = 1u32 << k;
    let db_p = 1.0 / (patterns as f64).powi(n as i32);
    let mut total = 0.0;
    for db in databases(k, n) {
        // Given the database the probes are independent.
        let mut prob = db_p;
        for (j, &me) in db.iter().enumerate() {
            let ok: f64 = (0..patterns)
                .filter(|&f| {
                    let probe = me ^ f;
                    let own = f.count_ones();
                    db.iter()
                        .enumerate()
                        .all(|(i, &o)| i == j || (probe ^ o).count_ones() > own)
                })
                .map(|f| flip_weight(k, p, f))
                .sum();
            prob *= ok;
        }
        total += prob;
    }
    total
}

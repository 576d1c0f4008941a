//! Closed-world identification with noisy probes: each probe is its user's
//! template with every bit flipped independently with probability `p`, and
//! the system answers with the nearest stored template in Hamming distance.
//!
//! `w_d = C(k, d) p^d (1 - p)^(k - d)` is the chance the probe sits at distance
//! `d` from its own template, and `a_d = P(D > d)` under `Bin(k, 1/2)` the
//! chance a random impostor sits strictly farther away. User `n` among `n`
//! users is recognised with probability `f(n) = sum_{d<k} w_d a_d^(n - 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::prob::{log_sum_exp, BinomialSpec, LogProb};
use crate::scalar::Real;

/// Work cap (`N k` terms) for [`MatchModel::accept_all_exact_log`].
pub const EXACT_WORK_CAP: u64 = 1_000_000_000;
/// Largest template length the searches will try.
pub const K_SEARCH_CAP: u32 = 100_000;
/// Populations from this size on use geometric interval cuts by default.
pub const GEOMETRIC_FROM: u64 = 100_000_000;

/// Precomputed `ln w_d` and `ln a_d` tables for one `(k, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchModel<T> {
    k: u32,
    flip: T,
    log_w: Vec<T>,
    log_a: Vec<T>,
    ln_miss: T,
}

/// Lower and upper bound on a log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair<T> {
    pub low: LogProb<T>,
    pub high: LogProb<T>,
}

impl<T: Real> BoundPair<T> {
    /// Relative half-gap `(high - low) / (high + low)` in linear space.
    pub fn relative_half_gap(&self) -> T {
        let (l, h) = (self.low.prob(), self.high.prob());
        if h + l == T::zero() {
            return T::zero();
        }
        (h - l) / (h + l)
    }
}

/// Cut points `1 = n_0 < n_1 < ... < n_z = N` for the interval bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalPartition {
    cuts: Vec<u64>,
}

impl IntervalPartition {
    pub fn from_cuts(cuts: Vec<u64>) -> Result<Self> {
        if cuts.first() != Some(&1) {
            return domain("partition must start at 1");
        }
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return domain("partition cuts must be strictly increasing");
        }
        Ok(IntervalPartition { cuts })
    }

    /// `z` intervals of equal size (within one user).
    pub fn equal(population: u64, z: u64) -> Result<Self> {
        check_partition_args(population, z)?;
        let span = (population - 1) as u128;
        let z128 = z as u128;
        let mut cuts: Vec<u64> = (0..=z128)
            .map(|j| 1 + ((j * span + z128 / 2) / z128) as u64)
            .collect();
        cuts.dedup();
        Ok(IntervalPartition { cuts })
    }

    /// `z` intervals with (roughly) equal ratios `n_{i+1} / n_i`.
    pub fn geometric(population: u64, z: u64) -> Result<Self> {
        check_partition_args(population, z)?;
        let ln_n = (population as f64).ln();
        let mut cuts: Vec<u64> = (0..=z)
            .map(|j| ((j as f64 / z as f64 * ln_n).exp().round() as u64).clamp(1, population))
            .collect();
        cuts[z as usize] = population;
        cuts.dedup();
        Ok(IntervalPartition { cuts })
    }

    /// 100 equal intervals, or 1000 geometric ones from [`GEOMETRIC_FROM`] on.
    pub fn default_for(population: u64) -> Result<Self> {
        if population >= GEOMETRIC_FROM {
            Self::geometric(population, 1000)
        } else {
            Self::equal(population, 100)
        }
    }

    /// Inserts the midpoint of every interval longer than one user.
    pub fn refine(&self) -> Self {
        let mut cuts = Vec::with_capacity(self.cuts.len() * 2);
        for w in self.cuts.windows(2) {
            cuts.push(w[0]);
            if w[1] - w[0] > 1 {
                cuts.push(w[0] + (w[1] - w[0]) / 2);
            }
        }
        cuts.extend(self.cuts.last());
        IntervalPartition { cuts }
    }

    pub fn cuts(&self) -> &[u64] {
        &self.cuts
    }

    pub fn population(&self) -> u64 {
        *self.cuts.last().expect("partition is non-empty")
    }
}

fn check_partition_args(population: u64, z: u64) -> Result<()> {
    if population == 0 {
        return domain("population must be >= 1");
    }
    if z == 0 {
        return domain("partition needs at least one interval");
    }
    Ok(())
}

impl<T: Real> MatchModel<T> {
    /// Builds the tables for `k` bits and per-bit flip probability `flip`.
    pub fn new(k: u32, flip: T) -> Result<Self> {
        if k == 0 {
            return domain("template length k must be >= 1");
        }
        if !(flip >= T::zero() && flip <= T::lit(0.5)) {
            return domain(format!("flip probability must lie in [0, 0.5], got {flip}"));
        }
        let mut log_w = BinomialSpec::new(k as u64, flip)?.pmf_ln_table();
        log_w.truncate(k as usize);
        let mut log_a = BinomialSpec::new(k as u64, T::lit(0.5))?.tail_gt_ln_table();
        log_a.truncate(k as usize);
        let ln_miss = if flip == T::zero() {
            T::neg_infinity()
        } else {
            T::count(k as u64) * flip.ln()
        };
        Ok(MatchModel { k, flip, log_w, log_a, ln_miss })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn flip(&self) -> T {
        self.flip
    }

    /// `ln w_d` for `d = 0..k`.
    pub fn log_w(&self) -> &[T] {
        &self.log_w
    }

    /// `ln a_d` for `d = 0..k`.
    pub fn log_a(&self) -> &[T] {
        &self.log_a
    }

    /// `ln f(n)`: probability that user `n` is strictly closest among `n`
    /// enrolled users.
    pub fn recognize_one_log(&self, n: u64) -> Result<LogProb<T>> {
        if n == 0 {
            return domain("recognition needs n >= 1");
        }
        Ok(self.ln_f(n))
    }

    fn ln_f(&self, n: u64) -> LogProb<T> {
        let m = T::count(n - 1);
        // g = 1 - f = p^k + sum_d w_d (1 - a_d^m), accurate when f is near 1.
        let mut g = self.ln_miss.exp();
        for (lw, la) in self.log_w.iter().zip(&self.log_a) {
            if *lw == T::neg_infinity() {
                continue;
            }
            g += lw.exp() * -(m * *la).exp_m1();
        }
        if g <= T::lit(0.5) {
            return LogProb::saturating((-g).ln_1p());
        }
        let terms: Vec<T> = self
            .log_w
            .iter()
            .zip(&self.log_a)
            .map(|(lw, la)| *lw + m * *la)
            .collect();
        LogProb::saturating(log_sum_exp(&terms).expect("k >= 1 terms"))
    }

    /// `ln prod_{i=1..N} f(i)`, the probability that every user is recognised
    /// (each user treated independently against its predecessors).
    pub fn accept_all_exact_log(&self, population: u64) -> Result<LogProb<T>> {
        if population == 0 {
            return domain("population must be >= 1");
        }
        let work = population.saturating_mul(self.k as u64);
        if work > EXACT_WORK_CAP {
            return Err(Error::OverBudget(format!(
                "exact product needs N k = {work} > {EXACT_WORK_CAP} terms; use accept_all_bounds"
            )));
        }
        // Neumaier summation keeps 10^7 small terms accurate.
        let mut sum = T::zero();
        let mut comp = T::zero();
        for i in 1..=population {
            let x = self.ln_f(i).ln();
            if x == T::neg_infinity() {
                return Ok(LogProb::zero());
            }
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
        }
        Ok(LogProb::saturating(sum + comp))
    }

    /// Interval bounds on [`accept_all_exact_log`](Self::accept_all_exact_log):
    /// user 1 contributes `f(1)`, and the users of each interval
    /// `(n_i, n_{i+1}]` are bounded by `f(n_{i+1})` from below and `f(n_i)`
    /// from above, since `f` is non-increasing.
    pub fn accept_all_bounds(&self, partition: &IntervalPartition) -> Result<BoundPair<T>> {
        let first = self.ln_f(1).ln();
        let (mut low, mut high) = (first, first);
        let mut prev = first;
        for w in partition.cuts().windows(2) {
            let width = T::count(w[1] - w[0]);
            let next = self.ln_f(w[1]).ln();
            if next == T::neg_infinity() {
                low = T::neg_infinity();
            } else {
                low += width * next;
            }
            if prev == T::neg_infinity() {
                high = T::neg_infinity();
            } else {
                high += width * prev;
            }
            prev = next;
        }
        Ok(BoundPair {
            low: LogProb::saturating(low),
            high: LogProb::saturating(high),
        })
    }
}

/// Zero-noise accept-all probability `N (N - 1) / 2 * ln(1 - 2^-k)`.
pub fn accept_all_zero_noise_log<T: Real>(k: u32, population: u64) -> Result<LogProb<T>> {
    if k == 0 || population == 0 {
        return domain("k and N must be >= 1");
    }
    let n = T::count(population);
    let pairs = n * (n - T::one()) * T::lit(0.5);
    let ln_one_minus = (-T::lit(2f64.powi(-(k as i32)))).ln_1p();
    if pairs == T::zero() {
        return Ok(LogProb::one());
    }
    Ok(LogProb::saturating(pairs * ln_one_minus))
}

/// Smallest `k` whose lower bound (default partition) on the accept-all
/// probability is at least `1 - alpha`.
pub fn min_k_for_accept<T: Real>(population: u64, flip: T, alpha: T) -> Result<u32> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if population == 0 {
        return domain("population must be >= 1");
    }
    if !(flip >= T::zero() && flip <= T::lit(0.5)) {
        return domain(format!("flip probability must lie in [0, 0.5], got {flip}"));
    }
    if flip == T::lit(0.5) {
        return Err(Error::Infeasible(
            "probes carry no information at flip probability 0.5".into(),
        ));
    }
    let target = (-alpha).ln_1p();
    let partition = IntervalPartition::default_for(population)?;
    let ok = |k: u32| -> Result<bool> {
        let model = MatchModel::new(k, flip)?;
        Ok(model.accept_all_bounds(&partition)?.low.ln() >= target)
    };
    let mut hi = 1u32;
    while !ok(hi)? {
        if hi >= K_SEARCH_CAP {
            return Err(Error::Infeasible(format!(
                "no k <= {K_SEARCH_CAP} reaches accept-all probability 1 - {alpha}"
            )));
        }
        hi = (hi * 2).min(K_SEARCH_CAP);
    }
    let mut lo = hi / 2;
    // Invariant: ok(hi), and lo == 0 or !ok(lo).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

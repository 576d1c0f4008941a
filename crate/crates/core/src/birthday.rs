//! Zero-noise collision analysis: the probability that `N` uniformly drawn
//! templates out of `T` possible patterns are pairwise distinct.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::prob::LogProb;
use crate::scalar::Real;

/// Largest population for which the exact product is evaluated.
pub const EXACT_POPULATION_CAP: u64 = 10_000_000;

/// `T` possible patterns shared by `N` users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthdayQuery<T> {
    patterns: T,
    population: u64,
}

/// Storage and bit-length summary for a population and collision budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport<T> {
    /// Minimal pattern-space ratio `T / N`.
    pub x: T,
    /// Least `k` with `2^k >= x N`.
    pub k_min: u32,
    /// `log2(x N)` rounded to the nearest integer (see [`min_bits`]).
    pub k_nearest: u32,
    pub alpha: T,
    /// Exact difference between the log bounds at `T = 2^k_min`.
    pub delta_gap: T,
}

/// `ln(1 + u) / u - 1`, accurate for small `u`.
fn h<T: Real>(u: T) -> T {
    if u.is_infinite() {
        return -T::one();
    }
    if u.abs() < T::lit(1e-3) {
        let third = T::one() / T::lit(3.0);
        let quarter = T::lit(0.25);
        let fifth = T::lit(0.2);
        return u * (-T::lit(0.5) + u * (third + u * (-quarter + u * fifth)));
    }
    u.ln_1p() / u - T::one()
}

impl<T: Real> BirthdayQuery<T> {
    pub fn new(patterns: T, population: u64) -> Result<Self> {
        if !(patterns >= T::one()) || patterns.is_infinite() {
            return domain(format!("pattern count must be a finite value >= 1, got {patterns}"));
        }
        if population == 0 {
            return domain("population must be >= 1");
        }
        Ok(BirthdayQuery { patterns, population })
    }

    /// `T = 2^bits`.
    pub fn from_bits(bits: u32, population: u64) -> Result<Self> {
        Self::new(T::lit(2f64.powi(bits as i32)), population)
    }

    pub fn patterns(&self) -> T {
        self.patterns
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    fn n(&self) -> T {
        T::count(self.population)
    }

    /// `ln P(no collision) = sum_{i<N} ln(1 - i/T)`.
    pub fn no_collision_exact_log(&self) -> Result<LogProb<T>> {
        if self.population > EXACT_POPULATION_CAP {
            return Err(Error::OverBudget(format!(
                "exact birthday product refused for N = {} > {EXACT_POPULATION_CAP}; use the bounds",
                self.population
            )));
        }
        if self.n() > self.patterns {
            return Ok(LogProb::zero());
        }
        let t = self.patterns;
        let mut sum = T::zero();
        for i in 1..self.population {
            sum += (-T::count(i) / t).ln_1p();
        }
        Ok(LogProb::saturating(sum))
    }

    /// Integral lower bound `(T - N) ln(T / (T - N)) - N`. Needs `T > N`.
    pub fn no_collision_lower_log(&self) -> Result<LogProb<T>> {
        if !(self.patterns > self.n()) {
            return domain(format!(
                "lower bound needs T > N (T = {}, N = {})",
                self.patterns, self.population
            ));
        }
        Ok(LogProb::saturating(self.lower_unchecked()))
    }

    fn lower_unchecked(&self) -> T {
        let n = self.n();
        n * h(n / (self.patterns - n))
    }

    /// Integral upper bound
    /// `(T + 1) ln((T + 1) / (T - N + 1)) - N ln(T / (T - N + 1)) - N`. Needs `T >= N`.
    pub fn no_collision_upper_log(&self) -> Result<LogProb<T>> {
        if !(self.patterns >= self.n()) {
            return domain(format!(
                "upper bound needs T >= N (T = {}, N = {})",
                self.patterns, self.population
            ));
        }
        let n = self.n();
        let t = self.patterns;
        let v = n / (t - n + T::one());
        Ok(LogProb::saturating(n * h(v) + n * t.recip().ln_1p()))
    }

    /// `(upper - lower, N / (T - N + 1))`: the exact gap between the log
    /// bounds and its first-order approximation. Needs `T >= N`.
    pub fn bound_gap_delta(&self) -> Result<(T, T)> {
        let upper = self.no_collision_upper_log()?.ln();
        let n = self.n();
        let exact = upper - self.lower_unchecked();
        Ok((exact, n / (self.patterns - n + T::one())))
    }
}

fn check_alpha<T: Real>(alpha: T) -> Result<()> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    Ok(())
}

/// Minimal ratio `x = T / N`: `-N / (2 ln(1 - alpha)) + 1`.
pub fn min_ratio_x<T: Real>(population: u64, alpha: T) -> Result<T> {
    check_alpha(alpha)?;
    if population == 0 {
        return domain("population must be >= 1");
    }
    let n = T::count(population);
    Ok(-n / (T::lit(2.0) * (-alpha).ln_1p()) + T::one())
}

fn log2_patterns<T: Real>(population: u64, alpha: T) -> Result<T> {
    Ok((min_ratio_x(population, alpha)? * T::count(population)).log2())
}

/// Bit count `k` with `2^k ~ x N`, rounded to the nearest integer.
///
/// Gives 66 bits at `alpha = 0.4` and 79 at `alpha = 1e-4` for `N = 10^10`.
/// It can undershoot the budget slightly; use [`safe_bits`] when the budget
/// must hold.
pub fn min_bits<T: Real>(population: u64, alpha: T) -> Result<u32> {
    let l = log2_patterns(population, alpha)?;
    Ok(l.round().to_u32().unwrap_or(u32::MAX).max(1))
}

/// Least `k` with `2^k >= x N`; the lower bound then guarantees the budget.
pub fn safe_bits<T: Real>(population: u64, alpha: T) -> Result<u32> {
    let target = (min_ratio_x(population, alpha)? * T::count(population)).as_f64();
    let mut k = target.log2().ceil().max(1.0) as i32;
    while k > 1 && 2f64.powi(k - 1) >= target {
        k -= 1;
    }
    while 2f64.powi(k) < target {
        k += 1;
    }
    Ok(k as u32)
}

/// Storage for `N` templates of `k` bits, in GiB (`2^30` bytes).
pub fn db_size_gib<T: Real>(population: u64, bits: u32) -> T {
    T::count(population) * T::count(bits as u64) / T::lit(8.0 * 1_073_741_824.0)
}

/// Sizing summary for `N` users at collision budget `alpha`.
pub fn capacity_report<T: Real>(population: u64, alpha: T) -> Result<CapacityReport<T>> {
    let x = min_ratio_x(population, alpha)?;
    let k_min = safe_bits(population, alpha)?;
    let k_nearest = min_bits(population, alpha)?;
    let (delta_gap, _) = BirthdayQuery::<T>::from_bits(k_min, population)?.bound_gap_delta()?;
    Ok(CapacityReport {
        x,
        k_min,
        k_nearest,
        alpha,
        delta_gap: delta_gap.max(T::zero()),
    })
}

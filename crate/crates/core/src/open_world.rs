//! Thresholded identification with unenrolled users.
//!
//! A probe is accepted as the nearest template when that distance is at most
//! `thr`; otherwise no identity is returned. Enrolled users can be rejected
//! (FNIR_n) or confused with someone else (FNIR_i); unenrolled probes can be
//! matched to somebody (FPIR).

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::noisy_match::{min_k_for_accept, K_SEARCH_CAP};
use crate::prob::{ln_one_minus_exp, log_sum_exp, normal_tail_inverse, BinomialSpec, LogProb};
use crate::scalar::Real;

/// Template length, noise and population sizes for the open-world rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenWorldModel<T> {
    k: u32,
    flip: T,
    enrolled: u64,
    unenrolled: u64,
    /// `ln P(D = d; p)`, `d = 0..=k`.
    genuine_pmf: Vec<T>,
    /// `ln P(D > d; p)`, `d = 0..=k`.
    genuine_gt: Vec<T>,
    /// `ln P(D > d; 1/2)`, `d = 0..=k`.
    impostor_gt: Vec<T>,
}

/// Tolerances for the accept-all failure (`alpha`), the no-identity rate
/// (`beta`) and the aggregate false-positive rate over all outsiders (`gamma`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

/// Result of [`plan_search`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdPlan {
    pub k: u32,
    pub thr: u32,
    /// Closed-world bit requirement the search started from.
    pub k0: u32,
}

/// Linear-space rates of one `(model, thr)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenWorldRates<T> {
    pub fnir_n: T,
    pub fnir_i: T,
    pub misidentification: T,
    pub fpir: T,
    pub fpir_aggregate: T,
}

impl<T: Real> ErrorBudget<T> {
    pub fn new(alpha: T, beta: T, gamma: T) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(v > T::zero() && v < T::one()) {
                return domain(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        Ok(ErrorBudget { alpha, beta, gamma })
    }
}

/// `n * x` where `0 * -inf` is taken as 0 (an empty product).
fn scaled<T: Real>(n: u64, x: T) -> T {
    if n == 0 {
        T::zero()
    } else {
        T::count(n) * x
    }
}

impl<T: Real> OpenWorldModel<T> {
    pub fn new(k: u32, flip: T, enrolled: u64, unenrolled: u64) -> Result<Self> {
        if k == 0 {
            return domain("template length k must be >= 1");
        }
        if !(flip >= T::zero() && flip <= T::lit(0.5)) {
            return domain(format!("flip probability must lie in [0, 0.5], got {flip}"));
        }
        if enrolled == 0 {
            return domain("enrolled population must be >= 1");
        }
        let genuine = BinomialSpec::new(k as u64, flip)?;
        let impostor = BinomialSpec::new(k as u64, T::lit(0.5))?;
        Ok(OpenWorldModel {
            k,
            flip,
            enrolled,
            unenrolled,
            genuine_pmf: genuine.pmf_ln_table(),
            genuine_gt: genuine.tail_gt_ln_table(),
            impostor_gt: impostor.tail_gt_ln_table(),
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn flip(&self) -> T {
        self.flip
    }

    pub fn enrolled(&self) -> u64 {
        self.enrolled
    }

    pub fn unenrolled(&self) -> u64 {
        self.unenrolled
    }

    fn check_thr(&self, thr: u32) -> Result<usize> {
        if thr > self.k {
            return domain(format!("threshold {thr} exceeds k = {}", self.k));
        }
        Ok(thr as usize)
    }

    /// `ln(1 - a_d^(N-1))`: some impostor is at distance `<= d`.
    fn ln_impostor_within(&self, d: usize) -> T {
        ln_one_minus_exp(scaled(self.enrolled - 1, self.impostor_gt[d]))
    }

    /// No identity returned: `P(D > thr; p) P(D > thr; 1/2)^(N-1)`.
    pub fn fnir_n_log(&self, thr: u32) -> Result<LogProb<T>> {
        let t = self.check_thr(thr)?;
        let ln = self.genuine_gt[t] + scaled(self.enrolled - 1, self.impostor_gt[t]);
        Ok(LogProb::saturating(ln))
    }

    /// Confusion rate FNIR_i:
    /// `sum_{d=1..thr} P(D = d; p) (1 - P(D > d; 1/2)^(N-1))`.
    ///
    /// It leaves out probes at distance 0 that tie with an impostor and probes
    /// beyond `thr` that land within `thr` of an impostor; see
    /// [`misidentification_log`](Self::misidentification_log) for the full rate.
    pub fn fnir_i_log(&self, thr: u32) -> Result<LogProb<T>> {
        let t = self.check_thr(thr)?;
        if t == 0 {
            return Ok(LogProb::zero());
        }
        let terms: Vec<T> = (1..=t)
            .map(|d| self.genuine_pmf[d] + self.ln_impostor_within(d))
            .collect();
        Ok(LogProb::saturating(log_sum_exp(&terms)?))
    }

    /// [`fnir_i_log`](Self::fnir_i_log) at `thr = k`, an upper bound over all thresholds.
    pub fn fnir_i_infinity_log(&self) -> LogProb<T> {
        self.fnir_i_log(self.k).expect("thr = k is in range")
    }

    /// Probability that an enrolled probe is answered with its own identity.
    pub fn identification_log(&self, thr: u32) -> Result<LogProb<T>> {
        let t = self.check_thr(thr)?;
        let terms: Vec<T> = (0..=t)
            .map(|d| self.genuine_pmf[d] + scaled(self.enrolled - 1, self.impostor_gt[d]))
            .collect();
        Ok(LogProb::saturating(log_sum_exp(&terms)?))
    }

    /// Probability that an enrolled probe is answered with a wrong identity
    /// (including ties) under the nearest-template rule. Together with
    /// identification and FNIR_n it sums to one.
    pub fn misidentification_log(&self, thr: u32) -> Result<LogProb<T>> {
        let t = self.check_thr(thr)?;
        let mut terms: Vec<T> = (0..=t)
            .map(|d| self.genuine_pmf[d] + self.ln_impostor_within(d))
            .collect();
        terms.push(self.genuine_gt[t] + self.ln_impostor_within(t));
        Ok(LogProb::saturating(log_sum_exp(&terms)?))
    }

    /// Per-probe false-positive rate `1 - P(D > thr; 1/2)^N`; independent of `p`.
    pub fn fpir_log(&self, thr: u32) -> Result<LogProb<T>> {
        let t = self.check_thr(thr)?;
        Ok(LogProb::saturating(ln_one_minus_exp(scaled(
            self.enrolled,
            self.impostor_gt[t],
        ))))
    }

    /// At least one false positive over `N_minus` outsiders:
    /// `1 - (1 - FPIR)^N_minus`.
    pub fn fpir_aggregate_log(&self, thr: u32) -> Result<LogProb<T>> {
        let t = self.check_thr(thr)?;
        if self.unenrolled == 0 {
            return Ok(LogProb::zero());
        }
        let per_probe_miss = scaled(self.enrolled, self.impostor_gt[t]);
        Ok(LogProb::saturating(ln_one_minus_exp(scaled(
            self.unenrolled,
            per_probe_miss,
        ))))
    }

    /// `ln (1 - FPIR)^N_minus`: no outsider matches anybody. Kept separately
    /// because it stays accurate when the aggregate rate saturates at one.
    pub fn no_false_positive_log(&self, thr: u32) -> Result<LogProb<T>> {
        let t = self.check_thr(thr)?;
        let per_probe_miss = scaled(self.enrolled, self.impostor_gt[t]);
        Ok(LogProb::saturating(scaled(self.unenrolled, per_probe_miss)))
    }

    pub fn rates(&self, thr: u32) -> Result<OpenWorldRates<T>> {
        Ok(OpenWorldRates {
            fnir_n: self.fnir_n_log(thr)?.prob(),
            fnir_i: self.fnir_i_log(thr)?.prob(),
            misidentification: self.misidentification_log(thr)?.prob(),
            fpir: self.fpir_log(thr)?.prob(),
            fpir_aggregate: self.fpir_aggregate_log(thr)?.prob(),
        })
    }
}

/// Smallest `thr` with `P(D > thr; p) <= beta`.
pub fn thr_for_fnir_n<T: Real>(k: u32, flip: T, beta: T) -> Result<u32> {
    if !(beta > T::zero() && beta < T::one()) {
        return domain(format!("beta must lie in (0, 1), got {beta}"));
    }
    if k == 0 {
        return domain("template length k must be >= 1");
    }
    if !(flip >= T::zero() && flip <= T::lit(0.5)) {
        return domain(format!("flip probability must lie in [0, 0.5], got {flip}"));
    }
    let ln_beta = beta.ln();
    let tails = BinomialSpec::new(k as u64, flip)?.tail_gt_ln_table();
    let thr = tails
        .iter()
        .position(|&t| t <= ln_beta)
        .expect("tail at k is zero");
    Ok(thr as u32)
}

/// Normal-approximation bound on the threshold:
/// `k/2 - z(gamma / (N N_minus)) sqrt(k/4)` with `z` the upper-tail quantile.
pub fn normal_threshold_bound<T: Real>(k: u32, enrolled: u64, unenrolled: u64, gamma: T) -> Result<T> {
    if unenrolled == 0 || enrolled == 0 {
        return domain("normal bound needs N >= 1 and N_minus >= 1");
    }
    let q = gamma / (T::count(enrolled) * T::count(unenrolled));
    let z = normal_tail_inverse(q)?;
    let kk = T::count(k as u64);
    Ok(kk * T::lit(0.5) - z * (kk * T::lit(0.25)).sqrt())
}

/// Largest `thr < k` whose aggregate false-positive rate stays within `gamma`.
///
/// Starts from [`normal_threshold_bound`] and walks with exact tails until
/// `thr` satisfies the budget and `thr + 1` does not (or `thr = k - 1`).
pub fn thr_max_for_fpir<T: Real>(k: u32, enrolled: u64, unenrolled: u64, gamma: T) -> Result<u32> {
    if !(gamma > T::zero() && gamma < T::one()) {
        return domain(format!("gamma must lie in (0, 1), got {gamma}"));
    }
    // The rate does not depend on p, so any flip value builds the tables.
    let model = OpenWorldModel::new(k, T::zero(), enrolled, unenrolled)?;
    if unenrolled == 0 {
        return Ok(k - 1);
    }
    let ln_gamma = gamma.ln();
    let fits = |thr: u32| model.fpir_aggregate_log(thr).map(|v| v.ln() <= ln_gamma);
    let bound = normal_threshold_bound(k, enrolled, unenrolled, gamma)?;
    // Largest integer strictly below the bound, clamped into [0, k - 1].
    let start = (bound.ceil() - T::one())
        .max(T::zero())
        .min(T::count(k as u64 - 1));
    let mut thr = start.to_u32().unwrap_or(0);
    if fits(thr)? {
        while thr + 1 < k && fits(thr + 1)? {
            thr += 1;
        }
        return Ok(thr);
    }
    while thr > 0 {
        thr -= 1;
        if fits(thr)? {
            return Ok(thr);
        }
    }
    Err(Error::Infeasible(format!(
        "even thr = 0 exceeds the false-positive budget {gamma} at k = {k}"
    )))
}

/// Joint search for `(k, thr)`: start from the closed-world requirement and
/// grow `k` until the FNIR_n threshold fits under the FPIR threshold.
pub fn plan_search<T: Real>(
    budget: &ErrorBudget<T>,
    enrolled: u64,
    unenrolled: u64,
    flip: T,
) -> Result<ThresholdPlan> {
    let k0 = min_k_for_accept(enrolled, flip, budget.alpha)?;
    let mut k = k0;
    while k <= K_SEARCH_CAP {
        let thr0 = thr_for_fnir_n(k, flip, budget.beta)?;
        match thr_max_for_fpir(k, enrolled, unenrolled, budget.gamma) {
            Ok(thr1) if thr0 <= thr1 => return Ok(ThresholdPlan { k, thr: thr0, k0 }),
            Ok(_) | Err(Error::Infeasible(_)) => {}
            Err(e) => return Err(e),
        }
        k += 1;
    }
    Err(Error::Infeasible(format!(
        "infeasible budgets: no k <= {K_SEARCH_CAP} satisfies all three constraints"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Counts {
        identified: f64,
        rejected: f64,
        confused: f64,
        near_confusion: f64,
        false_positive: f64,
    }

    /// Enumerates every database of `n` templates, every flip pattern of the
    /// last user's probe, and every outsider probe.
    fn enumerate(k: u32, p: f64, n: usize, thr: u32) -> Counts {
        let patterns = 1usize << k;
        let total_db = patterns.pow(n as u32);
        let mut c = Counts {
            identified: 0.0,
            rejected: 0.0,
            confused: 0.0,
            near_confusion: 0.0,
            false_positive: 0.0,
        };
        for idx in 0..total_db {
            let mut db = Vec::with_capacity(n);
            let mut r = idx;
            for _ in 0..n {
                db.push((r % patterns) as u32);
                r /= patterns;
            }
            let db_p = 1.0 / total_db as f64;
            let me = db[n - 1];
            let others = &db[..n - 1];
            for flips in 0..patterns as u32 {
                let w = flips.count_ones();
                let fp = db_p * p.powi(w as i32) * (1.0 - p).powi((k - w) as i32);
                let probe = me ^ flips;
                let own = w;
                let best_other = others.iter().map(|t| (probe ^ t).count_ones()).min();
                let min_all = best_other.map_or(own, |b| b.min(own));
                if min_all > thr {
                    c.rejected += fp;
                } else if own < best_other.unwrap_or(u32::MAX) {
                    c.identified += fp;
                } else {
                    c.confused += fp;
                }
                if own >= 1 && own <= thr && best_other.is_some_and(|b| b <= own) {
                    c.near_confusion += fp;
                }
            }
            for outsider in 0..patterns as u32 {
                if db.iter().any(|t| (outsider ^ t).count_ones() <= thr) {
                    c.false_positive += db_p / patterns as f64;
                }
            }
        }
        c
    }

    #[test]
    fn rates_match_enumeration() {
        for k in 1..=4u32 {
            for &p in &[0.0, 0.25, 0.5] {
                for n in 1..=3usize {
                    for thr in 0..=k {
                        let m = OpenWorldModel::new(k, p, n as u64, 1).unwrap();
                        let e = enumerate(k, p, n, thr);
                        let tag = format!("k={k} p={p} n={n} thr={thr}");
                        let fnir_n = m.fnir_n_log(thr).unwrap().prob();
                        assert!((fnir_n - e.rejected).abs() < 1e-12, "{tag}");
                        let fnir_i = m.fnir_i_log(thr).unwrap().prob();
                        assert!((fnir_i - e.near_confusion).abs() < 1e-12, "{tag}");
                        let id = m.identification_log(thr).unwrap().prob();
                        assert!((id - e.identified).abs() < 1e-12, "{tag}");
                        let mis = m.misidentification_log(thr).unwrap().prob();
                        assert!((mis - e.confused).abs() < 1e-12, "{tag}");
                        let fpir = m.fpir_log(thr).unwrap().prob();
                        assert!((fpir - e.false_positive).abs() < 1e-12, "{tag}");
                    }
                }
            }
        }
    }

    #[test]
    fn trivial_cases() {
        let m = OpenWorldModel::new(20, 0.0f64, 1, 0).unwrap();
        assert!(m.fnir_n_log(0).unwrap().is_zero());
        assert!(m.fnir_n_log(20).unwrap().is_zero());
        assert!(m.fnir_i_log(5).unwrap().is_zero());
        assert!(m.fnir_i_infinity_log().is_zero());
        assert_eq!(m.fpir_log(20).unwrap().ln(), 0.0);
        assert!((m.fpir_log(0).unwrap().ln() - (2f64.powi(-20)).ln()).abs() < 1e-12);
        assert!(m.fpir_aggregate_log(3).unwrap().is_zero());
        assert!(m.fnir_n_log(21).is_err());
    }

    #[test]
    fn fpir_linearisation() {
        // N P(D <= 5) is about 1.6, so compare ln(1 - FPIR) with -N P(D <= 5).
        let m = OpenWorldModel::new(30, 0.1f64, 10_000, 1).unwrap();
        let exponent = m.no_false_positive_log(5).unwrap().ln();
        let lin = -1e4 * BinomialSpec::new(30, 0.5f64).unwrap().cdf_ln(5).unwrap().prob();
        assert!((exponent / lin - 1.0).abs() < 0.01);
        assert!((m.fpir_log(5).unwrap().prob() - (1.0 - exponent.exp())).abs() < 1e-14);
        assert_eq!(m.fpir_aggregate_log(5).unwrap(), m.fpir_log(5).unwrap());

        // Small-probability regime: the rate itself is linear.
        let m = OpenWorldModel::new(40, 0.1f64, 100, 1).unwrap();
        let lin = 100.0 * BinomialSpec::new(40, 0.5f64).unwrap().cdf_ln(3).unwrap().prob();
        assert!((m.fpir_log(3).unwrap().prob() / lin - 1.0).abs() < 0.01);

        // Here N N_minus P(D <= 20) is about 560, so the aggregate rate is 1 and
        // the linearisation is checked in the exponent.
        let m = OpenWorldModel::new(100, 0.1f64, 1_000_000, 1_000_000).unwrap();
        let exponent = m.no_false_positive_log(20).unwrap().ln();
        let lin = -1e12 * BinomialSpec::new(100, 0.5f64).unwrap().cdf_ln(20).unwrap().prob();
        assert!((exponent / lin - 1.0).abs() < 0.01);
        assert!(m.fpir_aggregate_log(20).unwrap().ln() > -1e-200);
    }

    #[test]
    fn fnir_n_at_k_minus_one() {
        let (k, p, n) = (12u32, 0.2f64, 5u64);
        let m = OpenWorldModel::new(k, p, n, 1).unwrap();
        let got = m.fnir_n_log(k - 1).unwrap().prob();
        let want = p.powi(k as i32) * 0.5f64.powi(k as i32).powi((n - 1) as i32);
        assert!((got / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fnir_i_infinity_dominates() {
        let m = OpenWorldModel::new(20, 0.005f64, 1000, 1).unwrap();
        let inf = m.fnir_i_infinity_log().ln();
        for thr in 0..=20 {
            assert!(m.fnir_i_log(thr).unwrap().ln() <= inf);
        }
    }

    #[test]
    fn thresholds() {
        assert_eq!(thr_for_fnir_n(50, 0.0f64, 0.01).unwrap(), 0);
        let k = 20u32;
        let thr = thr_for_fnir_n(k, 0.1f64, 0.05).unwrap();
        let tail = |t: u32| -> f64 {
            (t + 1..=k)
                .map(|i| {
                    let c: f64 = log_binomial(k, i);
                    (c + i as f64 * 0.1f64.ln() + (k - i) as f64 * 0.9f64.ln()).exp()
                })
                .sum()
        };
        assert!(tail(thr) <= 0.05 && tail(thr - 1) > 0.05);
        assert_eq!(thr_max_for_fpir(2, 1, 1, 0.9f64).unwrap(), 1);
        assert_eq!(thr_max_for_fpir(8, 2, 0, 0.5f64).unwrap(), 7);
        assert!(matches!(
            thr_max_for_fpir(4, 1000, 1000, 1e-6f64),
            Err(Error::Infeasible(_))
        ));
    }

    fn log_binomial(k: u32, i: u32) -> f64 {
        (1..=i).map(|j| ((k - i + j) as f64 / j as f64).ln()).sum()
    }

    #[test]
    fn tiny_plan_is_closed_world() {
        let b = ErrorBudget::new(0.1f64, 0.1, 0.5).unwrap();
        let plan = plan_search(&b, 4, 4, 0.0).unwrap();
        assert_eq!(plan.thr, 0);
        assert_eq!(plan.k, plan.k0);
        assert_eq!(plan.k0, min_k_for_accept(4, 0.0, 0.1).unwrap());
        assert!(ErrorBudget::new(0.0f64, 0.1, 0.1).is_err());
    }
}

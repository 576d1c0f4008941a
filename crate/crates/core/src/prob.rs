//! Log-space probability primitives: binomial terms and tails, log-sum-exp,
//! and the standard normal upper tail with its inverse.

use std::cmp::Ordering;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Real;

/// Natural logarithm of a probability, always in `[-inf, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogProb<T>(T);

impl<T: Real> LogProb<T> {
    pub fn new(ln: T) -> Result<Self> {
        if ln.is_nan() || ln > T::zero() {
            return domain(format!("log-probability must lie in [-inf, 0], got {ln}"));
        }
        Ok(LogProb(ln))
    }

    /// Wraps a log value that may exceed zero by rounding noise.
    pub(crate) fn saturating(ln: T) -> Self {
        debug_assert!(!ln.is_nan());
        LogProb(ln.min(T::zero()))
    }

    pub fn from_prob(p: T) -> Result<Self> {
        if !(p >= T::zero() && p <= T::one()) {
            return domain(format!("probability must lie in [0, 1], got {p}"));
        }
        Ok(LogProb(p.ln()))
    }

    pub fn zero() -> Self {
        LogProb(T::neg_infinity())
    }

    pub fn one() -> Self {
        LogProb(T::zero())
    }

    pub fn ln(self) -> T {
        self.0
    }

    pub fn prob(self) -> T {
        self.0.exp()
    }

    /// `ln(1 - p)` without forming `1 - p`.
    pub fn complement(self) -> Self {
        LogProb::saturating(ln_one_minus_exp(self.0))
    }

    pub fn is_zero(self) -> bool {
        self.0 == T::neg_infinity()
    }
}

impl<T: Real> Mul for LogProb<T> {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        LogProb(self.0 + rhs.0)
    }
}

impl<T: Real> PartialOrd for LogProb<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

/// `ln(sum(exp(terms)))`, shifted by the maximum term.
pub fn log_sum_exp<T: Real>(terms: &[T]) -> Result<T> {
    if terms.is_empty() {
        return domain("log_sum_exp of an empty slice");
    }
    if terms.iter().any(|t| t.is_nan()) {
        return domain("log_sum_exp term is NaN");
    }
    let max = terms.iter().copied().fold(T::neg_infinity(), T::max);
    if max.is_infinite() {
        return Ok(max);
    }
    let sum: T = terms.iter().map(|&t| (t - max).exp()).sum();
    Ok(max + sum.ln())
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add_exp<T: Real>(a: T, b: T) -> T {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == T::neg_infinity() {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 - exp(x))` for `x <= 0`.
pub fn ln_one_minus_exp<T: Real>(x: T) -> T {
    if x >= T::zero() {
        return if x == T::zero() { T::neg_infinity() } else { T::nan() };
    }
    if x > -T::LN_2() {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(n!)`.
pub fn ln_factorial<T: Real>(n: u64) -> T {
    if n < 2 {
        return T::zero();
    }
    if n < 256 {
        return (2..=n).map(|i| T::count(i).ln()).sum();
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Stirling series; the truncation error at n >= 256 is far below f64 eps.
    let corr = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    let half_ln_2pi = 0.918_938_533_204_672_8;
    T::lit(x * x.ln() - x + 0.5 * x.ln() + half_ln_2pi + corr)
}

/// `ln C(k, d)`.
pub fn log_binomial_coeff<T: Real>(k: u64, d: u64) -> Result<T> {
    if d > k {
        return domain(format!("binomial coefficient C({k}, {d}) needs d <= k"));
    }
    let d = d.min(k - d);
    if d < 64 {
        // Short product; exact enough and avoids cancellation between factorials.
        let mut s = T::zero();
        for i in 0..d {
            s += T::count(k - i).ln() - T::count(i + 1).ln();
        }
        return Ok(s);
    }
    Ok(ln_factorial::<T>(k) - ln_factorial::<T>(d) - ln_factorial::<T>(k - d))
}

/// Binomial distribution `Bin(k, q)` over the number of flipped bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialSpec<T> {
    k: u64,
    q: T,
}

impl<T: Real> BinomialSpec<T> {
    pub fn new(k: u64, q: T) -> Result<Self> {
        if k == 0 {
            return domain("binomial needs k >= 1");
        }
        if !(q >= T::zero() && q <= T::one()) {
            return domain(format!("binomial success probability must lie in [0, 1], got {q}"));
        }
        Ok(BinomialSpec { k, q })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn q(&self) -> T {
        self.q
    }

    fn ln_q(&self) -> T {
        self.q.ln()
    }

    fn ln_1mq(&self) -> T {
        (-self.q).ln_1p()
    }

    /// `ln P(D = d)`.
    pub fn pmf_ln(&self, d: u64) -> Result<LogProb<T>> {
        if d > self.k {
            return domain(format!("pmf argument {d} exceeds k = {}", self.k));
        }
        Ok(LogProb::saturating(self.pmf_ln_unchecked(d)))
    }

    fn pmf_ln_unchecked(&self, d: u64) -> T {
        let (k, q) = (self.k, self.q);
        if q == T::zero() {
            return if d == 0 { T::zero() } else { T::neg_infinity() };
        }
        if q == T::one() {
            return if d == k { T::zero() } else { T::neg_infinity() };
        }
        let c: T = log_binomial_coeff(k, d).expect("d <= k checked by caller");
        c + T::count(d) * self.ln_q() + T::count(k - d) * self.ln_1mq()
    }

    /// `ln P(D = d)` for `d = 0..=k`, built with the ratio recurrence.
    pub fn pmf_ln_table(&self) -> Vec<T> {
        let k = self.k;
        let mut out = Vec::with_capacity(k as usize + 1);
        if self.q == T::zero() || self.q == T::one() {
            out.extend((0..=k).map(|d| self.pmf_ln_unchecked(d)));
            return out;
        }
        let step = self.ln_q() - self.ln_1mq();
        let mut cur = T::count(k) * self.ln_1mq();
        out.push(cur);
        for d in 1..=k {
            // Re-anchor every 64 steps so long recurrences do not drift.
            if d % 64 == 0 {
                cur = self.pmf_ln_unchecked(d);
            } else {
                cur += T::count(k - d + 1).ln() - T::count(d).ln() + step;
            }
            out.push(cur);
        }
        out
    }

    fn lower_sum_ln(&self, d: u64) -> T {
        let terms: Vec<T> = (0..=d).map(|i| self.pmf_ln_unchecked(i)).collect();
        log_sum_exp(&terms).expect("non-empty")
    }

    fn upper_sum_ln(&self, d: u64) -> T {
        let terms: Vec<T> = (d + 1..=self.k).map(|i| self.pmf_ln_unchecked(i)).collect();
        log_sum_exp(&terms).expect("non-empty")
    }

    /// `ln P(D > d)` for `d` in `-1..=k`.
    ///
    /// Sums whichever tail carries less mass and complements it when needed,
    /// so values next to 0 and next to 1 both keep full relative precision.
    pub fn tail_gt_ln(&self, d: i64) -> Result<LogProb<T>> {
        if d < -1 || d > self.k as i64 {
            return domain(format!("tail threshold {d} outside [-1, {}]", self.k));
        }
        if d == -1 {
            return Ok(LogProb::one());
        }
        if d as u64 == self.k {
            return Ok(LogProb::zero());
        }
        let upper = self.upper_sum_ln(d as u64);
        if upper < -T::LN_2() {
            return Ok(LogProb::saturating(upper));
        }
        Ok(LogProb::saturating(ln_one_minus_exp(self.lower_sum_ln(d as u64))))
    }

    /// `ln P(D <= d)` for `d` in `-1..=k`.
    pub fn cdf_ln(&self, d: i64) -> Result<LogProb<T>> {
        if d < -1 || d > self.k as i64 {
            return domain(format!("cdf argument {d} outside [-1, {}]", self.k));
        }
        if d == -1 {
            return Ok(LogProb::zero());
        }
        if d as u64 == self.k {
            return Ok(LogProb::one());
        }
        let lower = self.lower_sum_ln(d as u64);
        if lower < -T::LN_2() {
            return Ok(LogProb::saturating(lower));
        }
        Ok(LogProb::saturating(ln_one_minus_exp(self.upper_sum_ln(d as u64))))
    }

    /// `ln P(D > d)` for `d = 0..=k` (the last entry is `-inf`), with the
    /// same smaller-tail rule as [`tail_gt_ln`](Self::tail_gt_ln).
    pub fn tail_gt_ln_table(&self) -> Vec<T> {
        let pmf = self.pmf_ln_table();
        let k = self.k as usize;
        let mut out = vec![T::neg_infinity(); k + 1];
        let mut upper = T::neg_infinity();
        for d in (0..k).rev() {
            upper = log_add_exp(upper, pmf[d + 1]);
            out[d] = upper.min(T::zero());
        }
        let mut lower = T::neg_infinity();
        for d in 0..k {
            lower = log_add_exp(lower, pmf[d]);
            if lower >= -T::LN_2() {
                break;
            }
            if out[d] >= -T::LN_2() {
                out[d] = ln_one_minus_exp(lower);
            }
        }
        out
    }
}

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// `erf(x)` for small non-negative `x` via its positive-term series.
fn erf_series<T: Real>(x: T) -> T {
    let x2 = x * x;
    let two_x2 = x2 + x2;
    let mut term = T::one();
    let mut sum = T::one();
    let mut n = T::zero();
    for _ in 0..500 {
        n += T::one();
        term = term * two_x2 / (n + n + T::one());
        sum += term;
        if term < sum * T::epsilon() {
            break;
        }
    }
    T::lit(2.0 * FRAC_1_SQRT_PI) * x * (-x2).exp() * sum
}

/// Continued fraction `K` with `erfc(x) = exp(-x^2) / (sqrt(pi) * K)`, `x > 0`.
fn erfc_cf_denominator<T: Real>(x: T) -> T {
    // K = x + (1/2)/(x + 1/(x + (3/2)/(x + 2/(x + ...)))), modified Lentz.
    let tiny = T::lit(1e-300).max(T::min_positive_value());
    let mut f = x;
    let mut c = x;
    let mut d = T::zero();
    let half = T::lit(0.5);
    for n in 1..5000u32 {
        let a = T::count(n as u64) * half;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        let delta = c * d;
        f *= delta;
        if (delta - T::one()).abs() < T::epsilon() {
            break;
        }
    }
    f
}

const CF_SWITCH: f64 = 1.0;

fn erfc<T: Real>(x: T) -> T {
    if x < T::zero() {
        return T::lit(2.0) - erfc(-x);
    }
    if x < T::lit(CF_SWITCH) {
        T::one() - erf_series(x)
    } else {
        (-x * x).exp() * T::lit(FRAC_1_SQRT_PI) / erfc_cf_denominator(x)
    }
}

fn ln_erfc<T: Real>(x: T) -> T {
    if x < T::lit(CF_SWITCH) {
        erfc(x).ln()
    } else {
        -x * x + T::lit(FRAC_1_SQRT_PI).ln() - erfc_cf_denominator(x).ln()
    }
}

/// Standard normal upper tail `Q(z) = P(Z > z)`.
pub fn normal_tail<T: Real>(z: T) -> T {
    T::lit(0.5) * erfc(z * T::FRAC_1_SQRT_2())
}

/// `ln Q(z)`, usable far into the tail where `Q(z)` underflows.
pub fn normal_tail_ln<T: Real>(z: T) -> T {
    ln_erfc(z * T::FRAC_1_SQRT_2()) - T::LN_2()
}

fn ln_normal_density<T: Real>(z: T) -> T {
    -T::lit(0.5) * z * z - T::lit(0.918_938_533_204_672_8)
}

/// Initial quantile guess (Acklam's rational approximation of the lower-tail
/// inverse), accurate to about 1e-9 relative.
fn acklam_lower(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse of [`normal_tail`]: the `z` with `Q(z) = q`, for `q` in `(0, 1)`.
pub fn normal_tail_inverse<T: Real>(q: T) -> Result<T> {
    if !(q > T::zero() && q < T::one()) {
        return domain(format!("normal tail probability must lie in (0, 1), got {q}"));
    }
    if q > T::lit(0.5) {
        return Ok(-normal_tail_inverse(T::one() - q)?);
    }
    let ln_q = q.ln();
    let mut z = T::lit(-acklam_lower(q.as_f64()));
    // Newton on ln Q(z) - ln q; the log form keeps the step well scaled deep
    // in the tail.
    for _ in 0..50 {
        let lq = normal_tail_ln(z);
        let step = (lq - ln_q) * (lq - ln_normal_density(z)).exp();
        z += step;
        if step.abs() <= T::epsilon() * T::lit(4.0) * z.abs().max(T::one()) {
            break;
        }
    }
    Ok(z.max(T::zero()))
}

//! Empirical scaling laws for the minimal template length.
//!
//! A sweep records the minimal `k` over a grid of populations; per noise level
//! the law `k = A log2(N) + B` is fitted, and `A`, `B` are in turn fitted by
//! cubic polynomials in the noise level.
//!
//! A noise level `p` means every bit is re-drawn with probability `p`, i.e.
//! flipped with probability `p / 2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birthday::db_size_gib;
use crate::error::{domain, Error, Result};
use crate::noisy_match::min_k_for_accept;
use crate::scalar::Real;

/// Minimal `k` for one `(noise, alpha, N)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord<T> {
    /// Noise level (twice the per-bit flip probability).
    pub noise: T,
    pub alpha: T,
    pub population: u64,
    pub k_min: u32,
}

/// `k = slope * log2(N) + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r2: T,
}

/// `c3 p^3 + c2 p^2 + c1 p + c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicPoly<T> {
    pub c3: T,
    pub c2: T,
    pub c1: T,
    pub c0: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicFit<T> {
    pub poly: CubicPoly<T>,
    pub mse: T,
}

/// One row of the storage table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbRow<T> {
    pub noise: T,
    pub slope: T,
    pub intercept: T,
    pub k: u32,
    pub gib: T,
}

/// `10^2, 10^3, ..., 10^10`.
pub fn default_population_grid() -> Vec<u64> {
    (2..=10).map(|e| 10u64.pow(e)).collect()
}

/// Noise levels `0.01, 0.02, ..., 0.50`.
pub fn default_noise_grid<T: Real>() -> Vec<T> {
    (1..=50).map(|i| T::lit(i as f64 / 100.0)).collect()
}

/// Noise levels `0.05, 0.10, ..., 0.50`.
pub fn reduced_noise_grid<T: Real>() -> Vec<T> {
    (1..=10).map(|i| T::lit(i as f64 / 20.0)).collect()
}

fn check_noise<T: Real>(noise: T) -> Result<()> {
    if !(noise >= T::zero() && noise <= T::one()) {
        return domain(format!("noise level must lie in [0, 1], got {noise}"));
    }
    Ok(())
}

/// Minimal `k` for every population of `grid` at one noise level.
pub fn sweep_k<T: Real>(noise: T, alpha: T, grid: &[u64]) -> Result<Vec<SweepRecord<T>>> {
    check_noise(noise)?;
    if grid.is_empty() {
        return domain("population grid is empty");
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return domain("population grid must be strictly ascending");
    }
    let flip = noise * T::lit(0.5);
    grid.par_iter()
        .map(|&n| {
            Ok(SweepRecord {
                noise,
                alpha,
                population: n,
                k_min: min_k_for_accept(n, flip, alpha)?,
            })
        })
        .collect()
}

impl<T: Real> LinearFit<T> {
    /// From the inverse law `log2(N) = a k + b`.
    pub fn from_inverse(a: T, b: T) -> Result<Self> {
        if a == T::zero() {
            return Err(Error::DegenerateFit("inverse slope is zero".into()));
        }
        Ok(LinearFit { slope: a.recip(), intercept: -b / a, r2: T::nan() })
    }

    /// `(a, b)` of the inverse law `log2(N) = a k + b`.
    pub fn to_inverse(&self) -> (T, T) {
        (self.slope.recip(), -self.intercept / self.slope)
    }

    pub fn predict(&self, population: u64) -> T {
        self.slope * T::count(population).log2() + self.intercept
    }
}

/// Ordinary least squares `y = slope x + intercept` with `r^2`.
pub fn fit_line<T: Real>(xs: &[T], ys: &[T]) -> Result<LinearFit<T>> {
    if xs.len() != ys.len() {
        return domain("x and y lengths differ");
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", xs.len())));
    }
    let n = T::count(xs.len() as u64);
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: T = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let syy: T = ys.iter().map(|&y| (y - my) * (y - my)).sum();
    let scale = xs.iter().map(|x| x.abs()).fold(T::zero(), T::max).max(T::one());
    if sxx <= T::epsilon() * scale * scale * n {
        return Err(Error::DegenerateFit("x values have no spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: T = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let r2 = if syy == T::zero() {
        T::one()
    } else {
        (T::one() - ss_res / syy).max(T::zero()).min(T::one())
    };
    Ok(LinearFit { slope, intercept, r2 })
}

/// Fits `k_min` against `log2(N)` for records of a single `(noise, alpha)`.
pub fn fit_linear<T: Real>(records: &[SweepRecord<T>]) -> Result<LinearFit<T>> {
    if let Some(first) = records.first() {
        if records
            .iter()
            .any(|r| r.noise != first.noise || r.alpha != first.alpha)
        {
            return domain("records mix several (noise, alpha) settings");
        }
    }
    let xs: Vec<T> = records.iter().map(|r| T::count(r.population).log2()).collect();
    let ys: Vec<T> = records.iter().map(|r| T::count(r.k_min as u64)).collect();
    fit_line(&xs, &ys)
}

/// Sweeps and fits every noise level of `noise_grid`.
pub fn collect_coefficients<T: Real>(
    noise_grid: &[T],
    alpha: T,
    population_grid: &[u64],
) -> Result<Vec<(T, LinearFit<T>)>> {
    if noise_grid.is_empty() {
        return domain("noise grid is empty");
    }
    noise_grid
        .par_iter()
        .map(|&noise| {
            let records = sweep_k(noise, alpha, population_grid)?;
            Ok((noise, fit_linear(&records)?))
        })
        .collect()
}

impl<T: Real> CubicPoly<T> {
    pub fn new(c3: T, c2: T, c1: T, c0: T) -> Self {
        CubicPoly { c3, c2, c1, c0 }
    }

    pub fn eval(&self, p: T) -> T {
        ((self.c3 * p + self.c2) * p + self.c1) * p + self.c0
    }

    /// Reference slope polynomial `A(p)`.
    pub fn reference_slope() -> Self {
        Self::new(T::lit(128.0), T::lit(-40.2), T::lit(22.4), T::lit(2.17))
    }

    /// Reference intercept polynomial `B(p)`. The quadratic coefficient is
    /// `-175`; `-1.75` would make high-noise lengths tens of bits too long.
    pub fn reference_intercept() -> Self {
        Self::new(T::lit(580.0), T::lit(-175.0), T::lit(99.8), T::lit(12.1))
    }
}

/// Householder least squares for a tall design matrix stored by rows.
fn least_squares<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Result<Vec<T>> {
    let m = a.len();
    let n = a[0].len();
    let norm_a = a
        .iter()
        .flatten()
        .map(|x| x.abs())
        .fold(T::zero(), T::max)
        .max(T::min_positive_value());
    for j in 0..n {
        let norm: T = (j..m).map(|i| a[i][j] * a[i][j]).sum::<T>().sqrt();
        if norm <= T::epsilon() * T::lit(64.0) * norm_a {
            return Err(Error::DegenerateFit("design matrix is rank deficient".into()));
        }
        let alpha = if a[j][j] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (j..m).map(|i| a[i][j]).collect();
        v[0] -= alpha;
        let vnorm2: T = v.iter().map(|x| *x * *x).sum();
        for c in j..n {
            let dot: T = (j..m).map(|i| v[i - j] * a[i][c]).sum();
            let f = (dot + dot) / vnorm2;
            for i in j..m {
                a[i][c] -= f * v[i - j];
            }
        }
        let dot: T = (j..m).map(|i| v[i - j] * b[i]).sum();
        let f = (dot + dot) / vnorm2;
        for i in j..m {
            b[i] -= f * v[i - j];
        }
    }
    let mut x = vec![T::zero(); n];
    for j in (0..n).rev() {
        let s: T = (j + 1..n).map(|c| a[j][c] * x[c]).sum();
        x[j] = (b[j] - s) / a[j][j];
    }
    Ok(x)
}

/// Least-squares cubic through `(p, value)` points, with its mean squared error.
pub fn fit_cubic<T: Real>(points: &[(T, T)]) -> Result<CubicFit<T>> {
    if points.len() < 4 {
        return Err(Error::DegenerateFit(format!(
            "cubic fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    let design: Vec<Vec<T>> = points
        .iter()
        .map(|&(p, _)| vec![p * p * p, p * p, p, T::one()])
        .collect();
    let values: Vec<T> = points.iter().map(|&(_, v)| v).collect();
    let c = least_squares(design, values)?;
    let poly = CubicPoly::new(c[0], c[1], c[2], c[3]);
    let mse = points
        .iter()
        .map(|&(p, v)| {
            let r = poly.eval(p) - v;
            r * r
        })
        .sum::<T>()
        / T::count(points.len() as u64);
    Ok(CubicFit { poly, mse })
}

/// `ceil(A(p) log2(N) + B(p))` at noise level `p`.
pub fn predict_k<T: Real>(slope: &CubicPoly<T>, intercept: &CubicPoly<T>, noise: T, population: u64) -> Result<u32> {
    if !(noise >= T::zero() && noise <= T::lit(0.5)) {
        return domain(format!("noise level must lie in the fitted range [0, 0.5], got {noise}"));
    }
    if population == 0 {
        return domain("population must be >= 1");
    }
    let k = slope.eval(noise) * T::count(population).log2() + intercept.eval(noise);
    Ok(k.ceil().max(T::one()).to_u32().unwrap_or(u32::MAX))
}

/// Storage table rows `(p, A(p), B(p), k, GiB)` for a population.
pub fn build_db_table<T: Real>(
    slope: &CubicPoly<T>,
    intercept: &CubicPoly<T>,
    noise_list: &[T],
    population: u64,
) -> Result<Vec<DbRow<T>>> {
    if population == 0 {
        return domain("population must be >= 1");
    }
    noise_list
        .iter()
        .map(|&noise| {
            let k = predict_k(slope, intercept, noise, population)?;
            Ok(DbRow {
                noise,
                slope: slope.eval(noise),
                intercept: intercept.eval(noise),
                k,
                gib: db_size_gib(population, k),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_line() {
        let records: Vec<SweepRecord<f64>> = (1..=6)
            .map(|e| SweepRecord {
                noise: 0.1,
                alpha: 0.5,
                population: 1u64 << (2 * e),
                k_min: (3 * 2 * e + 7) as u32,
            })
            .collect();
        let f = fit_linear(&records).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!((f.intercept - 7.0).abs() < 1e-12);
        assert_eq!(f.r2, 1.0);
        assert!(matches!(fit_linear(&records[..2]), Err(Error::DegenerateFit(_))));
        let same_x = vec![2.0f64; 4];
        assert!(matches!(fit_line(&same_x, &[1.0, 2.0, 3.0, 4.0]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn inverse_round_trip() {
        let f = LinearFit { slope: 2.17f64, intercept: 12.1, r2: 1.0 };
        let (a, b) = f.to_inverse();
        let g = LinearFit::from_inverse(a, b).unwrap();
        assert!((g.slope - f.slope).abs() < 1e-12);
        assert!((g.intercept - f.intercept).abs() < 1e-12);
    }

    #[test]
    fn base_change_is_consistent() {
        let pops = [100u64, 1000, 10_000, 100_000, 1_000_000];
        let ks = [30.0f64, 38.0, 44.0, 51.0, 58.0];
        let x2: Vec<f64> = pops.iter().map(|&n| (n as f64).log2()).collect();
        let x10: Vec<f64> = pops.iter().map(|&n| (n as f64).log10()).collect();
        let f2 = fit_line(&x2, &ks).unwrap();
        let f10 = fit_line(&x10, &ks).unwrap();
        assert!((f10.slope / 10f64.log2() - f2.slope).abs() < 1e-9);
        for (a, b) in x2.iter().zip(&x10) {
            let p2 = f2.slope * a + f2.intercept;
            let p10 = f10.slope * b + f10.intercept;
            assert!((p2 - p10).abs() < 1e-9);
        }
    }

    #[test]
    fn cubic_recovers_exact_member() {
        let pts: Vec<(f64, f64)> = (0..=50).map(|i| {
            let p = i as f64 / 100.0;
            (p, p * p * p)
        }).collect();
        let f = fit_cubic(&pts).unwrap();
        let c = f.poly;
        assert!((c.c3 - 1.0).abs() < 1e-8);
        assert!(c.c2.abs() < 1e-8 && c.c1.abs() < 1e-8 && c.c0.abs() < 1e-8);
        assert!(f.mse < 1e-20);
        assert!(matches!(fit_cubic(&pts[..3]), Err(Error::DegenerateFit(_))));
        let dup = vec![(0.1, 1.0), (0.1, 2.0), (0.2, 1.0), (0.2, 3.0), (0.1, 0.0)];
        assert!(matches!(fit_cubic(&dup), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn reference_predictions() {
        let a = CubicPoly::<f64>::reference_slope();
        let b = CubicPoly::<f64>::reference_intercept();
        let n = 10_000_000_000u64;
        assert_eq!(predict_k(&a, &b, 0.0, n).unwrap(), 85);
        assert!(predict_k(&a, &b, 0.5, n).unwrap().abs_diff(734) <= 3);
        let two = CubicPoly::new(0.0, 0.0, 0.0, 2.0f64);
        let zero = CubicPoly::new(0.0, 0.0, 0.0, 0.0f64);
        assert_eq!(predict_k(&two, &zero, 0.1, 1 << 10).unwrap(), 20);
        assert!(predict_k(&a, &b, 0.6, n).is_err());

        let rows = build_db_table(&a, &b, &[0.25, 0.5], n).unwrap();
        assert!(rows[0].k.abs_diff(277) <= 2 && (rows[0].gib - 322.5).abs() <= 3.0);
        assert!(rows[1].k.abs_diff(734) <= 3 && (rows[1].gib - 854.5).abs() <= 4.0);
        assert!(build_db_table(&a, &b, &[0.1], 0).is_err());
    }

    #[test]
    fn sweep_small_grid() {
        let recs = sweep_k(0.0f64, 1e-4, &[1024]).unwrap();
        assert!(recs[0].k_min.abs_diff(33) <= 1, "k = {}", recs[0].k_min);
        let grid = [10u64, 100, 1000, 10_000];
        let recs = sweep_k(0.1f64, 0.5, &grid).unwrap();
        assert!(recs.windows(2).all(|w| w[0].k_min <= w[1].k_min));
        assert!(sweep_k(0.1f64, 0.5, &[100, 10]).is_err());
        assert!(sweep_k(0.1f64, 0.5, &[]).is_err());
        let c = collect_coefficients(&[0.1f64], 0.5, &grid).unwrap();
        assert_eq!(c.len(), 1);
    }
}

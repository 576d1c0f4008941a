use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use biocap::birthday::{capacity_report, db_size_gib, EXACT_POPULATION_CAP};
use biocap::calibration::{
    build_db_table, collect_coefficients, default_noise_grid, default_population_grid, fit_cubic,
    fit_linear, sweep_k,
};
use biocap::noisy_match::{accept_all_zero_noise_log, IntervalPartition};
use biocap::open_world::plan_search;
use biocap::prob::ln_one_minus_exp;
use biocap::simulator::{estimate_accept_all, estimate_open_world, Rate};
use biocap::{
    BirthdayQuery64, CubicPoly64, Error, ErrorBudget64, LinearFit64, MatchModel64,
    OpenWorldModel64, SimConfig, SweepRecord64,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::output::{Output, Value};

/// Bad command-line input detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

pub fn collision(a: &CollisionArgs) -> Result<Output> {
    let n = a.population;
    let report = capacity_report(n, a.alpha)?;
    let t = match (a.patterns, a.bits) {
        (Some(t), _) => t,
        (None, Some(b)) => 2f64.powi(b as i32),
        (None, None) => 2f64.powi(report.k_min as i32),
    };
    let q = BirthdayQuery64::new(t, n)?;
    let mut out = Output::default();
    out.field("patterns", if a.patterns.is_some() { Value::Given(t) } else { Value::Num(t) });
    out.field("population", Value::Int(n));
    let exact = if n <= EXACT_POPULATION_CAP {
        Some(q.no_collision_exact_log()?.ln())
    } else {
        None
    };
    let lower = (t > n as f64).then(|| q.no_collision_lower_log()).transpose()?;
    let upper = q.no_collision_upper_log().ok();
    let opt = |x: Option<f64>| x.map_or(Value::Missing, Value::LnProb);
    out.field("collision", opt(exact.map(ln_one_minus_exp)));
    out.field("collision_low", opt(upper.map(|u| ln_one_minus_exp(u.ln()))));
    out.field("collision_high", opt(lower.map(|l| ln_one_minus_exp(l.ln()))));
    out.field("no_collision", opt(exact));
    out.field("no_collision_lower", opt(lower.map(|l| l.ln())));
    out.field("no_collision_upper", opt(upper.map(|u| u.ln())));
    match q.bound_gap_delta() {
        Ok((gap, approx)) => {
            out.field("delta", Value::Num(gap));
            out.field("delta_approx", Value::Num(approx));
        }
        Err(_) => {
            out.field("delta", Value::Missing);
            out.field("delta_approx", Value::Missing);
        }
    }
    out.field("alpha", Value::Given(a.alpha));
    out.field("min_ratio_x", Value::Num(report.x));
    out.field("bits", Value::Int(report.k_nearest as u64));
    out.field("gib", Value::Num(db_size_gib(n, report.k_nearest)));
    out.field("bits_safe", Value::Int(report.k_min as u64));
    out.field("gib_safe", Value::Num(db_size_gib(n, report.k_min)));
    Ok(out)
}

pub fn accept(a: &AcceptArgs) -> Result<Output> {
    let flip = a.noise.flip_or(0.0);
    let n = a.population;
    let m = MatchModel64::new(a.k, flip)?;
    let mut out = Output::default();
    out.field("k", Value::Int(a.k as u64));
    out.field("population", Value::Int(n));
    out.field("noise", Value::Given(2.0 * flip));
    out.field("flip", Value::Given(flip));
    let truth = if a.bounds {
        None
    } else {
        match m.accept_all_exact_log(n) {
            Ok(v) => Some(v.ln()),
            Err(e @ Error::OverBudget(_)) if !a.exact => {
                eprintln!("note: {e}; reporting bounds only");
                None
            }
            Err(e) => return Err(e.into()),
        }
    };
    let bounds = if a.exact {
        None
    } else {
        let part = match a.intervals {
            Some(z) => IntervalPartition::equal(n, z)?,
            None => IntervalPartition::default_for(n)?,
        };
        out.field("intervals", Value::Int(part.cuts().len().saturating_sub(1) as u64));
        Some(m.accept_all_bounds(&part)?)
    };
    let opt = |x: Option<f64>| x.map_or(Value::Missing, Value::LnProb);
    out.field("v_low", opt(bounds.map(|b| b.low.ln())));
    out.field("v_truth", opt(truth));
    out.field("v_high", opt(bounds.map(|b| b.high.ln())));
    let delta = match (bounds, truth) {
        (Some(b), Some(t)) => Value::Num(100.0 * (b.high.prob() - b.low.prob()) / (2.0 * t.exp())),
        _ => Value::Missing,
    };
    out.field("delta_percent", delta);
    Ok(out)
}

pub fn plan(a: &PlanArgs) -> Result<Output> {
    let flip = a.noise.flip_or(0.05);
    let n = a.population;
    let n_minus = a.unenrolled.unwrap_or(n);
    let budget = ErrorBudget64::new(a.alpha, a.beta, a.gamma)?;
    let plan = plan_search(&budget, n, n_minus, flip)?;
    let model = OpenWorldModel64::new(plan.k, flip, n, n_minus)?;
    let accept = MatchModel64::new(plan.k, flip)?
        .accept_all_bounds(&IntervalPartition::default_for(n)?)?;
    let mut out = Output::default();
    out.field("population", Value::Int(n));
    out.field("unenrolled", Value::Int(n_minus));
    out.field("noise", Value::Given(2.0 * flip));
    out.field("flip", Value::Given(flip));
    out.field("k0", Value::Int(plan.k0 as u64));
    out.field("k", Value::Int(plan.k as u64));
    out.field("thr", Value::Int(plan.thr as u64));
    out.field("accept_all_low", Value::LnProb(accept.low.ln()));
    out.field("fnir_n", Value::LnProb(model.fnir_n_log(plan.thr)?.ln()));
    out.field("fnir_i", Value::LnProb(model.fnir_i_log(plan.thr)?.ln()));
    out.field("misidentification", Value::LnProb(model.misidentification_log(plan.thr)?.ln()));
    out.field("fpir", Value::LnProb(model.fpir_log(plan.thr)?.ln()));
    out.field("fpir_aggregate", Value::LnProb(model.fpir_aggregate_log(plan.thr)?.ln()));
    Ok(out)
}

fn grids(g: &GridArgs) -> Result<(Vec<f64>, Vec<u64>)> {
    let noise = g.noise.clone().unwrap_or_else(default_noise_grid);
    let pops = g.pops.clone().unwrap_or_else(default_population_grid);
    if noise.is_empty() || pops.is_empty() {
        return usage("noise and population grids must not be empty");
    }
    Ok((noise, pops))
}

fn run_sweep(g: &GridArgs) -> Result<Vec<SweepRecord64>> {
    let (noise, pops) = grids(g)?;
    let per_noise: Vec<Vec<SweepRecord64>> = noise
        .par_iter()
        .map(|&p| sweep_k(p, g.alpha, &pops))
        .collect::<biocap::Result<_>>()?;
    Ok(per_noise.into_iter().flatten().collect())
}

pub fn sweep(g: &GridArgs) -> Result<Output> {
    let records = run_sweep(g)?;
    let mut out = Output {
        header: vec!["p", "alpha", "N", "k_min"],
        ..Output::default()
    };
    out.rows = records
        .iter()
        .map(|r| {
            vec![
                Value::Given(r.noise),
                Value::Given(r.alpha),
                Value::Int(r.population),
                Value::Int(r.k_min as u64),
            ]
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct SweepRow {
    p: f64,
    alpha: f64,
    #[serde(rename = "N")]
    n: u64,
    k_min: u32,
}

fn read_sweep(path: &Path) -> Result<Vec<SweepRecord64>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read sweep file {}", path.display()))?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        let row: SweepRow = row.with_context(|| format!("bad row in {}", path.display()))?;
        records.push(SweepRecord64 {
            noise: row.p,
            alpha: row.alpha,
            population: row.n,
            k_min: row.k_min,
        });
    }
    if records.is_empty() {
        return usage(format!("{} has no sweep rows", path.display()));
    }
    Ok(records)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerNoise {
    pub p: f64,
    #[serde(rename = "A")]
    pub slope: f64,
    #[serde(rename = "B")]
    pub intercept: f64,
    pub r2: f64,
}

/// Contents of the `fit --summary` file, read back by `dbtable --coeffs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub slope: CubicPoly64,
    pub intercept: CubicPoly64,
    pub slope_mse: f64,
    pub intercept_mse: f64,
    pub per_p: Vec<PerNoise>,
}

fn fit_records(records: &[SweepRecord64]) -> Result<(Vec<PerNoise>, Option<FitSummary>)> {
    let mut groups: BTreeMap<u64, Vec<SweepRecord64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.noise.to_bits()).or_default().push(*r);
    }
    let mut per_p: Vec<PerNoise> = groups
        .values()
        .map(|g| {
            let f: LinearFit64 = fit_linear(g)?;
            Ok(PerNoise { p: g[0].noise, slope: f.slope, intercept: f.intercept, r2: f.r2 })
        })
        .collect::<Result<_>>()?;
    per_p.sort_by(|a, b| a.p.total_cmp(&b.p));
    if per_p.len() < 4 {
        return Ok((per_p, None));
    }
    let a = fit_cubic(&per_p.iter().map(|r| (r.p, r.slope)).collect::<Vec<_>>())?;
    let b = fit_cubic(&per_p.iter().map(|r| (r.p, r.intercept)).collect::<Vec<_>>())?;
    let summary = FitSummary {
        slope: a.poly,
        intercept: b.poly,
        slope_mse: a.mse,
        intercept_mse: b.mse,
        per_p: per_p.clone(),
    };
    Ok((per_p, Some(summary)))
}

fn poly_fields(out: &mut Output, name: &str, p: &CubicPoly64) {
    for (c, v) in ["c3", "c2", "c1", "c0"].iter().zip([p.c3, p.c2, p.c1, p.c0]) {
        out.field(format!("{name}_{c}"), Value::Num(v));
    }
}

pub fn fit(a: &FitArgs) -> Result<Output> {
    let records = match &a.from {
        Some(path) => read_sweep(path)?,
        None => run_sweep(&a.grid)?,
    };
    let (per_p, summary) = fit_records(&records)?;
    let mut out = Output {
        header: vec!["p", "A", "B", "r2"],
        ..Output::default()
    };
    out.rows = per_p
        .iter()
        .map(|r| vec![Value::Given(r.p), Value::Num(r.slope), Value::Num(r.intercept), Value::Num(r.r2)])
        .collect();
    match &summary {
        Some(s) => {
            poly_fields(&mut out, "A", &s.slope);
            poly_fields(&mut out, "B", &s.intercept);
            out.field("A_mse", Value::Num(s.slope_mse));
            out.field("B_mse", Value::Num(s.intercept_mse));
        }
        None => eprintln!("note: fewer than 4 noise levels, no cubic fit"),
    }
    if let Some(path) = &a.summary {
        let Some(s) = &summary else {
            return usage("--summary needs at least 4 noise levels");
        };
        crate::output::write_file(path, &(serde_json::to_string_pretty(s)? + "\n"))?;
    }
    Ok(out)
}

pub fn dbtable(a: &DbTableArgs) -> Result<Output> {
    let noise = a
        .noise
        .clone()
        .unwrap_or_else(|| (0..=10).map(|i| i as f64 / 20.0).collect());
    if noise.is_empty() {
        return usage("noise list must not be empty");
    }
    let (slope, intercept) = if let Some(path) = &a.coeffs {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let s: FitSummary = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a fit summary", path.display()))?;
        (s.slope, s.intercept)
    } else if a.refit {
        let fits = collect_coefficients(&default_noise_grid(), a.alpha, &default_population_grid())?;
        let pts = |f: fn(&LinearFit64) -> f64| fits.iter().map(|(p, l)| (*p, f(l))).collect::<Vec<_>>();
        (fit_cubic(&pts(|l| l.slope))?.poly, fit_cubic(&pts(|l| l.intercept))?.poly)
    } else {
        (CubicPoly64::reference_slope(), CubicPoly64::reference_intercept())
    };
    let rows = build_db_table(&slope, &intercept, &noise, a.population)?;
    let mut out = Output {
        header: vec!["p", "A", "B", "k", "gib"],
        ..Output::default()
    };
    out.rows = rows
        .iter()
        .map(|r| {
            vec![
                Value::Given(r.noise),
                Value::Num(r.slope),
                Value::Num(r.intercept),
                Value::Int(r.k as u64),
                Value::Num(r.gib),
            ]
        })
        .collect();
    Ok(out)
}

fn rate_row(name: &str, rate: &Rate, analytic: Option<f64>) -> Vec<Value> {
    let est = rate.estimate();
    let se = rate.stderr();
    let z = analytic.map(|a| {
        let diff = est - a;
        let se = if se > 0.0 { se } else { (a * (1.0 - a) / rate.total as f64).sqrt() };
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    });
    vec![
        Value::Text(name.to_string()),
        Value::Num(est),
        Value::Num(se),
        analytic.map_or(Value::Missing, Value::Num),
        z.map_or(Value::Missing, Value::Num),
    ]
}

pub fn simulate(a: &SimulateArgs) -> Result<Output> {
    let flip = a.noise.flip_or(0.0);
    let cfg = SimConfig {
        k: a.k,
        enrolled: a.population,
        unenrolled: a.unenrolled,
        flip,
        thr: a.thr,
        trials: a.trials,
        seed: a.seed,
    };
    let res = match a.thr {
        Some(_) => estimate_open_world(&cfg)?,
        None => estimate_accept_all(&cfg)?,
    };
    let mut out = Output {
        header: vec!["metric", "estimate", "stderr", "analytic", "z"],
        ..Output::default()
    };
    let accept_analytic = match a.thr {
        Some(_) => None,
        None if flip == 0.0 => Some(accept_all_zero_noise_log::<f64>(a.k, a.population)?.prob()),
        None => MatchModel64::new(a.k, flip)?
            .accept_all_exact_log(a.population)
            .ok()
            .map(|v| v.prob()),
    };
    out.rows.push(rate_row("accept_all", &res.accept_all, accept_analytic));
    if let Some(thr) = a.thr {
        let m = OpenWorldModel64::new(a.k, flip, a.population, a.unenrolled)?;
        out.rows.push(rate_row("identified", &res.correct, Some(m.identification_log(thr)?.prob())));
        out.rows.push(rate_row("misidentified", &res.confused, Some(m.misidentification_log(thr)?.prob())));
        out.rows.push(rate_row("rejected", &res.rejected, Some(m.fnir_n_log(thr)?.prob())));
        if a.unenrolled > 0 {
            out.rows.push(rate_row("false_positive", &res.false_positive, Some(m.fpir_log(thr)?.prob())));
        }
    }
    Ok(out)
}

pub fn check_noise(n: &Noise) -> Result<()> {
    if let Some(l) = n.level {
        if !(0.0..=1.0).contains(&l) {
            bail!(UsageError(format!("noise level must lie in [0, 1], got {l}")));
        }
    }
    Ok(())
}

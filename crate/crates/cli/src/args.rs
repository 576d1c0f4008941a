use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "biocap", version, about = "Template length, threshold and storage planning for binary biometric templates")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Global {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Print probabilities as natural logarithms.
    #[arg(long, global = true)]
    pub log: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "BIOCAP_THREADS")]
    pub threads: Option<usize>,
    /// Write output here instead of stdout; text and CSV output get a
    /// `<out>.manifest.json` next to them.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collision probability of random patterns and the bits needed to avoid it.
    Collision(CollisionArgs),
    /// Probability that every enrolled user is recognised.
    Accept(AcceptArgs),
    /// Joint search for template length and threshold under three error budgets.
    Plan(PlanArgs),
    /// Minimal template length over a grid of noise levels and populations.
    Sweep(GridArgs),
    /// Linear fits of k against log2(N) and cubic fits of their coefficients.
    Fit(FitArgs),
    /// Template length and storage per noise level for one population.
    Dbtable(DbTableArgs),
    /// Monte Carlo estimate of the recognition and open-world rates.
    Simulate(SimulateArgs),
    /// Repeat a run recorded in a manifest (or in JSON output).
    Rerun(RerunArgs),
}

/// Accepts plain integers and scientific notation such as `1e10`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    let s = s.trim().replace('_', "");
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if !(v >= 0.0) || v.fract() != 0.0 || v >= 18_446_744_073_709_551_616.0 {
        return Err(format!("`{s}` is not a non-negative integer"));
    }
    Ok(v as u64)
}

pub fn parse_bits(s: &str) -> Result<u32, String> {
    let v = parse_count(s)?;
    u32::try_from(v).map_err(|_| format!("`{s}` is too large for a bit count"))
}

/// Noise given either as a level (twice the flip probability) or as a flip
/// probability.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Noise {
    /// Noise level in [0, 1]; each bit flips with probability level / 2.
    #[arg(short = 'p', long = "noise", conflicts_with = "flip")]
    pub level: Option<f64>,
    /// Per-bit flip probability in [0, 0.5].
    #[arg(long)]
    pub flip: Option<f64>,
}

impl Noise {
    pub fn flip_or(&self, default_level: f64) -> f64 {
        match (self.flip, self.level) {
            (Some(f), _) => f,
            (None, Some(l)) => l / 2.0,
            (None, None) => default_level / 2.0,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CollisionArgs {
    /// Number of distinct patterns T.
    #[arg(short = 'T', long, visible_alias = "days", conflicts_with = "bits")]
    pub patterns: Option<f64>,
    /// Pattern length in bits (T = 2^bits).
    #[arg(short = 'k', long, value_parser = parse_bits)]
    pub bits: Option<u32>,
    /// Population N.
    #[arg(short = 'N', long = "pop", visible_alias = "people", value_parser = parse_count)]
    pub population: u64,
    /// Collision budget for the bit-count report.
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AcceptArgs {
    #[arg(short = 'k', long, value_parser = parse_bits)]
    pub k: u32,
    #[arg(short = 'N', long = "pop", value_parser = parse_count)]
    pub population: u64,
    #[command(flatten)]
    pub noise: Noise,
    /// Only the exact product.
    #[arg(long, conflicts_with = "bounds")]
    pub exact: bool,
    /// Only the interval bounds.
    #[arg(long)]
    pub bounds: bool,
    /// Number of equal intervals for the bounds (default: 100, or 1000
    /// geometric ones for N >= 1e8).
    #[arg(long, value_parser = parse_count)]
    pub intervals: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlanArgs {
    /// Enrolled population N.
    #[arg(short = 'N', long = "pop", value_parser = parse_count, default_value = "1e10")]
    pub population: u64,
    /// Unenrolled probes N⁻ (default: N).
    #[arg(long, value_parser = parse_count)]
    pub unenrolled: Option<u64>,
    #[command(flatten)]
    pub noise: Noise,
    /// Accept-all failure budget.
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
    /// Budget on enrolled probes left without an identity.
    #[arg(long, default_value_t = 1e-2)]
    pub beta: f64,
    /// Budget on any outsider being accepted.
    #[arg(long, default_value_t = 1e-4)]
    pub gamma: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GridArgs {
    /// Comma-separated noise levels (default 0.01, 0.02, ..., 0.50).
    #[arg(long = "noise", value_delimiter = ',')]
    pub noise: Option<Vec<f64>>,
    /// Comma-separated populations (default 1e2, 1e3, ..., 1e10).
    #[arg(long = "pops", value_delimiter = ',', value_parser = parse_count)]
    pub pops: Option<Vec<u64>>,
    /// Accept-all failure budget.
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Fit an existing sweep CSV instead of sweeping.
    #[arg(long, conflicts_with_all = ["noise", "pops"])]
    pub from: Option<PathBuf>,
    /// Also write the fit summary (polynomials, r², MSE) as JSON here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DbTableArgs {
    #[arg(short = 'N', long = "pop", value_parser = parse_count, default_value = "1e10")]
    pub population: u64,
    /// Comma-separated noise levels (default 0, 0.05, ..., 0.50).
    #[arg(long = "noise", value_delimiter = ',')]
    pub noise: Option<Vec<f64>>,
    /// Take A(p), B(p) from a fit summary JSON instead of the reference polynomials.
    #[arg(long, conflicts_with = "refit")]
    pub coeffs: Option<PathBuf>,
    /// Sweep and fit the default grid first.
    #[arg(long)]
    pub refit: bool,
    /// Accept-all failure budget used with --refit.
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(short = 'k', long, value_parser = parse_bits)]
    pub k: u32,
    /// Enrolled users.
    #[arg(short = 'N', long = "pop", value_parser = parse_count)]
    pub population: u64,
    /// Unenrolled probes per trial (needs --thr).
    #[arg(long, value_parser = parse_count, default_value = "0", requires = "thr")]
    pub unenrolled: u64,
    #[command(flatten)]
    pub noise: Noise,
    /// Decision threshold; without it every probe gets its nearest template.
    #[arg(long)]
    pub thr: Option<u32>,
    #[arg(long, value_parser = parse_count, default_value = "1e4")]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// Manifest file, or JSON output with an embedded manifest.
    pub manifest: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(parse_count("1e10"), Ok(10_000_000_000));
        assert_eq!(parse_count("1000"), Ok(1000));
        assert_eq!(parse_count("1_000"), Ok(1000));
        assert_eq!(parse_count("2.5e3"), Ok(2500));
        assert_eq!(parse_count("18446744073709551615"), Ok(u64::MAX));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
        assert!(parse_count("1e20").is_err());
        assert!(parse_count("ten").is_err());
        assert!(parse_bits("5e9").is_err());
    }

    #[test]
    fn noise_conventions() {
        let n = Noise { level: Some(0.01), flip: None };
        assert_eq!(n.flip_or(0.3), 0.005);
        let n = Noise { level: None, flip: Some(0.2) };
        assert_eq!(n.flip_or(0.3), 0.2);
        let n = Noise { level: None, flip: None };
        assert_eq!(n.flip_or(0.3), 0.15);
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

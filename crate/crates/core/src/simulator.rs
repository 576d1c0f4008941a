//! Monte Carlo check of the analytic rates: random packed bit templates,
//! Bernoulli bit flips and Hamming nearest-neighbour identification.
//!
//! Every trial draws a fresh population from its own ChaCha8 stream
//! (`seed_from_u64(seed)`, stream = trial index), and trial outcomes are
//! reduced as integer counts, so results do not depend on the thread count.

use std::cmp::Ordering;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Generator identity recorded in run metadata.
pub const GENERATOR: &str = "rand_chacha ChaCha8Rng, seed_from_u64(seed), stream = trial index";

/// Cap on `trials * (N + N_minus)` probe evaluations.
pub const SIMULATION_WORK_CAP: u64 = 50_000_000_000;

/// A `k`-bit vector packed into 64-bit words; bits past `k` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template {
    k: u32,
    words: Vec<u64>,
}

fn word_count(k: u32) -> usize {
    (k as usize).div_ceil(64)
}

fn tail_mask(k: u32) -> u64 {
    match k % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

fn fill_random<R: Rng + ?Sized>(k: u32, words: &mut [u64], rng: &mut R) {
    for w in words.iter_mut() {
        *w = rng.random();
    }
    if let Some(last) = words.last_mut() {
        *last &= tail_mask(k);
    }
}

impl Template {
    pub fn zeros(k: u32) -> Self {
        Template { k, words: vec![0; word_count(k)] }
    }

    /// Uniformly random template (every bit a fair coin).
    pub fn random<R: Rng + ?Sized>(k: u32, rng: &mut R) -> Self {
        let mut t = Self::zeros(k);
        fill_random(k, &mut t.words, rng);
        t
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut t = Self::zeros(bits.len() as u32);
        for (i, &b) in bits.iter().enumerate() {
            if b {
                t.flip(i as u32);
            }
        }
        t
    }

    pub fn len(&self) -> u32 {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: u32) -> bool {
        assert!(i < self.k, "bit {i} out of range for k = {}", self.k);
        self.words[(i / 64) as usize] >> (i % 64) & 1 == 1
    }

    pub fn flip(&mut self, i: u32) {
        assert!(i < self.k, "bit {i} out of range for k = {}", self.k);
        self.words[(i / 64) as usize] ^= 1u64 << (i % 64);
    }

    pub fn hamming(&self, other: &Template) -> u32 {
        assert_eq!(self.k, other.k, "templates of different lengths");
        hamming_words(&self.words, &other.words)
    }
}

/// `N` templates of `k` bits stored contiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Population {
    k: u32,
    stride: usize,
    data: Vec<u64>,
}

impl Population {
    pub fn random<R: Rng + ?Sized>(k: u32, n: usize, rng: &mut R) -> Self {
        let stride = word_count(k);
        let mut data = vec![0u64; stride * n];
        for chunk in data.chunks_mut(stride) {
            fill_random(k, chunk, rng);
        }
        Population { k, stride, data }
    }

    pub fn from_templates(templates: &[Template]) -> Result<Self> {
        let Some(first) = templates.first() else {
            return domain("population needs at least one template");
        };
        let k = first.k;
        if templates.iter().any(|t| t.k != k) {
            return domain("templates of different lengths");
        }
        let data = templates.iter().flat_map(|t| t.words.iter().copied()).collect();
        Ok(Population { k, stride: word_count(k), data })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn len(&self) -> usize {
        if self.stride == 0 {
            0
        } else {
            self.data.len() / self.stride
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn words(&self, i: usize) -> &[u64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }

    pub fn template(&self, i: usize) -> Template {
        Template { k: self.k, words: self.words(i).to_vec() }
    }
}

/// `N` fair random templates from `ChaCha8Rng::seed_from_u64(seed)`.
pub fn gen_population(k: u32, n: usize, seed: u64) -> Population {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Population::random(k, n, &mut rng)
}

/// Flips every bit independently with probability `flip`, skipping ahead by
/// geometric gaps so the cost is proportional to the number of flips.
pub fn perturb<R: Rng + ?Sized>(t: &Template, flip: f64, rng: &mut R) -> Template {
    assert!((0.0..=0.5).contains(&flip), "flip probability {flip} outside [0, 0.5]");
    let mut out = t.clone();
    if flip == 0.0 {
        return out;
    }
    let ln_keep = (-flip).ln_1p();
    let mut pos: u64 = 0;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let gap = (u.ln() / ln_keep).floor();
        if gap >= (t.k as u64 - pos) as f64 {
            break;
        }
        pos += gap as u64;
        out.flip(pos as u32);
        pos += 1;
        if pos >= t.k as u64 {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Match(usize),
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identification {
    /// Nearest template (the first one on ties), or a rejection.
    pub decision: Decision,
    /// Several templates share the minimal distance.
    pub tie: bool,
    pub distance: u32,
}

fn identify_words(probe: &[u64], db: &Population, thr: Option<u32>) -> Identification {
    let mut best = u32::MAX;
    let mut best_idx = 0;
    let mut tie = false;
    for i in 0..db.len() {
        let d = hamming_words(probe, db.words(i));
        match d.cmp(&best) {
            Ordering::Less => {
                best = d;
                best_idx = i;
                tie = false;
            }
            Ordering::Equal => tie = true,
            Ordering::Greater => {}
        }
    }
    let decision = match thr {
        Some(t) if best > t => Decision::Reject,
        _ => Decision::Match(best_idx),
    };
    Identification { decision, tie, distance: best }
}

/// Nearest-template identification, rejecting when the minimum exceeds `thr`.
pub fn identify(probe: &Template, db: &Population, thr: Option<u32>) -> Identification {
    assert!(!db.is_empty(), "identification needs a non-empty database");
    assert_eq!(probe.k, db.k, "probe and database lengths differ");
    identify_words(&probe.words, db, thr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub k: u32,
    pub enrolled: u64,
    pub unenrolled: u64,
    /// Per-bit flip probability.
    pub flip: f64,
    pub thr: Option<u32>,
    pub trials: u64,
    pub seed: u64,
}

/// `hits` out of `total` events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: u64,
    pub total: u64,
}

impl Rate {
    pub fn estimate(&self) -> f64 {
        if self.total == 0 {
            return f64::NAN;
        }
        self.hits as f64 / self.total as f64
    }

    /// Binomial standard error `sqrt(r (1 - r) / total)`.
    pub fn stderr(&self) -> f64 {
        let r = self.estimate();
        (r * (1.0 - r) / self.total as f64).sqrt()
    }

    fn add(self, o: Rate) -> Rate {
        Rate { hits: self.hits + o.hits, total: self.total + o.total }
    }
}

/// Counts per event category; rates are `hits / total` of each.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResult {
    pub trials: u64,
    /// Per trial: every enrolled user identified, strictly closest.
    pub accept_all: Rate,
    /// Per enrolled probe.
    pub correct: Rate,
    pub confused: Rate,
    pub rejected: Rate,
    /// Per unenrolled probe.
    pub false_positive: Rate,
}

impl SimResult {
    fn add(self, o: SimResult) -> SimResult {
        SimResult {
            trials: self.trials + o.trials,
            accept_all: self.accept_all.add(o.accept_all),
            correct: self.correct.add(o.correct),
            confused: self.confused.add(o.confused),
            rejected: self.rejected.add(o.rejected),
            false_positive: self.false_positive.add(o.false_positive),
        }
    }
}

fn validate(cfg: &SimConfig) -> Result<()> {
    if cfg.k == 0 {
        return domain("template length k must be >= 1");
    }
    if cfg.enrolled == 0 {
        return domain("enrolled population must be >= 1");
    }
    if !(0.0..=0.5).contains(&cfg.flip) {
        return domain(format!("flip probability must lie in [0, 0.5], got {}", cfg.flip));
    }
    if cfg.trials == 0 {
        return domain("trials must be >= 1");
    }
    if let Some(t) = cfg.thr {
        if t > cfg.k {
            return domain(format!("threshold {t} exceeds k = {}", cfg.k));
        }
    }
    let work = cfg
        .trials
        .saturating_mul(cfg.enrolled.saturating_add(cfg.unenrolled));
    if work > SIMULATION_WORK_CAP {
        return Err(Error::OverBudget(format!(
            "simulation needs {work} probes > {SIMULATION_WORK_CAP}"
        )));
    }
    Ok(())
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Templates sorted by content, for exact-pattern counting.
struct SortedIndex<'a> {
    pop: &'a Population,
    order: Vec<u32>,
}

impl<'a> SortedIndex<'a> {
    fn new(pop: &'a Population) -> Self {
        let mut order: Vec<u32> = (0..pop.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| pop.words(a as usize).cmp(pop.words(b as usize)));
        SortedIndex { pop, order }
    }

    fn count(&self, pattern: &[u64]) -> u32 {
        let lo = self
            .order
            .partition_point(|&i| self.pop.words(i as usize) < pattern);
        let hi = self
            .order
            .partition_point(|&i| self.pop.words(i as usize) <= pattern);
        (hi - lo) as u32
    }

    /// Templates within Hamming distance `radius` of `center`, stopping once
    /// `limit` are found.
    fn ball_count(&self, center: &mut [u64], k: u32, radius: u32, limit: u32) -> u32 {
        fn walk(ix: &SortedIndex, buf: &mut [u64], k: u32, start: u32, left: u32, limit: u32, acc: &mut u32) {
            *acc += ix.count(buf);
            if *acc >= limit || left == 0 {
                return;
            }
            for pos in start..k {
                let (w, b) = ((pos / 64) as usize, pos % 64);
                buf[w] ^= 1u64 << b;
                walk(ix, buf, k, pos + 1, left - 1, limit, acc);
                buf[w] ^= 1u64 << b;
                if *acc >= limit {
                    return;
                }
            }
        }
        let mut acc = 0;
        walk(self, center, k, 0, radius, limit, &mut acc);
        acc
    }
}

/// Number of patterns within distance `r` of a point, saturating at `cap`.
fn ball_size(k: u32, r: u32, cap: u64) -> u64 {
    let mut total: u64 = 0;
    let mut term: u64 = 1;
    for i in 0..=r.min(k) {
        if i > 0 {
            term = term.saturating_mul((k - i + 1) as u64) / i as u64;
        }
        total = total.saturating_add(term);
        if total > cap {
            return cap + 1;
        }
    }
    total
}

fn accept_all_trial(cfg: &SimConfig, trial: u64) -> SimResult {
    let mut rng = trial_rng(cfg.seed, trial);
    let n = cfg.enrolled as usize;
    let pop = Population::random(cfg.k, n, &mut rng);
    let index = SortedIndex::new(&pop);
    let budget = (n as u64 / 4).max(1);
    let mut ok = true;
    for j in 0..n {
        let probe = perturb(&pop.template(j), cfg.flip, &mut rng);
        let own = hamming_words(&probe.words, pop.words(j));
        // Success iff user j is the only template within distance `own`.
        let crowded = if ball_size(cfg.k, own, budget) <= budget {
            let mut buf = probe.words.clone();
            index.ball_count(&mut buf, cfg.k, own, 2) >= 2
        } else {
            (0..n).any(|i| i != j && hamming_words(&probe.words, pop.words(i)) <= own)
        };
        if crowded {
            ok = false;
            break;
        }
    }
    SimResult {
        trials: 1,
        accept_all: Rate { hits: ok as u64, total: 1 },
        ..SimResult::default()
    }
}

fn open_world_trial(cfg: &SimConfig, thr: u32, trial: u64) -> SimResult {
    let mut rng = trial_rng(cfg.seed, trial);
    let n = cfg.enrolled as usize;
    let pop = Population::random(cfg.k, n, &mut rng);
    let mut r = SimResult { trials: 1, ..SimResult::default() };
    let mut all_ok = true;
    for j in 0..n {
        let probe = perturb(&pop.template(j), cfg.flip, &mut rng);
        let id = identify_words(&probe.words, &pop, Some(thr));
        match id.decision {
            Decision::Reject => {
                r.rejected.hits += 1;
                all_ok = false;
            }
            Decision::Match(i) if i == j && !id.tie => r.correct.hits += 1,
            Decision::Match(_) => {
                r.confused.hits += 1;
                all_ok = false;
            }
        }
    }
    let total = n as u64;
    r.correct.total = total;
    r.confused.total = total;
    r.rejected.total = total;
    let mut outsider = vec![0u64; word_count(cfg.k)];
    for _ in 0..cfg.unenrolled {
        fill_random(cfg.k, &mut outsider, &mut rng);
        if (0..n).any(|i| hamming_words(&outsider, pop.words(i)) <= thr) {
            r.false_positive.hits += 1;
        }
    }
    r.false_positive.total = cfg.unenrolled;
    r.accept_all = Rate { hits: all_ok as u64, total: 1 };
    r
}

/// Fraction of trials in which every enrolled user is recognised.
pub fn estimate_accept_all(cfg: &SimConfig) -> Result<SimResult> {
    validate(cfg)?;
    Ok((0..cfg.trials)
        .into_par_iter()
        .map(|t| accept_all_trial(cfg, t))
        .reduce(SimResult::default, SimResult::add))
}

/// Thresholded rates: every enrolled user is probed once and `N_minus` fresh
/// outsiders are probed against the same database in each trial.
pub fn estimate_open_world(cfg: &SimConfig) -> Result<SimResult> {
    validate(cfg)?;
    let Some(thr) = cfg.thr else {
        return domain("open-world simulation needs a threshold");
    };
    Ok((0..cfg.trials)
        .into_par_iter()
        .map(|t| open_world_trial(cfg, thr, t))
        .reduce(SimResult::default, SimResult::add))
}

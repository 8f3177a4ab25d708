//! VCG redistribution for the non-excludable public project: outcomes,
//! efficiency ratios, feasibility, feature maps and evolutionary search for
//! the redistribution function `h`.
//!
//! Types live in `[0, 1]`; the project costs 1 and is built iff the reported
//! values sum to at least 1. First-best welfare is `S = max(sum, 1)`.

use rand::Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

use crate::evolve::{evolve_from, trace_csv, BoxCodec, GAConfig, TraceRow};
use crate::mechanism::{Outcome, DEFAULT_TOLERANCE};
use crate::numeric::{derive_seed, monte_carlo, stream_rng, Estimate};
use crate::priors::Prior;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RedistError {
    #[error("invalid redistribution function: {0}")]
    InvalidFunction(String),
    #[error("profile has {got} agents, expected {expected}")]
    AgentCount { expected: usize, got: usize },
    #[error(transparent)]
    Evolve(#[from] crate::evolve::EvolveError),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, RedistError>;

pub fn first_best(profile: &[f64]) -> f64 {
    profile.iter().sum::<f64>().max(1.0)
}

/// Which summary of the other agents' types `h` sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureCombo {
    /// The sorted other types themselves.
    Identity,
    /// Highest other type and the sum of the rest.
    C1,
    /// Highest, sum of the rest, largest gap between adjacent sorted types.
    C7,
    /// Highest, lowest, sum of the rest.
    C8,
}

impl FeatureCombo {
    pub fn id(self) -> u32 {
        match self {
            FeatureCombo::Identity => 0,
            FeatureCombo::C1 => 1,
            FeatureCombo::C7 => 7,
            FeatureCombo::C8 => 8,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(FeatureCombo::Identity),
            1 => Some(FeatureCombo::C1),
            7 => Some(FeatureCombo::C7),
            8 => Some(FeatureCombo::C8),
            _ => None,
        }
    }

    /// Feature dimension for `n` agents.
    pub fn dims(self, n: usize) -> usize {
        match self {
            FeatureCombo::Identity => n.saturating_sub(1).max(1),
            FeatureCombo::C1 => 2,
            FeatureCombo::C7 | FeatureCombo::C8 => 3,
        }
    }

    /// Sum of the other types, recovered from unit-cube coordinates.
    fn others_sum(self, coords: &[f64], n: usize) -> f64 {
        let rest_scale = n.saturating_sub(2).max(1) as f64;
        match self {
            FeatureCombo::Identity => coords.iter().sum(),
            FeatureCombo::C1 | FeatureCombo::C7 => coords[0] + coords[1] * rest_scale,
            FeatureCombo::C8 => coords[0] + coords[2] * rest_scale,
        }
    }
}

impl FromStr for FeatureCombo {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "0" => Ok(FeatureCombo::Identity),
            "1" | "c1" => Ok(FeatureCombo::C1),
            "7" | "c7" => Ok(FeatureCombo::C7),
            "8" | "c8" => Ok(FeatureCombo::C8),
            other => Err(format!("unknown feature combination '{other}' (identity, 1, 7, 8)")),
        }
    }
}

/// Raw features of the other agents' types (any order).
pub fn features(theta_minus_i: &[f64], combo: FeatureCombo) -> Vec<f64> {
    let mut sorted = theta_minus_i.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let max = sorted.first().copied().unwrap_or(0.0);
    let rest: f64 = sorted.iter().skip(1).sum();
    match combo {
        FeatureCombo::Identity => sorted,
        FeatureCombo::C1 => vec![max, rest],
        FeatureCombo::C7 => {
            let jump = sorted.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
            vec![max, rest, jump]
        }
        FeatureCombo::C8 => vec![max, sorted.last().copied().unwrap_or(0.0), rest],
    }
}

/// Features mapped into the unit cube: sums are divided by the number of
/// summands so every coordinate lies in `[0, 1]`.
fn unit_features(theta_minus_i: &[f64], combo: FeatureCombo) -> Vec<f64> {
    let mut f = features(theta_minus_i, combo);
    let rest_scale = theta_minus_i.len().saturating_sub(1).max(1) as f64;
    match combo {
        FeatureCombo::Identity => {
            if f.is_empty() {
                f.push(0.0);
            }
        }
        FeatureCombo::C1 | FeatureCombo::C7 => f[1] /= rest_scale,
        FeatureCombo::C8 => f[2] /= rest_scale,
    }
    for x in &mut f {
        *x = x.clamp(0.0, 1.0);
    }
    f
}

/// `h(θ₋ᵢ)`: multilinear interpolation of knot values on a regular grid over
/// the unit-cube features of the other agents' types.
#[derive(Debug, Clone, PartialEq)]
pub struct RedistributionFn {
    n: usize,
    combo: FeatureCombo,
    knots: usize,
    values: Vec<f64>,
}

impl RedistributionFn {
    pub fn new(n: usize, combo: FeatureCombo, knots: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(RedistError::InvalidFunction("need at least two agents".into()));
        }
        if knots < 2 {
            return Err(RedistError::InvalidFunction("need at least two knots per axis".into()));
        }
        let expected = knots.pow(combo.dims(n) as u32);
        if values.len() != expected {
            return Err(RedistError::InvalidFunction(format!("expected {expected} knot values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RedistError::InvalidFunction("non-finite knot value".into()));
        }
        Ok(RedistributionFn { n, combo, knots, values })
    }

    pub fn constant(n: usize, combo: FeatureCombo, knots: usize, c: f64) -> Result<Self> {
        Self::new(n, combo, knots, vec![c; knots.pow(combo.dims(n) as u32)])
    }

    /// Knot values from a function of unit-cube coordinates.
    pub fn from_coords<F: Fn(&[f64]) -> f64>(n: usize, combo: FeatureCombo, knots: usize, f: F) -> Result<Self> {
        let dims = combo.dims(n);
        let total = knots.pow(dims as u32);
        let step = 1.0 / (knots - 1).max(1) as f64;
        let mut coords = vec![0.0; dims];
        let values = (0..total)
            .map(|mut idx| {
                for c in coords.iter_mut() {
                    *c = (idx % knots) as f64 * step;
                    idx /= knots;
                }
                f(&coords)
            })
            .collect();
        Self::new(n, combo, knots, values)
    }

    /// `max(Σθ₋ᵢ, (n−1)/n)`: weakly budget balanced, and it stays so after
    /// interpolation because the function is convex in the features.
    pub fn feasible_start(n: usize, combo: FeatureCombo, knots: usize) -> Result<Self> {
        let floor = (n - 1) as f64 / n as f64;
        Self::from_coords(n, combo, knots, |c| combo.others_sum(c, n).max(floor))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn combo(&self) -> FeatureCombo {
        self.combo
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same grid with new knot values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.combo, self.knots, values)
    }

    /// `h + delta` everywhere.
    pub fn shifted(&self, delta: f64) -> Self {
        RedistributionFn { values: self.values.iter().map(|v| v + delta).collect(), ..self.clone() }
    }

    /// `h` applied to the other agents' types.
    pub fn eval(&self, theta_minus_i: &[f64]) -> f64 {
        let x = unit_features(theta_minus_i, self.combo);
        let cells = (self.knots - 1) as f64;
        let dims = x.len();
        let mut base = 0usize;
        let mut stride = 1usize;
        let mut offsets = Vec::with_capacity(dims);
        let mut fracs = Vec::with_capacity(dims);
        for &xi in &x {
            let pos = xi * cells;
            let j = (pos.floor() as usize).min(self.knots - 2);
            base += j * stride;
            offsets.push(stride);
            fracs.push(pos - j as f64);
            stride *= self.knots;
        }
        let mut total = 0.0;
        for corner in 0..1usize << dims {
            let mut w = 1.0;
            let mut idx = base;
            for d in 0..dims {
                if corner >> d & 1 == 1 {
                    w *= fracs[d];
                    idx += offsets[d];
                } else {
                    w *= 1.0 - fracs[d];
                }
            }
            if w != 0.0 {
                total += w * self.values[idx];
            }
        }
        total
    }

    /// `h(θ₋ᵢ)` for every agent.
    pub fn per_agent(&self, profile: &[f64]) -> Vec<f64> {
        let mut others = Vec::with_capacity(profile.len().saturating_sub(1));
        (0..profile.len())
            .map(|i| {
                others.clear();
                others.extend(profile.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v));
                self.eval(&others)
            })
            .collect()
    }

    /// Σh / S on one profile.
    pub fn ratio_terms(&self, profile: &[f64]) -> f64 {
        self.per_agent(profile).iter().sum::<f64>() / first_best(profile)
    }

    /// CSV: a `combo,n,knots` line, then the knot values on one line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("combo,n,knots\n");
        let _ = writeln!(out, "{},{},{}", self.combo.id(), self.n, self.knots);
        let coeffs: Vec<String> = self.values.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&coeffs.join(","));
        out.push('\n');
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let bad = |m: &str| RedistError::Parse(m.to_string());
        if lines.next() != Some("combo,n,knots") {
            return Err(bad("missing 'combo,n,knots' header"));
        }
        let meta: Vec<&str> = lines.next().ok_or_else(|| bad("missing grid line"))?.split(',').collect();
        if meta.len() != 3 {
            return Err(bad("grid line needs three fields"));
        }
        let id: u32 = meta[0].trim().parse().map_err(|_| bad("bad combo id"))?;
        let combo = FeatureCombo::from_id(id).ok_or_else(|| bad("unknown combo id"))?;
        let n: usize = meta[1].trim().parse().map_err(|_| bad("bad agent count"))?;
        let knots: usize = meta[2].trim().parse().map_err(|_| bad("bad knot count"))?;
        let values = lines
            .next()
            .ok_or_else(|| bad("missing coefficient line"))?
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad("bad coefficient")))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, combo, knots, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedistOutcome {
    pub built: bool,
    /// Transfer each agent receives.
    pub receive: Vec<f64>,
    /// Truthful utilities under the reported profile.
    pub utilities: Vec<f64>,
    pub welfare: f64,
    pub ratio: f64,
    pub first_best: f64,
    pub total_h: f64,
}

impl Outcome for RedistOutcome {
    fn utility(&self, agent: usize, value: f64) -> f64 {
        let n = self.receive.len() as f64;
        if self.built {
            value + self.receive[agent]
        } else {
            // the retained 1/n cost share
            1.0 / n + self.receive[agent]
        }
    }

    /// Weak budget balance: `Σh ≥ (n−1)·S`.
    fn budget_violation(&self) -> Option<f64> {
        let n = self.receive.len() as f64;
        let deficit = (n - 1.0) * self.first_best - self.total_h;
        (deficit > DEFAULT_TOLERANCE).then_some(deficit)
    }
}

pub fn redist_outcome(profile: &[f64], h: &RedistributionFn) -> Result<RedistOutcome> {
    if profile.len() != h.n {
        return Err(RedistError::AgentCount { expected: h.n, got: profile.len() });
    }
    let n = profile.len();
    let total: f64 = profile.iter().sum();
    let built = total >= 1.0;
    let hs = h.per_agent(profile);
    let receive: Vec<f64> = (0..n)
        .map(|i| {
            if built {
                total - profile[i] - hs[i]
            } else {
                (n - 1) as f64 / n as f64 - hs[i]
            }
        })
        .collect();
    let utilities: Vec<f64> = (0..n)
        .map(|i| if built { profile[i] + receive[i] } else { 1.0 / n as f64 + receive[i] })
        .collect();
    let s = first_best(profile);
    let total_h: f64 = hs.iter().sum();
    let welfare = n as f64 * s - total_h;
    Ok(RedistOutcome { built, receive, utilities, welfare, ratio: welfare / s, first_best: s, total_h })
}

/// Σh/S on one profile; weakly budget balanced iff at least `n − 1`.
pub fn feasibility_ratio(profile: &[f64], h: &RedistributionFn) -> f64 {
    h.ratio_terms(profile)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub profiles: usize,
    /// Profiles with `Σh/S < n − 1 − tolerance`, and how far below they are.
    pub violations: Vec<(Vec<f64>, f64)>,
    /// Smallest `Σh/S − (n − 1)` seen.
    pub min_slack: f64,
    /// Largest Σh/S seen; `n` minus this is the empirical worst-case ratio.
    pub max_ratio_terms: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn is_feasible(h: &RedistributionFn, profiles: &[Vec<f64>], tolerance: f64) -> FeasibilityReport {
    let target = (h.n - 1) as f64;
    let terms: Vec<f64> = profiles.par_iter().map(|p| h.ratio_terms(p)).collect();
    let violations = profiles
        .iter()
        .zip(&terms)
        .filter(|(_, &t)| t < target - tolerance)
        .map(|(p, &t)| (p.clone(), target - t))
        .collect();
    FeasibilityReport {
        profiles: profiles.len(),
        violations,
        min_slack: terms.iter().fold(f64::INFINITY, |m, &t| m.min(t - target)),
        max_ratio_terms: terms.iter().fold(f64::NEG_INFINITY, |m, &t| m.max(t)),
    }
}

/// Every profile in `{0, 1/n, 1}^n`.
pub fn corner_profiles(n: usize) -> Vec<Vec<f64>> {
    let levels = [0.0, 1.0 / n as f64, 1.0];
    let total = 3usize.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            (0..n)
                .map(|_| {
                    let l = levels[idx % 3];
                    idx /= 3;
                    l
                })
                .collect()
        })
        .collect()
}

pub fn random_profiles(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, &[0x5244]);
    (0..count).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Search effort for the adversary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdversaryBudget {
    /// Uniform random profiles screened first.
    pub random: usize,
    pub population: usize,
    pub rounds: usize,
}

impl Default for AdversaryBudget {
    fn default() -> Self {
        AdversaryBudget { random: 20_000, population: 40, rounds: 150 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryReport {
    /// Empirical worst-case efficiency ratio (an upper bound on the true one).
    pub alpha: f64,
    pub alpha_witness: Vec<f64>,
    /// Most negative `Σh/S − (n − 1)`; below zero means a budget deficit.
    pub min_slack: f64,
    pub slack_witness: Vec<f64>,
}

impl AdversaryReport {
    pub fn finds_violation(&self, tolerance: f64) -> bool {
        self.min_slack < -tolerance
    }
}

/// Searches for the profile minimizing the efficiency ratio and the one
/// minimizing the budget slack: a corner scan (`n ≤ 10`), a random pool and
/// an evolutionary refinement seeded from the best of both.
pub fn worst_case_ratio(h: &RedistributionFn, budget: &AdversaryBudget, seed: u64) -> Result<AdversaryReport> {
    let n = h.n;
    let mut pool = random_profiles(n, budget.random, derive_seed(seed, &[1]));
    if n <= 10 {
        pool.extend(corner_profiles(n));
    }
    let terms: Vec<f64> = pool.par_iter().map(|p| h.ratio_terms(p)).collect();
    // largest Σh/S is the worst ratio; smallest is the tightest budget
    let (alpha_witness, hi) = search(h, &pool, &terms, budget, derive_seed(seed, &[2]), 1.0)?;
    let (slack_witness, lo) = search(h, &pool, &terms, budget, derive_seed(seed, &[3]), -1.0)?;
    Ok(AdversaryReport { alpha: n as f64 - hi, alpha_witness, min_slack: lo - (n - 1) as f64, slack_witness })
}

/// Maximizes `sign · Σh/S`; returns the witness and its Σh/S.
fn search(h: &RedistributionFn, pool: &[Vec<f64>], terms: &[f64], budget: &AdversaryBudget, seed: u64, sign: f64) -> Result<(Vec<f64>, f64)> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| (sign * terms[b]).total_cmp(&(sign * terms[a])).then(a.cmp(&b)));
    let (mut best, mut best_terms) = match order.first() {
        Some(&i) => (pool[i].clone(), terms[i]),
        None => (vec![0.0; h.n], h.ratio_terms(&vec![0.0; h.n])),
    };
    if budget.rounds == 0 || budget.population == 0 {
        return Ok((best, best_terms));
    }
    let mut initial: Vec<Vec<f64>> = order.iter().take(budget.population).map(|&i| pool[i].clone()).collect();
    if initial.is_empty() {
        initial.push(best.clone());
    }
    let cfg = GAConfig {
        population: budget.population,
        elite: (budget.population / 4).max(1),
        rounds: budget.rounds,
        fitness_profiles: 1,
        holdout_profiles: 1,
        mutation_prob: 0.5,
        mutation_delta: 0.05,
        perturb_range: 0.0,
        prune_l1: 0.0,
        seed,
    };
    let r = evolve_from(&cfg, &BoxCodec::unit(h.n), initial, |p: &Vec<f64>, _, _| sign * h.ratio_terms(p))?;
    let found = h.ratio_terms(&r.best);
    if sign * found > sign * best_terms {
        best = r.best;
        best_terms = found;
    }
    Ok((best, best_terms))
}

/// Monte Carlo estimate of E[Σh/S].
pub fn expected_ratio_terms(h: &RedistributionFn, prior: &Prior, samples: usize, seed: u64) -> Estimate {
    let n = h.n;
    monte_carlo(samples, seed, |rng| {
        let v = prior.sample(rng, n);
        h.ratio_terms(&v)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedistObjective {
    /// Maximize the worst-case efficiency ratio.
    WorstCase,
    /// Minimize E[Σh/S].
    Expectation,
}

impl RedistObjective {
    /// Weight of the objective relative to the squared-hinge budget penalty.
    pub fn epsilon(self) -> f64 {
        match self {
            RedistObjective::WorstCase => 1e-2,
            RedistObjective::Expectation => 1e-4,
        }
    }
}

impl FromStr for RedistObjective {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "worst-case" | "worstcase" => Ok(RedistObjective::WorstCase),
            "expectation" | "expected" => Ok(RedistObjective::Expectation),
            other => Err(format!("unknown redistribution objective '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizedH {
    pub h: RedistributionFn,
    /// Uniform shift added after evolution to close budget deficits found by
    /// the adversary and the dense scan.
    pub repair_shift: f64,
    pub trace: Vec<TraceRow>,
}

impl OptimizedH {
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

/// Squared-hinge budget penalty plus `ε ·` objective, negated for maximization.
fn penalized_fitness(h: &RedistributionFn, sampled: &[Vec<f64>], stress: &[Vec<f64>], objective: RedistObjective) -> f64 {
    let n1 = (h.n - 1) as f64;
    let mut penalty = 0.0;
    let mut sum = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (k, p) in sampled.iter().chain(stress).enumerate() {
        let s = first_best(p);
        let total: f64 = h.per_agent(p).iter().sum();
        let gap = (n1 * s - total).max(0.0);
        penalty += gap * gap;
        let terms = total / s;
        worst = worst.max(terms);
        if k < sampled.len() {
            sum += terms;
        }
    }
    penalty /= (sampled.len() + stress.len()) as f64;
    let obj = match objective {
        RedistObjective::Expectation => sum / sampled.len().max(1) as f64,
        RedistObjective::WorstCase => worst,
    };
    -(objective.epsilon() * obj + penalty)
}

/// Fixed profiles added to every fitness evaluation: corners plus a coarse
/// grid for small `n`.
fn stress_profiles(n: usize) -> Vec<Vec<f64>> {
    let mut out = if n <= 6 { corner_profiles(n) } else { Vec::new() };
    if n <= 4 {
        out.extend(grid_profiles(n, 9));
    }
    out
}

fn grid_profiles(n: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            (0..n)
                .map(|_| {
                    let v = (idx % per_axis) as f64 / (per_axis - 1) as f64;
                    idx /= per_axis;
                    v
                })
                .collect()
        })
        .collect()
}

/// Profiles checked during repair: corners, a regular grid (small `n`) and
/// uniform samples.
fn repair_profiles(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = if n <= 10 { corner_profiles(n) } else { Vec::new() };
    let per_axis = match n {
        0..=3 => 31,
        4 => 13,
        5 => 7,
        _ => 0,
    };
    if per_axis > 0 {
        out.extend(grid_profiles(n, per_axis));
    }
    out.extend(random_profiles(n, 50_000, seed));
    out
}

/// Raises `h` uniformly until neither the repair scan nor the adversary
/// finds a budget deficit.
pub fn repair(h: &RedistributionFn, budget: &AdversaryBudget, seed: u64) -> Result<(RedistributionFn, f64)> {
    const MARGIN: f64 = 1e-7;
    let n = h.n as f64;
    let scan = repair_profiles(h.n, derive_seed(seed, &[1]));
    let mut current = h.clone();
    let mut shift = 0.0;
    for round in 0..8u64 {
        let report = is_feasible(&current, &scan, 0.0);
        let adv = worst_case_ratio(&current, budget, derive_seed(seed, &[2, round]))?;
        let witness_slack = adv.min_slack.min(report.min_slack);
        if witness_slack >= 0.0 {
            break;
        }
        // a deficit of d in Σh/S at first-best S needs d·S/n more per agent;
        // S ≤ n bounds the required shift
        let worst_s = report
            .violations
            .iter()
            .map(|(p, d)| d * first_best(p))
            .chain(std::iter::once(-adv.min_slack.min(0.0) * first_best(&adv.slack_witness)))
            .fold(0.0f64, f64::max);
        let delta = worst_s / n + MARGIN;
        current = current.shifted(delta);
        shift += delta;
    }
    Ok((current, shift))
}

/// Evolves the knot values of `h`, starting from the feasible
/// `max(Σθ₋ᵢ, (n−1)/n)`, then repairs any remaining budget deficit. Falls
/// back to the start if the repaired result scores worse on held-out data.
pub fn optimize_h(
    objective: RedistObjective,
    prior: &Prior,
    n: usize,
    combo: FeatureCombo,
    knots: usize,
    ga: &GAConfig,
) -> Result<OptimizedH> {
    let start = RedistributionFn::feasible_start(n, combo, knots)?;
    let dim = start.values().len();
    let codec = BoxCodec { lo: vec![-1.0; dim], hi: vec![n as f64; dim], center: Some(start.values().to_vec()), jitter: 0.002 };
    let mut initial = vec![start.values().to_vec()];
    for i in 1..ga.population {
        let mut rng = stream_rng(ga.seed, &[0x4849, i as u64]);
        initial.push(crate::evolve::Codec::random(&codec, &mut rng));
    }
    let stress = stress_profiles(n);
    let fitness = |values: &Vec<f64>, seed: u64, samples: usize| {
        let h = RedistributionFn { values: values.clone(), ..start.clone() };
        let mut rng = stream_rng(seed, &[0x5250]);
        let sampled: Vec<Vec<f64>> = (0..samples).map(|_| prior.sample(&mut rng, n)).collect();
        penalized_fitness(&h, &sampled, &stress, objective)
    };
    if ga.rounds == 0 {
        return Ok(OptimizedH { h: start, repair_shift: 0.0, trace: Vec::new() });
    }
    let r = evolve_from(ga, &codec, initial, fitness)?;
    let evolved = start.with_values(r.best)?;
    let (h, repair_shift) = repair(&evolved, &AdversaryBudget::default(), derive_seed(ga.seed, &[0x5245]))?;

    // the repaired result must beat the (feasible) start on held-out data
    let score = |h: &RedistributionFn| -> Result<f64> {
        Ok(match objective {
            RedistObjective::Expectation => -expected_ratio_terms(h, prior, ga.holdout_profiles, derive_seed(ga.seed, &[0x484f])).mean,
            RedistObjective::WorstCase => worst_case_ratio(h, &AdversaryBudget::default(), derive_seed(ga.seed, &[0x484f]))?.alpha,
        })
    };
    if score(&h)? >= score(&start)? {
        Ok(OptimizedH { h, repair_shift, trace: r.trace })
    } else {
        Ok(OptimizedH { h: start, repair_shift: 0.0, trace: r.trace })
    }
}

/// GA settings used for `h`: 60 individuals, top 20 kept, small steps.
pub fn default_h_config(seed: u64) -> GAConfig {
    GAConfig {
        population: 60,
        elite: 20,
        rounds: 300,
        fitness_profiles: 1000,
        holdout_profiles: 20_000,
        mutation_prob: 0.1,
        mutation_delta: 0.004,
        perturb_range: 0.0,
        prune_l1: 0.0,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{check_budget, check_sp};
    use proptest::prelude::*;
    use rand::Rng;

    fn constant(n: usize, c: f64) -> RedistributionFn {
        RedistributionFn::constant(n, FeatureCombo::C1, 8, c).unwrap()
    }

    #[test]
    fn first_best_examples() {
        assert_eq!(first_best(&[0.2, 0.3]), 1.0);
        assert_eq!(first_best(&[0.5, 0.5, 0.5]), 1.5);
        assert_eq!(first_best(&[0.0; 4]), 1.0);
    }

    #[test]
    fn outcome_examples() {
        let o = redist_outcome(&[0.5, 0.5, 0.5], &constant(3, 2.0)).unwrap();
        assert!(o.built);
        for r in &o.receive {
            assert!((r + 1.0).abs() < 1e-12);
        }
        assert!((o.welfare + 1.5).abs() < 1e-12);
        assert!((o.ratio + 1.0).abs() < 1e-12);

        let o = redist_outcome(&[0.1, 0.2, 0.3], &constant(3, 2.0 / 3.0)).unwrap();
        assert!(!o.built);
        assert!(o.receive.iter().all(|r| r.abs() < 1e-12));
        assert!((o.welfare - 1.0).abs() < 1e-12);
        assert!((o.ratio - 1.0).abs() < 1e-12);
        assert!(redist_outcome(&[0.1, 0.2], &constant(3, 1.0)).is_err());
    }

    #[test]
    fn feasibility_examples() {
        let h = constant(3, 2.0);
        let report = is_feasible(&h, &random_profiles(3, 5000, 1), 1e-12);
        assert!(report.is_feasible());
        assert!((feasibility_ratio(&[0.0, 0.0, 0.0], &h) - 6.0).abs() < 1e-12);
        let deficit = constant(3, 2.0 / 3.0);
        assert!((feasibility_ratio(&[1.0, 1.0, 0.0], &deficit) - 1.0).abs() < 1e-12);
        assert!(!is_feasible(&deficit, &[vec![1.0, 1.0, 0.0]], 1e-12).is_feasible());
    }

    #[test]
    fn feature_examples() {
        let f = features(&[0.4, 0.9, 0.1], FeatureCombo::C8);
        assert_eq!(f, vec![0.9, 0.1, 0.5]);
        let f = features(&[0.9, 0.4, 0.1], FeatureCombo::C7);
        assert!((f[0] - 0.9).abs() < 1e-12 && (f[1] - 0.5).abs() < 1e-12 && (f[2] - 0.5).abs() < 1e-12);
        assert_eq!(features(&[0.3], FeatureCombo::C1), vec![0.3, 0.0]);
        assert_eq!(features(&[0.1, 0.3], FeatureCombo::Identity), vec![0.3, 0.1]);
    }

    #[test]
    fn interpolation_reproduces_affine_functions() {
        for combo in [FeatureCombo::Identity, FeatureCombo::C1, FeatureCombo::C7, FeatureCombo::C8] {
            let h = RedistributionFn::from_coords(4, combo, 5, |c| 0.3 + c.iter().enumerate().map(|(k, x)| (k + 1) as f64 * x).sum::<f64>())
                .unwrap();
            let mut rng = stream_rng(combo.id() as u64, &[]);
            for _ in 0..200 {
                let others: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
                let c = unit_features(&others, combo);
                let expect = 0.3 + c.iter().enumerate().map(|(k, x)| (k + 1) as f64 * x).sum::<f64>();
                assert!((h.eval(&others) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feasible_start_is_feasible_and_beats_constant() {
        for n in [2, 3, 5] {
            let h = RedistributionFn::feasible_start(n, FeatureCombo::C1, 8).unwrap();
            let mut profiles = random_profiles(n, 20_000, 3);
            profiles.extend(corner_profiles(n));
            let report = is_feasible(&h, &profiles, 1e-12);
            assert!(report.is_feasible(), "n={n}: {:?}", report.violations.first());
        }
        let u = Prior::uniform();
        let start = expected_ratio_terms(&RedistributionFn::feasible_start(3, FeatureCombo::C1, 8).unwrap(), &u, 20_000, 1);
        let flat = expected_ratio_terms(&constant(3, 2.0), &u, 20_000, 1);
        assert!(start.mean < flat.mean);
    }

    #[test]
    fn constant_h_expectation_matches_quadrature() {
        // E[1/S] for three uniforms: P(Σ<1)=1/6 plus ∫ over sums ≥ 1
        let density = |s: f64| {
            if s < 1.0 {
                s * s / 2.0
            } else if s < 2.0 {
                (-2.0 * s * s + 6.0 * s - 3.0) / 2.0
            } else {
                (3.0 - s) * (3.0 - s) / 2.0
            }
        };
        let tail = crate::numeric::integrate(|s| density(s) / s, 1.0, 3.0, 1e-12);
        let exact = 6.0 * (1.0 / 6.0 + tail);
        let est = expected_ratio_terms(&constant(3, 2.0), &Prior::uniform(), 100_000, 4);
        assert!(exact > 2.0);
        assert!(est.covers(exact, 4.0), "{est:?} vs {exact}");
    }

    #[test]
    fn adversary_finds_constant_worst_case() {
        let h = constant(3, 2.0);
        let r = worst_case_ratio(&h, &AdversaryBudget { random: 500, population: 20, rounds: 20 }, 1).unwrap();
        assert!((r.alpha + 3.0).abs() < 1e-12);
        assert!(r.alpha_witness.iter().sum::<f64>() <= 1.0 + 1e-12);
        assert!(!r.finds_violation(1e-12));
        let deficit = constant(3, 2.0 / 3.0);
        let r = worst_case_ratio(&deficit, &AdversaryBudget { random: 500, population: 20, rounds: 20 }, 1).unwrap();
        assert!(r.finds_violation(1e-9));
        assert!(first_best(&r.slack_witness) > 1.0);
    }

    #[test]
    fn adversary_dominates_its_random_pool() {
        let h = RedistributionFn::feasible_start(3, FeatureCombo::C1, 8).unwrap().shifted(-0.01);
        let budget = AdversaryBudget { random: 2000, population: 20, rounds: 30 };
        let adv = worst_case_ratio(&h, &budget, 9).unwrap();
        let pool = random_profiles(3, 2000, derive_seed(9, &[1]));
        let report = is_feasible(&h, &pool, 0.0);
        assert!(adv.min_slack <= report.min_slack);
        assert!(adv.alpha <= 3.0 - report.max_ratio_terms);
    }

    #[test]
    fn repair_closes_deficits() {
        let h = RedistributionFn::feasible_start(3, FeatureCombo::C1, 8).unwrap().shifted(-0.05);
        let budget = AdversaryBudget { random: 2000, population: 20, rounds: 30 };
        let (fixed, shift) = repair(&h, &budget, 2).unwrap();
        assert!(shift > 0.0 && shift < 0.06, "{shift}");
        let mut profiles = random_profiles(3, 50_000, 77);
        profiles.extend(corner_profiles(3));
        assert!(is_feasible(&fixed, &profiles, 1e-12).is_feasible());
    }

    #[test]
    fn csv_round_trip() {
        let h = RedistributionFn::feasible_start(3, FeatureCombo::C7, 4).unwrap();
        assert_eq!(RedistributionFn::from_csv(&h.to_csv()).unwrap(), h);
        assert!(RedistributionFn::from_csv("combo,n,knots\n2,3,4\n1").is_err());
    }

    #[test]
    fn degenerate_optimization_returns_start() {
        let cfg = GAConfig { rounds: 0, ..default_h_config(1) };
        let r = optimize_h(RedistObjective::Expectation, &Prior::uniform(), 3, FeatureCombo::C1, 8, &cfg).unwrap();
        assert_eq!(r.h, RedistributionFn::feasible_start(3, FeatureCombo::C1, 8).unwrap());
    }

    #[test]
    fn mechanism_is_truthful_and_weakly_balanced() {
        let u = Prior::uniform();
        for n in [2, 3, 5, 8] {
            let h = RedistributionFn::feasible_start(n, FeatureCombo::C1, 8).unwrap();
            let mech = |v: &[f64]| redist_outcome(v, &h).unwrap();
            assert!(check_sp(&mech, &u, n, 2000, 1e-9, n as u64).is_clean());
            assert!(check_budget(&mech, &u, n, 2000, n as u64).is_clean());
        }
    }

    proptest! {
        #[test]
        fn h_ignores_own_type(profile in prop::collection::vec(0.0f64..=1.0, 2..7), lie in 0.0f64..=1.0, who in 0usize..7) {
            let n = profile.len();
            let i = who % n;
            let h = RedistributionFn::feasible_start(n, FeatureCombo::C8, 4).unwrap().shifted(0.3);
            let mut other = profile.clone();
            other[i] = lie;
            prop_assert_eq!(h.per_agent(&profile)[i].to_bits(), h.per_agent(&other)[i].to_bits());
        }

        #[test]
        fn ratio_identities(profile in prop::collection::vec(0.0f64..=1.0, 3), shift in -0.5f64..0.5) {
            let h = RedistributionFn::feasible_start(3, FeatureCombo::C1, 8).unwrap().shifted(shift);
            let o = redist_outcome(&profile, &h).unwrap();
            prop_assert!((o.utilities.iter().sum::<f64>() - o.welfare).abs() < 1e-9);
            prop_assert!((o.welfare - (3.0 * o.first_best - o.total_h)).abs() < 1e-9);
            let terms = feasibility_ratio(&profile, &h);
            prop_assert!((o.ratio - (3.0 - terms)).abs() < 1e-9);
            prop_assert_eq!(o.ratio <= 1.0 + 1e-12, terms >= 2.0 - 1e-12);
        }

        #[test]
        fn permutation_permutes_transfers(profile in prop::collection::vec(0.0f64..=1.0, 4)) {
            let h = RedistributionFn::feasible_start(4, FeatureCombo::C7, 5).unwrap();
            let a = redist_outcome(&profile, &h).unwrap();
            let rev: Vec<f64> = profile.iter().rev().copied().collect();
            let b = redist_outcome(&rev, &h).unwrap();
            for i in 0..4 {
                prop_assert!((a.receive[i] - b.receive[3 - i]).abs() < 1e-12);
            }
        }
    }
}

//! Release-delay mechanisms: agents start consuming the project at a
//! release time `t_i`, and utility is `v_i (1 - t_i) - p_i`.

use rand::Rng;
use std::fmt::Write as _;
use thiserror::Error;

use crate::costshare::{largest_feasible_k, rank_agents};
use crate::mechanism::{check_sp, Outcome, DEFAULT_TOLERANCE};
use crate::numeric::{golden_section, monte_carlo_samples, stream_rng, Estimate};
use crate::priors::{Prior, PriorError};

/// Price comparisons along a sequence tolerate this much rounding.
const ORDER_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelayError {
    #[error("invalid cost-time vector: {0}")]
    InvalidVector(String),
    #[error("invalid sequential mechanism: {0}")]
    InvalidMechanism(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

pub type Result<T> = std::result::Result<T, DelayError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DelayOutcome {
    pub built: bool,
    pub release_times: Vec<f64>,
    pub payments: Vec<f64>,
}

impl DelayOutcome {
    pub fn not_built(n: usize) -> Self {
        DelayOutcome { built: false, release_times: vec![1.0; n], payments: vec![0.0; n] }
    }

    pub fn max_delay(&self) -> f64 {
        self.release_times.iter().cloned().fold(0.0, f64::max)
    }

    pub fn sum_delay(&self) -> f64 {
        self.release_times.iter().sum()
    }
}

impl Outcome for DelayOutcome {
    fn utility(&self, agent: usize, value: f64) -> f64 {
        value * (1.0 - self.release_times[agent]) - self.payments[agent]
    }

    fn budget_violation(&self) -> Option<f64> {
        let bad = if self.built {
            let negative = self.payments.iter().fold(0.0f64, |m, &p| m.max(-p));
            (self.payments.iter().sum::<f64>() - 1.0).abs().max(negative)
        } else {
            let paid: f64 = self.payments.iter().map(|p| p.abs()).sum();
            let early: f64 = self.release_times.iter().map(|t| (1.0 - t).abs()).sum();
            paid + early
        };
        (bad > DEFAULT_TOLERANCE).then_some(bad)
    }
}

/// `(max delay, sum delay)` of an outcome.
pub fn delay_objectives(outcome: &DelayOutcome) -> (f64, f64) {
    (outcome.max_delay(), outcome.sum_delay())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DelayObjective {
    Max,
    Sum,
}

impl DelayObjective {
    pub fn score(self, outcome: &DelayOutcome) -> f64 {
        match self {
            DelayObjective::Max => outcome.max_delay(),
            DelayObjective::Sum => outcome.sum_delay(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DelayObjective::Max => "max-delay",
            DelayObjective::Sum => "sum-delay",
        }
    }
}

impl std::str::FromStr for DelayObjective {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" | "max-delay" => Ok(DelayObjective::Max),
            "sum" | "sum-delay" => Ok(DelayObjective::Sum),
            other => Err(format!("unknown delay objective '{other}' (expected max-delay or sum-delay)")),
        }
    }
}

/// For each agent, whether the others' values alone admit a coalition,
/// i.e. `I(values without i) = 1`. O(n log n).
pub fn leave_one_out_feasible(values: &[f64]) -> Vec<bool> {
    let n = values.len();
    let order = rank_agents(values);
    let s: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    // prefix[p]: some k <= p has s[k-1] >= 1/k
    let mut prefix = vec![false; n];
    for p in 1..n {
        prefix[p] = prefix[p - 1] || s[p - 1] >= 1.0 / p as f64;
    }
    // suffix[p]: some k in p+1..n-1 has s[k] >= 1/k
    let mut suffix = vec![false; n];
    for p in (0..n.saturating_sub(1)).rev() {
        let k = p + 1;
        suffix[p] = (k < n && s[k] >= 1.0 / k as f64) || (p + 1 < n && suffix[p + 1]);
    }
    let mut out = vec![false; n];
    for (p, &agent) in order.iter().enumerate() {
        out[agent] = prefix[p] || suffix[p];
    }
    out
}

/// Cost-shares `[0, d_i]` among the agents via serial cost sharing on the
/// scaled values `d_i v_i`, and grants `[d_i, 1]` for free to every agent
/// whose peers alone could fund the project.
fn deadline_mechanism(values: &[f64], deadlines: &[f64]) -> DelayOutcome {
    let n = values.len();
    let scaled: Vec<f64> = values.iter().zip(deadlines).map(|(v, d)| v * d).collect();
    let order = rank_agents(&scaled);
    let sorted: Vec<f64> = order.iter().map(|&i| scaled[i]).collect();
    let k = largest_feasible_k(&sorted);
    let free = leave_one_out_feasible(&scaled);
    if k == 0 {
        // removing an agent cannot create a coalition
        debug_assert!(free.iter().all(|f| !f));
        return DelayOutcome::not_built(n);
    }
    let mut paying = vec![false; n];
    for &i in &order[..k] {
        paying[i] = true;
    }
    let share = 1.0 / k as f64;
    let mut release_times = Vec::with_capacity(n);
    let mut payments = Vec::with_capacity(n);
    for i in 0..n {
        let d = deadlines[i];
        let t = match (paying[i], free[i]) {
            (true, true) => 0.0,
            (false, true) => d,
            (true, false) => 1.0 - d,
            (false, false) => 1.0,
        };
        release_times.push(t);
        payments.push(if paying[i] { share } else { 0.0 });
    }
    DelayOutcome { built: true, release_times, payments }
}

/// Single deadline mechanism `M(d)`.
pub fn single_deadline(values: &[f64], d: f64) -> DelayOutcome {
    deadline_mechanism(values, &vec![d; values.len()])
}

/// Multiple deadline mechanism: agent `i` has deadline `d_i`.
pub fn multiple_deadline(values: &[f64], deadlines: &[f64]) -> Result<DelayOutcome> {
    if deadlines.len() != values.len() {
        return Err(DelayError::InvalidArgument(format!(
            "{} deadlines for {} agents",
            deadlines.len(),
            values.len()
        )));
    }
    if let Some(d) = deadlines.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(DelayError::InvalidArgument(format!("deadline {d} outside [0, 1]")));
    }
    Ok(deadline_mechanism(values, deadlines))
}

/// Serial cost sharing viewed as a delay mechanism (`M(1)`).
pub fn serial_cost_sharing_delay(values: &[f64]) -> DelayOutcome {
    single_deadline(values, 1.0)
}

/// Release times `T` and payments `B` offered to all agents at once.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTimeVector {
    t: Vec<f64>,
    b: Vec<f64>,
}

impl CostTimeVector {
    pub fn new(t: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(DelayError::InvalidVector(m));
        if t.len() != b.len() || t.is_empty() {
            return bad(format!("T has {} entries, B has {}", t.len(), b.len()));
        }
        for (i, (&ti, &bi)) in t.iter().zip(&b).enumerate() {
            if !(0.0..=1.0).contains(&ti) {
                return bad(format!("T_{i} = {ti} outside [0, 1]"));
            }
            if !(bi >= 0.0 && bi.is_finite()) {
                return bad(format!("B_{i} = {bi} is negative"));
            }
            if ti >= 1.0 && bi > 0.0 {
                return bad(format!("agent {i} is excluded (T = 1) but pays {bi}"));
            }
        }
        let total: f64 = b.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("payments sum to {total}, not 1"));
        }
        Ok(CostTimeVector { t, b })
    }

    /// Builds a vector after rescaling `b` to sum to one.
    pub fn normalized(t: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let total: f64 = b.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(DelayError::InvalidVector("payments cannot be normalized".into()));
        }
        let b = b.into_iter().map(|x| x / total).collect();
        CostTimeVector::new(t, b)
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn is_excluded(&self, i: usize) -> bool {
        self.t[i] >= 1.0
    }

    /// `B_i / (1 - T_i)`; infinite for an excluded agent.
    pub fn unit_price(&self, i: usize) -> f64 {
        if self.is_excluded(i) {
            f64::INFINITY
        } else {
            self.b[i] / (1.0 - self.t[i])
        }
    }

    /// Every non-excluded agent's value covers her unit price.
    pub fn accepted_by(&self, values: &[f64]) -> bool {
        (0..self.n()).all(|i| self.is_excluded(i) || values[i] >= self.unit_price(i))
    }

    pub fn l1_distance(&self, other: &CostTimeVector) -> f64 {
        let dt: f64 = self.t.iter().zip(&other.t).map(|(a, b)| (a - b).abs()).sum();
        let db: f64 = self.b.iter().zip(&other.b).map(|(a, b)| (a - b).abs()).sum();
        dt + db
    }
}

/// A sequence of cost-time vectors; the first one every agent accepts is used.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialMechanism {
    sequence: Vec<CostTimeVector>,
}

impl SequentialMechanism {
    pub fn new(sequence: Vec<CostTimeVector>) -> Result<Self> {
        let Some(first) = sequence.first() else {
            return Err(DelayError::InvalidMechanism("empty sequence".into()));
        };
        let n = first.n();
        if let Some(v) = sequence.iter().find(|v| v.n() != n) {
            return Err(DelayError::InvalidMechanism(format!("vector for {} agents in a {n}-agent mechanism", v.n())));
        }
        Ok(SequentialMechanism { sequence })
    }

    pub fn vectors(&self) -> &[CostTimeVector] {
        &self.sequence
    }

    pub fn into_vectors(self) -> Vec<CostTimeVector> {
        self.sequence
    }

    pub fn n(&self) -> usize {
        self.sequence[0].n()
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Index of the vector used for `values`, if any.
    pub fn selected(&self, values: &[f64]) -> Option<usize> {
        self.sequence.iter().position(|v| v.accepted_by(values))
    }

    /// CSV with header `T_1..T_n,B_1..B_n`, one row per vector.
    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut out = String::new();
        let header: Vec<String> = (1..=n).map(|i| format!("T_{i}")).chain((1..=n).map(|i| format!("B_{i}"))).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for v in &self.sequence {
            let row: Vec<String> = v.t.iter().chain(&v.b).map(|x| format!("{x:?}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| DelayError::InvalidMechanism("missing header".into()))?;
        let cols = header.split(',').count();
        if cols == 0 || cols % 2 != 0 {
            return Err(DelayError::InvalidMechanism(format!("header has {cols} columns")));
        }
        let n = cols / 2;
        let mut sequence = Vec::new();
        for (row, line) in lines.enumerate() {
            let xs = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| DelayError::InvalidMechanism(format!("row {}: {e}", row + 1)))?;
            if xs.len() != cols {
                return Err(DelayError::InvalidMechanism(format!("row {} has {} fields", row + 1, xs.len())));
            }
            sequence.push(CostTimeVector::new(xs[..n].to_vec(), xs[n..].to_vec())?);
        }
        SequentialMechanism::new(sequence)
    }
}

/// Runs the sequence and returns the first unanimously accepted vector's
/// release times and payments.
pub fn sequential_unanimous(values: &[f64], mech: &SequentialMechanism) -> DelayOutcome {
    match mech.selected(values) {
        Some(j) => {
            let v = &mech.sequence[j];
            DelayOutcome { built: true, release_times: v.t.clone(), payments: v.b.clone() }
        }
        None => DelayOutcome::not_built(values.len()),
    }
}

/// Serial cost sharing as a sequential mechanism: every coalition, largest
/// first, with equal shares and the rest excluded.
pub fn serial_sequence(n: usize) -> SequentialMechanism {
    assert!((1..=20).contains(&n), "serial_sequence supports 1..=20 agents");
    let mut masks: Vec<u32> = (1..1u32 << n).collect();
    masks.sort_by_key(|m| (std::cmp::Reverse(m.count_ones()), *m));
    let vectors = masks
        .into_iter()
        .map(|m| {
            let k = m.count_ones() as f64;
            let inside = |i: usize| m >> i & 1 == 1;
            let t = (0..n).map(|i| if inside(i) { 0.0 } else { 1.0 }).collect();
            let b = (0..n).map(|i| if inside(i) { 1.0 / k } else { 0.0 }).collect();
            CostTimeVector::new(t, b).expect("equal shares")
        })
        .collect();
    SequentialMechanism::new(vectors).expect("nonempty")
}

/// For every agent, unit price and release time are nondecreasing along the
/// vectors that do not exclude the agent (a sufficient condition for
/// strategy-proofness: an excluded entry's acceptance ignores the agent's report).
pub fn strict_filter(mech: &SequentialMechanism) -> bool {
    (0..mech.n()).all(|i| {
        let mut last: Option<(f64, f64)> = None;
        for v in mech.sequence.iter().filter(|v| !v.is_excluded(i)) {
            let (price, t) = (v.unit_price(i), v.t[i]);
            if let Some((p0, t0)) = last {
                if price < p0 - ORDER_TOL || t < t0 - ORDER_TOL {
                    return false;
                }
            }
            last = Some((price, t));
        }
        true
    })
}

/// Simulation test: for each sampled profile and agent, one misreport drawn
/// from the prior; fails on any gain above `1e-9`.
pub fn loose_filter(mech: &SequentialMechanism, prior: &Prior, profiles: usize, seed: u64) -> Result<bool> {
    if profiles == 0 {
        return Err(DelayError::InvalidArgument("loose filter needs at least one profile".into()));
    }
    let n = mech.n();
    let mut rng = stream_rng(seed, &[]);
    for _ in 0..profiles {
        let values = prior.sample(&mut rng, n);
        let honest = sequential_unanimous(&values, mech);
        for i in 0..n {
            let mut lie = values.clone();
            lie[i] = prior.draw(&mut rng);
            let gain = sequential_unanimous(&lie, mech).utility(i, values[i]) - honest.utility(i, values[i]);
            if gain > DEFAULT_TOLERANCE {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// SP check of a sequential mechanism with `trials` sampled deviations.
pub fn sequential_sp_survival(mech: &SequentialMechanism, prior: &Prior, trials: usize, seed: u64) -> bool {
    let run = |v: &[f64]| sequential_unanimous(v, mech);
    check_sp(&run, prior, mech.n(), trials, DEFAULT_TOLERANCE, seed).is_clean()
}

/// Monte Carlo `(max delay, sum delay)` of a delay mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub max: Estimate,
    pub sum: Estimate,
}

impl DelayEstimate {
    pub fn get(&self, objective: DelayObjective) -> Estimate {
        match objective {
            DelayObjective::Max => self.max,
            DelayObjective::Sum => self.sum,
        }
    }
}

pub fn expected_delays<M>(mech: &M, prior: &Prior, n: usize, samples: usize, seed: u64) -> DelayEstimate
where
    M: Fn(&[f64]) -> DelayOutcome + Sync,
{
    let pairs = monte_carlo_samples(samples, seed, |rng| delay_objectives(&mech(&prior.sample(rng, n))));
    let (max, sum): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    DelayEstimate { max: Estimate::from_samples(&max), sum: Estimate::from_samples(&sum) }
}

/// Exact expected max delay of serial cost sharing: `1 - P(v >= 1/n)^n`.
pub fn scs_expected_max_delay(prior: &Prior, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.0 - prior.accept_prob(1.0 / n as f64).powi(n as i32)
}

/// Delay-versus-payment ratio `r(o) = F(o) / (o (1 - F(o)))`, with `r(0) = f(0)`.
pub fn payment_ratio(prior: &Prior, o: f64) -> Result<f64> {
    if prior.is_discrete() {
        return Err(PriorError::DiscretePrior.into());
    }
    let (lo, hi) = prior.support();
    if !(o >= lo && o < hi) {
        return Err(DelayError::InvalidArgument(format!("offer {o} outside [{lo}, {hi})")));
    }
    if o == 0.0 {
        return Ok(prior.pdf(0.0)?);
    }
    Ok(prior.cdf(o) / (o * prior.reliability(o)))
}

pub const RATIO_GRID: usize = 10_000;

/// `(r*, o*)`: the minimum of `r` over `[0, 1 - 1e-6]`, by a grid search
/// refined with golden-section search.
pub fn optimal_ratio(prior: &Prior) -> Result<(f64, f64)> {
    if prior.is_discrete() {
        return Err(PriorError::DiscretePrior.into());
    }
    let top = (1.0 - 1e-6f64).min(prior.support().1 - 1e-6);
    let at = |i: usize| top * i as f64 / RATIO_GRID as f64;
    let r = |o: f64| payment_ratio(prior, o).unwrap_or(f64::INFINITY);
    let (mut best_i, mut best) = (0, f64::INFINITY);
    for i in 0..=RATIO_GRID {
        let v = r(at(i));
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let a = at(best_i.saturating_sub(1));
    let b = at((best_i + 1).min(RATIO_GRID));
    let (o, v) = golden_section(|x| r(x.max(f64::MIN_POSITIVE)), a.max(0.0), b, 1e-8);
    Ok(if v < best { (v, o) } else { (best, at(best_i)) })
}

/// Offer used in place of an optimal offer of zero.
pub const MIN_OFFER: f64 = 1e-3;

/// Deadline `d = (1 + eps) / (n o* (1 - F(o*)))`, clamped to `[0, 1]`, under
/// which the expected sum delay approaches `r* (1 + eps)` for large `n`.
pub fn asymptotic_single_deadline(prior: &Prior, n: usize, eps: f64) -> Result<f64> {
    if n == 0 {
        return Err(DelayError::InvalidArgument("need at least one agent".into()));
    }
    let (_, o) = optimal_ratio(prior)?;
    let o = o.max(MIN_OFFER);
    let d = (1.0 + eps) / (n as f64 * o * prior.reliability(o));
    Ok(d.clamp(0.0, 1.0))
}

/// Best single deadline on a uniform grid of `grid + 1` points, with common
/// random profiles for every candidate.
pub fn optimal_single_deadline(
    prior: &Prior,
    n: usize,
    objective: DelayObjective,
    grid: usize,
    samples: usize,
    seed: u64,
) -> (f64, Estimate) {
    let profiles = draw_profiles(prior, n, samples, seed);
    let mut best: Option<(f64, Estimate)> = None;
    for i in 0..=grid {
        let d = i as f64 / grid as f64;
        let e = evaluate_on(&profiles, |v| single_deadline(v, d), objective);
        if best.map_or(true, |(_, b)| e.mean < b.mean) {
            best = Some((d, e));
        }
    }
    best.expect("grid is nonempty")
}

/// Best multiple deadlines by coordinate search over the grid, started
/// from the best single deadline.
pub fn optimal_multiple_deadlines(
    prior: &Prior,
    n: usize,
    objective: DelayObjective,
    grid: usize,
    samples: usize,
    seed: u64,
) -> (Vec<f64>, Estimate) {
    let profiles = draw_profiles(prior, n, samples, seed);
    let (d0, mut best) = optimal_single_deadline(prior, n, objective, grid, samples, seed);
    let mut ds = vec![d0; n];
    for _sweep in 0..4 {
        let mut improved = false;
        for i in 0..n {
            for g in 0..=grid {
                let mut trial = ds.clone();
                trial[i] = g as f64 / grid as f64;
                let e = evaluate_on(&profiles, |v| deadline_mechanism(v, &trial), objective);
                if e.mean < best.mean - 1e-12 {
                    best = e;
                    ds = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (ds, best)
}

pub(crate) fn draw_profiles(prior: &Prior, n: usize, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, &[0x5052_4f46]);
    (0..samples).map(|_| prior.sample(&mut rng, n)).collect()
}

pub(crate) fn evaluate_on<M: Fn(&[f64]) -> DelayOutcome>(profiles: &[Vec<f64>], mech: M, objective: DelayObjective) -> Estimate {
    let xs: Vec<f64> = profiles.iter().map(|v| objective.score(&mech(v))).collect();
    Estimate::from_samples(&xs)
}

/// Random valid cost-time vector with `T_i, B_i ~ U(0, 1)`.
pub fn random_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CostTimeVector {
    loop {
        let t: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        if let Ok(v) = CostTimeVector::normalized(t, b) {
            return v;
        }
    }
}

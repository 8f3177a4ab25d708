//! Type profiles, binary outcomes, and black-box property checkers
//! (strategy-proofness, individual rationality, budget balance) that work
//! with any mechanism expressed as a pure function of the reported profile.

use rand::Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use thiserror::Error;

use crate::numeric::{monte_carlo, stream_rng, Estimate};
use crate::priors::Prior;

/// Default absolute tolerance for the exact mechanisms in this crate.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("a profile needs at least one agent")]
    Empty,
    #[error("agent {agent} value {value} outside support [{lo}, {hi}]")]
    OutOfSupport { agent: usize, value: f64, lo: f64, hi: f64 },
}

/// Reported valuations, one per agent, validated against a support.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeProfile(Vec<f64>);

impl TypeProfile {
    pub fn new(values: Vec<f64>, support: (f64, f64)) -> Result<Self, ProfileError> {
        if values.is_empty() {
            return Err(ProfileError::Empty);
        }
        for (agent, &value) in values.iter().enumerate() {
            if !(support.0..=support.1).contains(&value) {
                return Err(ProfileError::OutOfSupport { agent, value, lo: support.0, hi: support.1 });
            }
        }
        Ok(TypeProfile(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for TypeProfile {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Decision of a binary excludable mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryOutcome {
    pub built: bool,
    /// Consumer indices in ascending order.
    pub consumers: Vec<usize>,
    pub payments: Vec<f64>,
}

impl BinaryOutcome {
    pub fn not_built(n: usize) -> Self {
        BinaryOutcome { built: false, consumers: Vec::new(), payments: vec![0.0; n] }
    }

    /// Built outcome where `consumers` pay `shares` (aligned with `consumers`).
    pub fn built_with(n: usize, mut consumers: Vec<usize>, shares: &[f64]) -> Self {
        let mut payments = vec![0.0; n];
        for (&i, &s) in consumers.iter().zip(shares) {
            payments[i] = s;
        }
        consumers.sort_unstable();
        BinaryOutcome { built: true, consumers, payments }
    }

    pub fn is_consumer(&self, agent: usize) -> bool {
        self.consumers.binary_search(&agent).is_ok()
    }

    pub fn consumer_count(&self) -> usize {
        self.consumers.len()
    }
}

/// What a binary-project mechanism is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Expected number of consumers.
    Consumers,
    /// Expected total utility `sum of consumer values - 1` when built.
    Welfare,
}

impl Objective {
    /// Realized objective of `outcome` under true `values`.
    pub fn score(self, outcome: &BinaryOutcome, values: &[f64]) -> f64 {
        if !outcome.built {
            return 0.0;
        }
        match self {
            Objective::Consumers => outcome.consumer_count() as f64,
            Objective::Welfare => outcome.consumers.iter().map(|&i| values[i]).sum::<f64>() - 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Consumers => "consumers",
            Objective::Welfare => "welfare",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "consumers" => Ok(Objective::Consumers),
            "welfare" => Ok(Objective::Welfare),
            other => Err(format!("unknown objective '{other}' (expected consumers or welfare)")),
        }
    }
}

/// Monte Carlo estimate of `objective` for `mech` with `n` i.i.d. agents.
pub fn expected_objective<M>(mech: &M, prior: &Prior, n: usize, objective: Objective, samples: usize, seed: u64) -> Estimate
where
    M: Fn(&[f64]) -> BinaryOutcome + Sync,
{
    monte_carlo(samples, seed, |rng| {
        let v = prior.sample(rng, n);
        objective.score(&mech(&v), &v)
    })
}

/// Outcome types the property checkers understand.
pub trait Outcome {
    /// Utility of `agent` whose true valuation is `value`.
    fn utility(&self, agent: usize, value: f64) -> f64;

    /// Size of the budget-balance violation, or `None` if balanced.
    fn budget_violation(&self) -> Option<f64>;
}

impl Outcome for BinaryOutcome {
    fn utility(&self, agent: usize, value: f64) -> f64 {
        let consumed = if self.is_consumer(agent) { value } else { 0.0 };
        consumed - self.payments[agent]
    }

    fn budget_violation(&self) -> Option<f64> {
        let negative = self.payments.iter().fold(0.0f64, |m, &p| m.max(-p));
        if !self.built {
            let paid = self.payments.iter().map(|p| p.abs()).sum::<f64>();
            let bad = paid + if self.consumers.is_empty() { 0.0 } else { 1.0 };
            return (bad > 0.0).then_some(bad);
        }
        let freeriding = self
            .payments
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_consumer(*i))
            .map(|(_, p)| p.abs())
            .sum::<f64>();
        let gap = (self.payments.iter().sum::<f64>() - 1.0).abs();
        let bad = gap.max(freeriding).max(negative);
        (bad > DEFAULT_TOLERANCE).then_some(bad)
    }
}

/// Where agents' types come from: per-agent bounds and a sampler.
pub trait TypeSpace: Sync {
    fn agents(&self) -> usize;
    fn draw_type(&self, agent: usize, rng: &mut dyn rand::RngCore) -> f64;
    fn bounds(&self, agent: usize) -> (f64, f64);

    fn draw_profile(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        (0..self.agents()).map(|i| self.draw_type(i, rng)).collect()
    }
}

/// `n` agents with i.i.d. types from one prior.
#[derive(Debug, Clone)]
pub struct IidTypes<'a> {
    pub prior: &'a Prior,
    pub n: usize,
}

impl TypeSpace for IidTypes<'_> {
    fn agents(&self) -> usize {
        self.n
    }
    fn draw_type(&self, _agent: usize, rng: &mut dyn rand::RngCore) -> f64 {
        self.prior.draw(rng)
    }
    fn bounds(&self, _agent: usize) -> (f64, f64) {
        self.prior.support()
    }
}

/// One recorded property failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub trial: usize,
    pub agent: Option<usize>,
    pub profile: Vec<f64>,
    pub true_value: f64,
    pub misreport: Option<f64>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub trials: usize,
    pub violations: Vec<Violation>,
    pub max_gain: f64,
}

impl PropertyReport {
    fn from_violations(trials: usize, violations: Vec<Violation>) -> Self {
        let max_gain = violations.iter().fold(0.0f64, |m, v| m.max(v.gain));
        PropertyReport { trials, violations, max_gain }
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// CSV rows `trial,agent,true_value,misreport,gain` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,agent,true_value,misreport,gain\n");
        for v in &self.violations {
            let agent = v.agent.map(|a| a.to_string()).unwrap_or_default();
            let mis = v.misreport.map(|m| format!("{m:.12}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.12},{},{:.12e}", v.trial, agent, v.true_value, mis, v.gain);
        }
        out
    }
}

fn run_trials<F>(trials: usize, seed: u64, per_trial: F) -> Vec<Violation>
where
    F: Fn(usize, &mut rand_chacha::ChaCha8Rng) -> Vec<Violation> + Sync,
{
    let chunks: Vec<Vec<Violation>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, &[t as u64]);
            per_trial(t, &mut rng)
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// Strategy-proofness check over an arbitrary type space.
///
/// Each trial samples a profile and one agent, then tries a misreport drawn
/// from that agent's type distribution plus both ends of its support.
pub fn check_sp_in<T, O, M>(mech: &M, types: &T, trials: usize, tolerance: f64, seed: u64) -> PropertyReport
where
    T: TypeSpace,
    O: Outcome,
    M: Fn(&[f64]) -> O + Sync,
{
    let violations = run_trials(trials, seed, |trial, rng| {
        let profile = types.draw_profile(rng);
        let agent = rng.gen_range(0..types.agents());
        let truth = profile[agent];
        let honest = mech(&profile).utility(agent, truth);
        let (lo, hi) = types.bounds(agent);
        let candidates = [types.draw_type(agent, rng), lo, hi];
        let mut found = Vec::new();
        let mut reported = profile.clone();
        for &lie in &candidates {
            reported[agent] = lie;
            let gain = mech(&reported).utility(agent, truth) - honest;
            if gain > tolerance {
                found.push(Violation {
                    trial,
                    agent: Some(agent),
                    profile: profile.clone(),
                    true_value: truth,
                    misreport: Some(lie),
                    gain,
                });
            }
        }
        found
    });
    PropertyReport::from_violations(trials, violations)
}

/// Individual-rationality check over an arbitrary type space.
pub fn check_ir_in<T, O, M>(mech: &M, types: &T, trials: usize, tolerance: f64, seed: u64) -> PropertyReport
where
    T: TypeSpace,
    O: Outcome,
    M: Fn(&[f64]) -> O + Sync,
{
    let violations = run_trials(trials, seed, |trial, rng| {
        let profile = types.draw_profile(rng);
        let outcome = mech(&profile);
        (0..profile.len())
            .filter_map(|i| {
                let u = outcome.utility(i, profile[i]);
                (u < -tolerance).then(|| Violation {
                    trial,
                    agent: Some(i),
                    profile: profile.clone(),
                    true_value: profile[i],
                    misreport: None,
                    gain: -u,
                })
            })
            .collect()
    });
    PropertyReport::from_violations(trials, violations)
}

/// Budget-balance check over an arbitrary type space.
pub fn check_budget_in<T, O, M>(mech: &M, types: &T, trials: usize, seed: u64) -> PropertyReport
where
    T: TypeSpace,
    O: Outcome,
    M: Fn(&[f64]) -> O + Sync,
{
    let violations = run_trials(trials, seed, |trial, rng| {
        let profile = types.draw_profile(rng);
        match mech(&profile).budget_violation() {
            Some(gap) => vec![Violation {
                trial,
                agent: None,
                profile: profile.clone(),
                true_value: f64::NAN,
                misreport: None,
                gain: gap,
            }],
            None => Vec::new(),
        }
    });
    PropertyReport::from_violations(trials, violations)
}

/// Strategy-proofness check with `n` i.i.d. agents.
pub fn check_sp<O, M>(mech: &M, prior: &Prior, n: usize, trials: usize, tolerance: f64, seed: u64) -> PropertyReport
where
    O: Outcome,
    M: Fn(&[f64]) -> O + Sync,
{
    check_sp_in(mech, &IidTypes { prior, n }, trials, tolerance, seed)
}

/// Individual-rationality check with `n` i.i.d. agents.
pub fn check_ir<O, M>(mech: &M, prior: &Prior, n: usize, trials: usize, tolerance: f64, seed: u64) -> PropertyReport
where
    O: Outcome,
    M: Fn(&[f64]) -> O + Sync,
{
    check_ir_in(mech, &IidTypes { prior, n }, trials, tolerance, seed)
}

/// Budget-balance check with `n` i.i.d. agents.
pub fn check_budget<O, M>(mech: &M, prior: &Prior, n: usize, trials: usize, seed: u64) -> PropertyReport
where
    O: Outcome,
    M: Fn(&[f64]) -> O + Sync,
{
    check_budget_in(mech, &IidTypes { prior, n }, trials, seed)
}

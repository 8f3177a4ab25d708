//! Turns a config into validated library objects before any work starts.

use std::path::Path;

use pubmech::costshare::{validate_spec, CostShareSpec, CostShareVector};
use pubmech::delay::{DelayObjective, SequentialMechanism};
use pubmech::evolve::{parse_curve_tag, Curve, GAConfig};
use pubmech::market::AMASpec;
use pubmech::mechanism::Objective;
use pubmech::priors::{Family, Prior};
use pubmech::redist::{FeatureCombo, RedistObjective, RedistributionFn};

use crate::config::LoadedConfig;
use crate::error::CliError;

#[derive(Debug, Clone)]
pub enum Mechanism {
    Cec,
    Scs,
    Unanimous(CostShareVector),
    LargestUnanimous(CostShareSpec),
    ScsDelay,
    SingleDeadline(f64),
    MultipleDeadline(Vec<f64>),
    Sequence(SequentialMechanism),
    Redistribution(RedistributionFn),
    Ama(AMASpec),
    OptimalMarket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Binary,
    Delay,
    Redistribution,
    Market,
}

impl Mechanism {
    pub fn domain(&self) -> Domain {
        match self {
            Mechanism::Cec | Mechanism::Scs | Mechanism::Unanimous(_) | Mechanism::LargestUnanimous(_) => Domain::Binary,
            Mechanism::ScsDelay | Mechanism::SingleDeadline(_) | Mechanism::MultipleDeadline(_) | Mechanism::Sequence(_) => {
                Domain::Delay
            }
            Mechanism::Redistribution(_) => Domain::Redistribution,
            Mechanism::Ama(_) | Mechanism::OptimalMarket => Domain::Market,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Mechanism::Cec => "cec".into(),
            Mechanism::Scs => "scs".into(),
            Mechanism::Unanimous(_) => "unanimous".into(),
            Mechanism::LargestUnanimous(_) => "largest-unanimous".into(),
            Mechanism::ScsDelay => "scs-delay".into(),
            Mechanism::SingleDeadline(d) => format!("single-deadline:{d}"),
            Mechanism::MultipleDeadline(ds) => format!("multiple-deadline:{}", join(ds)),
            Mechanism::Sequence(m) => format!("sequence:{}", m.len()),
            Mechanism::Redistribution(h) => format!("redistribution:{}", h.combo().id()),
            Mechanism::Ama(s) => format!("ama:{}:{}", s.u_defender, s.a.kind().tag()),
            Mechanism::OptimalMarket => "optimal-market".into(),
        }
    }
}

pub fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveChoice {
    Binary(Objective),
    Delay(DelayObjective),
    Ratio,
    Revenue,
}

impl ObjectiveChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveChoice::Binary(o) => o.name(),
            ObjectiveChoice::Delay(o) => o.name(),
            ObjectiveChoice::Ratio => "ratio",
            ObjectiveChoice::Revenue => "revenue",
        }
    }
}

pub fn prior(lc: &LoadedConfig) -> Result<Prior, CliError> {
    let p = &lc.config.prior;
    let family = Family::from_name(&p.family, &p.params).map_err(|e| lc.invalid(Some("prior"), "family", e.to_string()))?;
    let built = match p.support {
        Some([lo, hi]) => Prior::with_support(family, lo, hi),
        None => Prior::new(family),
    };
    built.map_err(|e| lc.invalid(Some("prior"), if p.support.is_some() { "support" } else { "params" }, e.to_string()))
}

pub fn agents(lc: &LoadedConfig) -> Result<usize, CliError> {
    match lc.config.n {
        0 => Err(lc.invalid(None, "n", "n must be at least 1")),
        n => Ok(n),
    }
}

pub fn samples(lc: &LoadedConfig) -> Result<usize, CliError> {
    match lc.config.samples {
        0 => Err(lc.invalid(None, "samples", "samples must be positive")),
        s => Ok(s),
    }
}

pub fn trials(lc: &LoadedConfig) -> Result<usize, CliError> {
    match lc.config.trials {
        0 => Err(lc.invalid(None, "trials", "trials must be positive")),
        t => Ok(t),
    }
}

/// Reads a data file, dropping the provenance header this tool writes.
fn read_data(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    Ok(match text.strip_prefix("# config_hash=") {
        Some(rest) => rest.split_once('\n').map(|(_, body)| body.to_string()).unwrap_or_default(),
        None => text,
    })
}

pub fn mechanism(lc: &LoadedConfig) -> Result<Mechanism, CliError> {
    let m = &lc.config.mechanism;
    let n = agents(lc)?;
    let bad = |key: &str, msg: String| lc.invalid(Some("mechanism"), key, msg);
    let need_file = || m.file.as_deref().ok_or_else(|| bad("kind", format!("{} needs mechanism.file", m.kind)));
    let mech = match m.kind.as_str() {
        "cec" => Mechanism::Cec,
        "scs" => Mechanism::Scs,
        "scs-delay" => Mechanism::ScsDelay,
        "unanimous" => {
            let shares = m.shares.clone().ok_or_else(|| bad("kind", "unanimous needs mechanism.shares".into()))?;
            if shares.len() != n {
                return Err(bad("shares", format!("expected {n} shares, got {}", shares.len())));
            }
            Mechanism::Unanimous(CostShareVector::new(shares).map_err(|e| bad("shares", e.to_string()))?)
        }
        "largest-unanimous" => {
            let spec = match &m.file {
                None => CostShareSpec::equal(n),
                Some(path) => CostShareSpec::from_text(&read_data(path)?).map_err(|e| bad("file", e.to_string()))?,
            };
            if spec.n() != n {
                return Err(bad("file", format!("spec has {} agents, config n is {n}", spec.n())));
            }
            if let CostShareSpec::Table { shares, .. } = &spec {
                let violations = validate_spec(n, shares);
                if let Some(v) = violations.first() {
                    return Err(bad("file", format!("shares are not cross-monotone: {v:?}")));
                }
            }
            Mechanism::LargestUnanimous(spec)
        }
        "single-deadline" => {
            let d = m.deadline.ok_or_else(|| bad("kind", "single-deadline needs mechanism.deadline".into()))?;
            if !(0.0..=1.0).contains(&d) {
                return Err(bad("deadline", format!("deadline {d} outside [0, 1]")));
            }
            Mechanism::SingleDeadline(d)
        }
        "multiple-deadline" => {
            let ds = m.deadlines.clone().ok_or_else(|| bad("kind", "multiple-deadline needs mechanism.deadlines".into()))?;
            if ds.len() != n || ds.iter().any(|d| !(0.0..=1.0).contains(d)) {
                return Err(bad("deadlines", format!("need {n} deadlines in [0, 1]")));
            }
            Mechanism::MultipleDeadline(ds)
        }
        "sequence" => {
            let seq = SequentialMechanism::from_csv(&read_data(need_file()?)?).map_err(|e| bad("file", e.to_string()))?;
            if seq.n() != n {
                return Err(bad("file", format!("sequence has {} agents, config n is {n}", seq.n())));
            }
            Mechanism::Sequence(seq)
        }
        "redistribution" => {
            let h = RedistributionFn::from_csv(&read_data(need_file()?)?).map_err(|e| bad("file", e.to_string()))?;
            if h.n() != n {
                return Err(bad("file", format!("h is for {} agents, config n is {n}", h.n())));
            }
            Mechanism::Redistribution(h)
        }
        "ama" => {
            let spec = match (&m.file, &m.curve) {
                (Some(path), _) => {
                    let text = read_data(path)?;
                    let row = text.lines().find(|l| !l.trim().is_empty() && !l.starts_with("u_defender")).unwrap_or("");
                    AMASpec::from_csv_row(row, m.grid).map_err(|e| bad("file", e.to_string()))?
                }
                (None, Some(tag)) => {
                    let kind = parse_curve_tag(tag).map_err(|e| bad("curve", e.to_string()))?;
                    let coeffs = m.coefficients.clone().unwrap_or_else(|| Curve::zero(kind).coefficients().to_vec());
                    let a = kind.with_coefficients(coeffs).map_err(|e| bad("coefficients", e.to_string()))?;
                    AMASpec::new(m.u_defender, a, m.grid).map_err(|e| bad("u_defender", e.to_string()))?
                }
                (None, None) => AMASpec::new(m.u_defender, Curve::Polynomial(vec![0.0]), m.grid)
                    .map_err(|e| bad("u_defender", e.to_string()))?,
            };
            Mechanism::Ama(spec)
        }
        "optimal-market" => {
            if m.grid == 0 {
                return Err(bad("grid", "grid must be at least 1".into()));
            }
            Mechanism::OptimalMarket
        }
        other => return Err(bad("kind", format!("unknown mechanism '{other}'"))),
    };
    Ok(mech)
}

pub fn objective(lc: &LoadedConfig, domain: Domain) -> Result<ObjectiveChoice, CliError> {
    let chosen = lc.config.objective.as_deref();
    let bad = |msg: String| lc.invalid(None, "objective", msg);
    Ok(match domain {
        Domain::Binary => ObjectiveChoice::Binary(chosen.unwrap_or("consumers").parse().map_err(bad)?),
        Domain::Delay => ObjectiveChoice::Delay(chosen.unwrap_or("sum-delay").parse().map_err(bad)?),
        Domain::Redistribution => match chosen.unwrap_or("ratio") {
            "ratio" => ObjectiveChoice::Ratio,
            o => return Err(bad(format!("redistribution is scored by 'ratio', not '{o}'"))),
        },
        Domain::Market => match chosen.unwrap_or("revenue") {
            "revenue" => ObjectiveChoice::Revenue,
            o => return Err(bad(format!("market mechanisms are scored by 'revenue', not '{o}'"))),
        },
    })
}

pub fn dp_objective(lc: &LoadedConfig) -> Result<Objective, CliError> {
    objective(lc, Domain::Binary).map(|o| match o {
        ObjectiveChoice::Binary(o) => o,
        _ => unreachable!("binary domain"),
    })
}

pub fn delay_objective(lc: &LoadedConfig) -> Result<DelayObjective, CliError> {
    objective(lc, Domain::Delay).map(|o| match o {
        ObjectiveChoice::Delay(o) => o,
        _ => unreachable!("delay domain"),
    })
}

/// Applies `[ga]` overrides to a default GA configuration.
pub fn ga(lc: &LoadedConfig, base: GAConfig) -> Result<GAConfig, CliError> {
    let g = &lc.config.ga;
    let cfg = GAConfig {
        population: g.population.unwrap_or(base.population),
        elite: g.elite.unwrap_or(base.elite),
        rounds: g.rounds.unwrap_or(base.rounds),
        fitness_profiles: g.fitness_profiles.unwrap_or(base.fitness_profiles),
        holdout_profiles: g.holdout_profiles.unwrap_or(base.holdout_profiles),
        mutation_prob: g.mutation_prob.unwrap_or(base.mutation_prob),
        mutation_delta: g.mutation_delta.unwrap_or(base.mutation_delta),
        ..base
    };
    cfg.validate().map_err(|e| lc.invalid(Some("ga"), "population", e.to_string()))?;
    Ok(cfg)
}

pub fn combo(lc: &LoadedConfig) -> Result<FeatureCombo, CliError> {
    lc.config.ga.combo.parse().map_err(|e: String| lc.invalid(Some("ga"), "combo", e))
}

pub fn redist_objective(lc: &LoadedConfig) -> Result<RedistObjective, CliError> {
    lc.config.ga.redist_objective.parse().map_err(|e: String| lc.invalid(Some("ga"), "redist_objective", e))
}

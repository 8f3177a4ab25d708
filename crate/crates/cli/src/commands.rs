//! `evaluate`, `solve-dp`, `evolve` and `check`.

use std::fmt::Write as _;

use pubmech::costshare::{conservative_equal_cost, largest_unanimous, serial_cost_sharing, unanimous};
use pubmech::delay::{
    expected_delays, multiple_deadline, sequential_unanimous, serial_cost_sharing_delay, single_deadline, DelayOutcome,
};
use pubmech::dp::{excludable_upper_bound, one_directional_offers, optimal_unanimous, Discretization};
use pubmech::evolve::{evolve_sequences, parse_curve_tag, GAConfig, SequenceFilter};
use pubmech::market::{
    ama_expected_revenue, ama_outcome, optimal_outcome_on, optimal_revenue, optimize_ama, MarketTypeSpace, MarketTypes,
};
use pubmech::mechanism::{
    check_budget, check_budget_in, check_ir, check_ir_in, check_sp, check_sp_in, expected_objective, BinaryOutcome,
    PropertyReport, DEFAULT_TOLERANCE,
};
use pubmech::numeric::{derive_seed, Estimate};
use pubmech::priors::Prior;
use pubmech::redist::{
    default_h_config, expected_ratio_terms, optimize_h, redist_outcome, worst_case_ratio, AdversaryBudget,
};

use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::resolve::{self, join, Domain, Mechanism, ObjectiveChoice};

/// A CSV file produced by a command, without the provenance header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub body: String,
}

impl Artifact {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Artifact { name: name.into(), body: body.into() }
    }
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub summary: Vec<String>,
    /// Total property violations (`check` only).
    pub violations: usize,
}

pub fn prior_label(lc: &LoadedConfig) -> String {
    let p = &lc.config.prior;
    format!("{}({})", p.family, join(&p.params))
}

pub fn fmt_estimate(e: &Estimate) -> String {
    format!("{:.6},{:.6}", e.mean, e.stderr)
}

type BinaryFn<'a> = Box<dyn Fn(&[f64]) -> BinaryOutcome + Sync + 'a>;
type DelayFn<'a> = Box<dyn Fn(&[f64]) -> DelayOutcome + Sync + 'a>;

fn binary_fn(m: &Mechanism) -> BinaryFn<'_> {
    match m {
        Mechanism::Cec => Box::new(conservative_equal_cost),
        Mechanism::Scs => Box::new(serial_cost_sharing),
        Mechanism::Unanimous(s) => Box::new(move |v| unanimous(v, s).expect("length checked at load")),
        Mechanism::LargestUnanimous(spec) => Box::new(move |v| largest_unanimous(v, spec)),
        _ => unreachable!("not a cost-sharing mechanism"),
    }
}

fn delay_fn(m: &Mechanism) -> DelayFn<'_> {
    match m {
        Mechanism::ScsDelay => Box::new(serial_cost_sharing_delay),
        Mechanism::SingleDeadline(d) => Box::new(move |v| single_deadline(v, *d)),
        Mechanism::MultipleDeadline(ds) => Box::new(move |v| multiple_deadline(v, ds).expect("length checked at load")),
        Mechanism::Sequence(seq) => Box::new(move |v| sequential_unanimous(v, seq)),
        _ => unreachable!("not a release-delay mechanism"),
    }
}

fn with_kind(lc: &LoadedConfig, kind: Option<&str>) -> LoadedConfig {
    let mut lc = lc.clone();
    if let Some(k) = kind {
        lc.config.mechanism.kind = k.to_string();
    }
    lc
}

pub fn evaluate(lc: &LoadedConfig, kind: Option<&str>) -> Result<RunOutput, CliError> {
    let lc = with_kind(lc, kind);
    let mech = resolve::mechanism(&lc)?;
    let objective = resolve::objective(&lc, mech.domain())?;
    let samples = resolve::samples(&lc)?;
    let prior = resolve::prior(&lc)?;
    let n = lc.config.n;
    let seed = lc.config.seed;
    let estimate = match (&mech, objective) {
        (_, ObjectiveChoice::Binary(o)) => expected_objective(&binary_fn(&mech), &prior, n, o, samples, seed),
        (_, ObjectiveChoice::Delay(o)) => expected_delays(&delay_fn(&mech), &prior, n, samples, seed).get(o),
        (Mechanism::Redistribution(h), _) => expected_ratio_terms(h, &prior, samples, seed),
        (Mechanism::Ama(spec), _) => ama_expected_revenue(spec, samples, seed)?,
        (Mechanism::OptimalMarket, _) => optimal_revenue(samples, lc.config.mechanism.grid, seed)?,
        _ => unreachable!("objective matches domain"),
    };
    let (prior_col, n_col) = match mech.domain() {
        Domain::Market => ("market".to_string(), 2),
        _ => (prior_label(&lc), n),
    };
    let body = format!(
        "mechanism,prior,n,objective,samples,mean,stderr\n{},{prior_col},{n_col},{},{samples},{}\n",
        mech.label(),
        objective.name(),
        fmt_estimate(&estimate)
    );
    Ok(RunOutput {
        summary: vec![format!("{} {} = {:.6} ± {:.6}", mech.label(), objective.name(), estimate.mean, estimate.stderr)],
        artifacts: vec![Artifact::new("evaluate.csv", body)],
        violations: 0,
    })
}

pub fn solve_dp(lc: &LoadedConfig) -> Result<RunOutput, CliError> {
    let prior = resolve::prior(lc)?;
    let n = resolve::agents(lc)?;
    let objective = resolve::dp_objective(lc)?;
    let d = &lc.config.dp;
    let disc = Discretization::new(d.h, d.u_levels.unwrap_or(d.h), objective)
        .map_err(|e| lc.invalid(Some("dp"), "h", e.to_string()))?;
    let result = match d.solver.as_str() {
        "unanimous" => optimal_unanimous(&prior, n, &disc)?,
        "upper-bound" => excludable_upper_bound(&prior, n, &disc)?,
        "one-directional" => one_directional_offers(&prior, n, &disc)?,
        other => return Err(lc.invalid(Some("dp"), "solver", format!("unknown solver '{other}'"))),
    };
    let body = format!(
        "solver,prior,n,objective,h,u_levels,value,policy\n{},{},{n},{},{},{},{:.6},{}\n",
        d.solver,
        prior_label(lc),
        objective.name(),
        disc.h,
        disc.u_levels,
        result.value,
        join(&result.policy)
    );
    Ok(RunOutput {
        summary: vec![format!("{} {} n={n}: {:.6}", d.solver, objective.name(), result.value)],
        artifacts: vec![Artifact::new("dp.csv", body)],
        violations: 0,
    })
}

pub fn evolve(lc: &LoadedConfig) -> Result<RunOutput, CliError> {
    let g = &lc.config.ga;
    let seed = lc.config.seed;
    match g.target.as_str() {
        "sequences" => {
            let prior = resolve::prior(lc)?;
            let n = resolve::agents(lc)?;
            let objective = resolve::delay_objective(lc)?;
            let filter = match g.filter.as_str() {
                "strict" => SequenceFilter::Strict,
                "loose" if g.loose_profiles > 0 => SequenceFilter::Loose { profiles: g.loose_profiles },
                "loose" => return Err(lc.invalid(Some("ga"), "loose_profiles", "loose_profiles must be positive")),
                other => return Err(lc.invalid(Some("ga"), "filter", format!("unknown filter '{other}'"))),
            };
            let cfg = resolve::ga(lc, GAConfig::sequences(seed))?;
            let r = evolve_sequences(&prior, n, objective, filter, &cfg)?;
            let survival = r.survival_rate().map(|s| format!("{s:.4}")).unwrap_or_default();
            let body = format!(
                "target,filter,prior,n,objective,value,vectors,survival\nsequences,{},{},{n},{},{:.6},{},{survival}\n",
                g.filter,
                prior_label(lc),
                objective.name(),
                r.value,
                r.best.len()
            );
            Ok(RunOutput {
                summary: vec![format!("best {} ({} vectors): {:.6}", objective.name(), r.best.len(), r.value)],
                artifacts: vec![
                    Artifact::new("evolve.csv", body),
                    Artifact::new("evolve_best.csv", r.best.to_csv()),
                    Artifact::new("evolve_trace.csv", pubmech::evolve::trace_csv(&r.trace)),
                ],
                violations: 0,
            })
        }
        "curves" => {
            let kind = parse_curve_tag(&g.curve).map_err(|e| lc.invalid(Some("ga"), "curve", e.to_string()))?;
            if g.weights.is_empty() || g.weights.iter().any(|w| !(*w > 0.0)) {
                return Err(lc.invalid(Some("ga"), "weights", "weights must be a nonempty list of positive numbers"));
            }
            let cfg = resolve::ga(lc, GAConfig::curves(seed))?;
            let r = optimize_ama(kind, &g.weights, &cfg)?;
            let body = format!(
                "target,curve,u_defender,samples,mean,stderr\ncurves,{},{},{},{}\n",
                kind.tag(),
                r.spec.u_defender,
                r.revenue.samples,
                fmt_estimate(&r.revenue)
            );
            Ok(RunOutput {
                summary: vec![format!("{} (u_defender={}): revenue {:.4}", kind.tag(), r.spec.u_defender, r.revenue.mean)],
                artifacts: vec![
                    Artifact::new("evolve.csv", body),
                    Artifact::new("evolve_best.csv", format!("u_defender,tag,coefficients\n{}\n", r.spec.to_csv_row())),
                    Artifact::new("evolve_weights.csv", r.weights_csv()),
                    Artifact::new("evolve_trace.csv", r.trace_csv()),
                ],
                violations: 0,
            })
        }
        "redistribution" => {
            let prior = resolve::prior(lc)?;
            let n = resolve::agents(lc)?;
            if n < 2 {
                return Err(lc.invalid(None, "n", "redistribution needs at least 2 agents"));
            }
            let combo = resolve::combo(lc)?;
            let objective = resolve::redist_objective(lc)?;
            let cfg = resolve::ga(lc, default_h_config(seed))?;
            let r = optimize_h(objective, &prior, n, combo, g.knots, &cfg)
                .map_err(|e| lc.invalid(Some("ga"), "knots", e.to_string()))?;
            let e = expected_ratio_terms(&r.h, &prior, cfg.holdout_profiles, derive_seed(seed, &[0x4556]));
            let adv = worst_case_ratio(&r.h, &AdversaryBudget::default(), derive_seed(seed, &[0x4144]))?;
            let body = format!(
                "target,combo,knots,n,objective,expected_ratio,stderr,worst_case_alpha,min_slack,repair_shift\n\
                 redistribution,{},{},{n},{},{},{:.6},{:.3e},{:.3e}\n",
                combo.id(),
                g.knots,
                g.redist_objective,
                fmt_estimate(&e),
                adv.alpha,
                adv.min_slack,
                r.repair_shift
            );
            Ok(RunOutput {
                summary: vec![format!("E[Σh/S] = {:.6}, worst-case ratio {:.4}", e.mean, adv.alpha)],
                artifacts: vec![
                    Artifact::new("evolve.csv", body),
                    Artifact::new("evolve_best.csv", r.h.to_csv()),
                    Artifact::new("evolve_trace.csv", r.trace_csv()),
                ],
                violations: 0,
            })
        }
        other => Err(lc.invalid(Some("ga"), "target", format!("unknown target '{other}'"))),
    }
}

/// Runs every property that applies to the mechanism. The caller turns a
/// nonzero violation count into exit code 2.
pub fn check(lc: &LoadedConfig, kind: Option<&str>) -> Result<RunOutput, CliError> {
    let lc = with_kind(lc, kind);
    let mech = resolve::mechanism(&lc)?;
    let prior = resolve::prior(&lc)?;
    let trials = resolve::trials(&lc)?;
    let n = lc.config.n;
    let seed = lc.config.seed;
    let s = |k: u64| derive_seed(seed, &[k]);
    let tol = |default: f64| lc.config.tolerance.unwrap_or(default);
    let reports: Vec<(&str, f64, PropertyReport)> = match mech.domain() {
        Domain::Binary => {
            let f = binary_fn(&mech);
            run_iid(&f, &prior, n, trials, tol(DEFAULT_TOLERANCE), seed)
        }
        Domain::Delay => {
            let f = delay_fn(&mech);
            run_iid(&f, &prior, n, trials, tol(DEFAULT_TOLERANCE), seed)
        }
        Domain::Redistribution => {
            let Mechanism::Redistribution(h) = &mech else { unreachable!() };
            let f = |v: &[f64]| redist_outcome(v, h).expect("length checked at load");
            let t = tol(DEFAULT_TOLERANCE);
            vec![("sp", t, check_sp(&f, &prior, n, trials, t, s(1))), ("budget", DEFAULT_TOLERANCE, check_budget(&f, &prior, n, trials, s(3)))]
        }
        Domain::Market => match &mech {
            Mechanism::Ama(spec) => {
                let f = |v: &[f64]| ama_outcome(MarketTypes { theta_o: v[0], theta_d: v[1] }, spec);
                let t = tol(1e-6);
                vec![
                    ("sp", t, check_sp_in(&f, &MarketTypeSpace, trials, t, s(1))),
                    ("budget", 0.0, check_budget_in(&f, &MarketTypeSpace, trials, s(3))),
                ]
            }
            _ => {
                let grid = lc.config.mechanism.grid;
                let f = |v: &[f64]| optimal_outcome_on(MarketTypes { theta_o: v[0], theta_d: v[1] }, grid);
                // threshold payments use a 400-point quadrature of a step function
                let t = tol(0.51);
                vec![
                    ("sp", t, check_sp_in(&f, &MarketTypeSpace, trials, t, s(1))),
                    ("ir", t, check_ir_in(&f, &MarketTypeSpace, trials, t, s(2))),
                    ("budget", 0.0, check_budget_in(&f, &MarketTypeSpace, trials, s(3))),
                ]
            }
        },
    };
    let n_col = if mech.domain() == Domain::Market { 2 } else { n };
    let mut body = String::from("mechanism,n,property,trials,tolerance,violations,max_gain\n");
    let mut witnesses = String::from("property,trial,agent,true_value,misreport,gain\n");
    let mut summary = Vec::new();
    let mut total = 0;
    for (name, t, r) in &reports {
        let _ = writeln!(body, "{},{n_col},{name},{},{t:e},{},{:.3e}", mech.label(), r.trials, r.violations.len(), r.max_gain);
        for line in r.to_csv().lines().skip(1) {
            let _ = writeln!(witnesses, "{name},{line}");
        }
        summary.push(format!("{name}: {} violation(s) in {} trials", r.violations.len(), r.trials));
        total += r.violations.len();
    }
    Ok(RunOutput {
        artifacts: vec![Artifact::new("check.csv", body), Artifact::new("check_violations.csv", witnesses)],
        summary,
        violations: total,
    })
}

fn run_iid<O, M>(f: &M, prior: &Prior, n: usize, trials: usize, t: f64, seed: u64) -> Vec<(&'static str, f64, PropertyReport)>
where
    O: pubmech::mechanism::Outcome,
    M: Fn(&[f64]) -> O + Sync,
{
    let s = |k: u64| derive_seed(seed, &[k]);
    vec![
        ("sp", t, check_sp(f, prior, n, trials, t, s(1))),
        ("ir", t, check_ir(f, prior, n, trials, t, s(2))),
        ("budget", DEFAULT_TOLERANCE, check_budget(f, prior, n, trials, s(3))),
    ]
}

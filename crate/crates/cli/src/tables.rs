//! Named reproduction presets. Settings are fixed per preset; the config
//! supplies the seed, `samples`, `dp.h`/`dp.u_levels` and `[ga]` overrides.

use std::fmt::Write as _;

use pubmech::costshare::{conservative_equal_cost, serial_cost_sharing};
use pubmech::delay::{
    expected_delays, multiple_deadline, optimal_multiple_deadlines, optimal_single_deadline, sequential_unanimous,
    serial_cost_sharing_delay, single_deadline, DelayObjective,
};
use pubmech::dp::{excludable_upper_bound, optimal_unanimous, Discretization};
use pubmech::evolve::{evolve_sequences, parse_curve_tag, GAConfig, SequenceFilter};
use pubmech::market::{ama_expected_revenue, optimal_revenue, optimize_ama, AMASpec, DEFENDER_WEIGHTS, EVAL_GRID};
use pubmech::mechanism::{expected_objective, Objective};
use pubmech::numeric::derive_seed;
use pubmech::priors::{Family, Prior};
use pubmech::redist::{
    corner_profiles, default_h_config, expected_ratio_terms, is_feasible, optimize_h, random_profiles,
    worst_case_ratio, AdversaryBudget, RedistObjective, RedistributionFn,
};

use crate::commands::{fmt_estimate, Artifact, RunOutput};
use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::resolve::{self, join};

pub const PRESETS: [&str; 5] = ["ch3-twopeak", "ch3-ub", "ch4-delays", "ch5-expectation", "ch6-revenue"];

/// Profiles scanned when counting budget violations.
const FEASIBILITY_PROFILES: usize = 100_000;
/// Profiles used to pick deadlines; the reported value uses fresh ones.
const DEADLINE_SEARCH_PROFILES: usize = 20_000;
const DEADLINE_GRID: usize = 100;

fn prior(family: Family) -> Prior {
    Prior::new(family).expect("preset priors are valid")
}

fn label(family: &Family) -> String {
    format!("{}({})", family.name(), join(&family.params()))
}

fn disc(lc: &LoadedConfig, objective: Objective) -> Result<Discretization, CliError> {
    let d = &lc.config.dp;
    Discretization::new(d.h, d.u_levels.unwrap_or(d.h), objective).map_err(|e| lc.invalid(Some("dp"), "h", e.to_string()))
}

pub fn run(lc: &LoadedConfig, preset: &str) -> Result<RunOutput, CliError> {
    let body = match preset {
        "ch3-twopeak" => ch3_twopeak(lc)?,
        "ch3-ub" => ch3_ub(lc)?,
        "ch4-delays" => ch4_delays(lc)?,
        "ch5-expectation" => ch5_expectation(lc)?,
        "ch6-revenue" => ch6_revenue(lc)?,
        other => {
            return Err(CliError::config(
                "table".into(),
                None,
                format!("unknown preset '{other}'; expected one of {}", PRESETS.join(", ")),
            ))
        }
    };
    let summary = body.lines().map(str::to_string).collect();
    Ok(RunOutput { artifacts: vec![Artifact::new(format!("{preset}.csv"), body)], summary, violations: 0 })
}

/// Optimal unanimous DP against conservative equal costs on a two-peak prior.
fn ch3_twopeak(lc: &LoadedConfig) -> Result<String, CliError> {
    let family = Family::TwoPeak { mean1: 0.1, sd1: 0.1, mean2: 0.9, sd2: 0.1, weight: 0.5 };
    let p = prior(family.clone());
    let samples = resolve::samples(lc)?;
    let mut out = String::from("prior,n,objective,dp_optimal,cec_mean,cec_stderr\n");
    for (i, n) in [3usize, 5].into_iter().enumerate() {
        for (j, objective) in [Objective::Consumers, Objective::Welfare].into_iter().enumerate() {
            let dp = optimal_unanimous(&p, n, &disc(lc, objective)?)?;
            let seed = derive_seed(lc.config.seed, &[i as u64, j as u64]);
            let cec = expected_objective(&conservative_equal_cost, &p, n, objective, samples, seed);
            let _ = writeln!(out, "{},{n},{},{:.6},{}", label(&family), objective.name(), dp.value, fmt_estimate(&cec));
        }
    }
    Ok(out)
}

/// Excludable upper bound against serial cost sharing.
fn ch3_ub(lc: &LoadedConfig) -> Result<String, CliError> {
    let samples = resolve::samples(lc)?;
    let rows = [
        (Family::Uniform { lo: 0.0, hi: 1.0 }, 5usize),
        (Family::Uniform { lo: 0.0, hi: 1.0 }, 10),
        (Family::TruncatedNormal { mean: 0.5, sd: 0.1 }, 5),
    ];
    let mut out = String::from("prior,n,objective,upper_bound,scs_mean,scs_stderr\n");
    for (i, (family, n)) in rows.into_iter().enumerate() {
        let p = prior(family.clone());
        for (j, objective) in [Objective::Consumers, Objective::Welfare].into_iter().enumerate() {
            let ub = excludable_upper_bound(&p, n, &disc(lc, objective)?)?;
            let seed = derive_seed(lc.config.seed, &[i as u64, j as u64]);
            let scs = expected_objective(&serial_cost_sharing, &p, n, objective, samples, seed);
            let _ = writeln!(out, "{},{n},{},{:.6},{}", label(&family), objective.name(), ub.value, fmt_estimate(&scs));
        }
    }
    Ok(out)
}

/// Release-delay mechanisms for three agents: serial cost sharing, the best
/// single and multiple deadlines, and the strictly filtered GA.
fn ch4_delays(lc: &LoadedConfig) -> Result<String, CliError> {
    const N: usize = 3;
    let samples = resolve::samples(lc)?;
    let families = [
        Family::Uniform { lo: 0.0, hi: 1.0 },
        Family::Beta { alpha: 0.5, beta: 0.5 },
        Family::TwoPoint { low: 0.0, high: 1.0, p_low: 0.5 },
        Family::TwoPoint { low: 0.0, high: 0.8, p_low: 0.5 },
    ];
    let mut out = String::from("prior,n,objective,mechanism,parameter,mean,stderr\n");
    for (i, family) in families.iter().enumerate() {
        let p = prior(family.clone());
        for (j, objective) in [DelayObjective::Sum, DelayObjective::Max].into_iter().enumerate() {
            let seed = |k: u64| derive_seed(lc.config.seed, &[i as u64, j as u64, k]);
            let eval = seed(0);
            let mut row = |mech: &str, param: String, e: pubmech::numeric::Estimate| {
                let _ = writeln!(out, "{},{N},{},{mech},{param},{}", label(family), objective.name(), fmt_estimate(&e));
            };
            let scs = expected_delays(&serial_cost_sharing_delay, &p, N, samples, eval).get(objective);
            row("scs", String::new(), scs);
            let (d, _) = optimal_single_deadline(&p, N, objective, DEADLINE_GRID, DEADLINE_SEARCH_PROFILES, seed(1));
            let single = expected_delays(&|v: &[f64]| single_deadline(v, d), &p, N, samples, eval).get(objective);
            row("single-deadline", d.to_string(), single);
            let (ds, _) = optimal_multiple_deadlines(&p, N, objective, DEADLINE_GRID, DEADLINE_SEARCH_PROFILES, seed(1));
            let multi = expected_delays(&|v: &[f64]| multiple_deadline(v, &ds).expect("n deadlines"), &p, N, samples, eval)
                .get(objective);
            row("multiple-deadline", join(&ds), multi);
            let cfg = resolve::ga(lc, GAConfig::sequences(seed(2)))?;
            let ga = evolve_sequences(&p, N, objective, SequenceFilter::Strict, &cfg)?;
            let tga = expected_delays(&|v: &[f64]| sequential_unanimous(v, &ga.best), &p, N, samples, eval).get(objective);
            row("tga", format!("{} vectors", ga.best.len()), tga);
        }
    }
    Ok(out)
}

/// Redistribution for three uniform agents: the feasible starting function
/// against the optimized one.
fn ch5_expectation(lc: &LoadedConfig) -> Result<String, CliError> {
    const N: usize = 3;
    let p = Prior::uniform();
    let combo = resolve::combo(lc)?;
    let knots = lc.config.ga.knots;
    let seed = lc.config.seed;
    let cfg = resolve::ga(lc, default_h_config(derive_seed(seed, &[1])))?;
    let start = RedistributionFn::feasible_start(N, combo, knots).map_err(|e| lc.invalid(Some("ga"), "knots", e.to_string()))?;
    let opt = optimize_h(RedistObjective::Expectation, &p, N, combo, knots, &cfg)?;
    let mut scan = corner_profiles(N);
    scan.extend(random_profiles(N, FEASIBILITY_PROFILES, derive_seed(seed, &[2])));
    let mut out = String::from("mechanism,n,combo,knots,expected_ratio,stderr,worst_case_alpha,violations,profiles\n");
    for (name, h) in [("feasible-start", &start), ("optimized", &opt.h)] {
        let e = expected_ratio_terms(h, &p, FEASIBILITY_PROFILES, derive_seed(seed, &[3]));
        let adv = worst_case_ratio(h, &AdversaryBudget::default(), derive_seed(seed, &[4]))?;
        let mut profiles = scan.clone();
        profiles.push(adv.slack_witness.clone());
        profiles.push(adv.alpha_witness.clone());
        let report = is_feasible(h, &profiles, 1e-9);
        let _ = writeln!(
            out,
            "{name},{N},{},{knots},{},{:.6},{},{}",
            combo.id(),
            fmt_estimate(&e),
            adv.alpha,
            report.violations.len(),
            report.profiles
        );
    }
    Ok(out)
}

/// Market revenue: optimal mechanism, VCG and evolved AMAs.
fn ch6_revenue(lc: &LoadedConfig) -> Result<String, CliError> {
    let seed = lc.config.seed;
    let base = resolve::ga(lc, GAConfig::curves(seed))?;
    let samples = base.holdout_profiles;
    let eval_seed = derive_seed(seed, &[0x4556]);
    let mut out = String::from("mechanism,u_defender,samples,mean,stderr\n");
    let opt = optimal_revenue(samples, EVAL_GRID, eval_seed)?;
    let _ = writeln!(out, "optimal,,{samples},{}", fmt_estimate(&opt));
    let vcg = ama_expected_revenue(&AMASpec::vcg(EVAL_GRID), samples, eval_seed)?;
    let _ = writeln!(out, "vcg,1,{samples},{}", fmt_estimate(&vcg));
    for (i, tag) in ["piecewise-50", "fourier-30-2", "fourier-5-2", "polynomial-4"].into_iter().enumerate() {
        let kind = parse_curve_tag(tag)?;
        let cfg = GAConfig { seed: derive_seed(seed, &[i as u64]), ..base.clone() };
        let r = optimize_ama(kind, &DEFENDER_WEIGHTS, &cfg)?;
        let _ = writeln!(out, "ama:{tag},{},{},{}", r.spec.u_defender, r.revenue.samples, fmt_estimate(&r.revenue));
    }
    Ok(out)
}

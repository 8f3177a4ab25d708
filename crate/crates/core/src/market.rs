//! The zero-day exploit market with one offender and one defender: affine
//! maximizer auctions (AMA) over a grid of ending times, the revenue-optimal
//! mechanism, and revenue estimation.

use rand::Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use thiserror::Error;

use crate::evolve::{evolve, trace_csv, Curve, CurveCodec, CurveKind, EvolveError, GAConfig, TraceRow};
use crate::mechanism::{Outcome, TypeSpace};
use crate::numeric::{derive_seed, stream_rng, Estimate};

pub const THETA_O_MAX: f64 = 400.0;
pub const THETA_D_MAX: f64 = 15.0;
/// Ending-time grid used for evaluation.
pub const EVAL_GRID: usize = 1000;
/// Ending-time grid used inside GA fitness.
pub const FITNESS_GRID: usize = 100;
/// Points in the threshold-payment integral.
pub const PAYMENT_POINTS: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("invalid market types: {0}")]
    InvalidTypes(String),
    #[error("invalid AMA spec: {0}")]
    InvalidSpec(String),
    #[error("sample count must be positive")]
    NoSamples,
    #[error(transparent)]
    Evolve(#[from] EvolveError),
}

pub type Result<T> = std::result::Result<T, MarketError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketTypes {
    pub theta_o: f64,
    pub theta_d: f64,
}

impl MarketTypes {
    pub fn new(theta_o: f64, theta_d: f64) -> Result<Self> {
        if !(theta_o >= 0.0 && theta_d >= 0.0 && theta_o.is_finite() && theta_d.is_finite()) {
            return Err(MarketError::InvalidTypes(format!("({theta_o}, {theta_d}) must be finite and nonnegative")));
        }
        Ok(MarketTypes { theta_o, theta_d })
    }
}

/// Offender's time profile `t − t²/2`.
fn offender_share(t: f64) -> f64 {
    t - t * t / 2.0
}

/// Defender's time profile `(1 − t²)/2`.
fn defender_share(t: f64) -> f64 {
    (1.0 - t * t) / 2.0
}

/// `∫₀ᵗ θ_O (1 − x) dx`.
pub fn offender_value(theta_o: f64, t_end: f64) -> f64 {
    theta_o * offender_share(t_end)
}

/// `∫ₜ¹ θ_D x dx`.
pub fn defender_value(theta_d: f64, t_end: f64) -> f64 {
    theta_d * defender_share(t_end)
}

/// Valuations when several offenders and defenders hold the exploit. Each
/// buyer is `(θ, t_i)` with `t_i` the time it obtains the exploit; the
/// market ends at the earliest defender time (1 if there is none).
/// Returns `(t_end, offender values, defender values)`.
pub fn multi_buyer_values(offenders: &[(f64, f64)], defenders: &[(f64, f64)]) -> (f64, Vec<f64>, Vec<f64>) {
    let t_end = defenders.iter().map(|d| d.1).fold(1.0, f64::min);
    let off = offenders
        .iter()
        .map(|&(theta, t)| if t < t_end { offender_value(theta, t_end) - offender_value(theta, t) } else { 0.0 })
        .collect();
    let def = defenders.iter().map(|&(theta, t)| defender_value(theta, t.max(t_end))).collect();
    (t_end, off, def)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketOutcome {
    pub t_end: f64,
    pub p_offender: f64,
    pub p_defender: f64,
}

impl MarketOutcome {
    pub fn revenue(&self) -> f64 {
        self.p_offender + self.p_defender
    }
}

impl Outcome for MarketOutcome {
    /// Agent 0 is the offender, agent 1 the defender.
    fn utility(&self, agent: usize, value: f64) -> f64 {
        match agent {
            0 => offender_value(value, self.t_end) - self.p_offender,
            _ => defender_value(value, self.t_end) - self.p_defender,
        }
    }

    /// Negative payments are the only budget failure in this market.
    fn budget_violation(&self) -> Option<f64> {
        let worst = self.p_offender.min(self.p_defender);
        (worst < 0.0).then_some(-worst)
    }
}

/// Offender on `[0, 400]`, defender on `[0, 15]`, both uniform.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarketTypeSpace;

impl TypeSpace for MarketTypeSpace {
    fn agents(&self) -> usize {
        2
    }
    fn draw_type(&self, agent: usize, rng: &mut dyn rand::RngCore) -> f64 {
        rng.gen::<f64>() * if agent == 0 { THETA_O_MAX } else { THETA_D_MAX }
    }
    fn bounds(&self, agent: usize) -> (f64, f64) {
        (0.0, if agent == 0 { THETA_O_MAX } else { THETA_D_MAX })
    }
}

/// AMA with offender weight 1: picks the grid time maximizing
/// `v_O(t) + u_D·v_D(t) + a(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AMASpec {
    pub u_defender: f64,
    pub a: Curve,
    pub k: usize,
}

impl AMASpec {
    pub fn new(u_defender: f64, a: Curve, k: usize) -> Result<Self> {
        if !(u_defender > 0.0 && u_defender.is_finite()) {
            return Err(MarketError::InvalidSpec(format!("u_defender must be positive, got {u_defender}")));
        }
        if k == 0 {
            return Err(MarketError::InvalidSpec("grid size must be at least 1".into()));
        }
        if a.coefficients().iter().any(|c| !c.is_finite()) {
            return Err(MarketError::InvalidSpec("non-finite curve coefficient".into()));
        }
        Ok(AMASpec { u_defender, a, k })
    }

    /// Unit weights and `a ≡ 0`.
    pub fn vcg(k: usize) -> Self {
        AMASpec { u_defender: 1.0, a: Curve::Polynomial(vec![0.0]), k }
    }

    pub fn with_grid(&self, k: usize) -> Result<Self> {
        AMASpec::new(self.u_defender, self.a.clone(), k)
    }

    /// `u_defender,tag,c_0,c_1,...`.
    pub fn to_csv_row(&self) -> String {
        format!("{:?},{}", self.u_defender, self.a.to_csv_row())
    }

    pub fn from_csv_row(row: &str, k: usize) -> Result<Self> {
        let (u, curve) = row
            .trim()
            .split_once(',')
            .ok_or_else(|| MarketError::InvalidSpec("expected 'u_defender,tag,coefficients'".into()))?;
        let u: f64 = u.trim().parse().map_err(|_| MarketError::InvalidSpec(format!("bad weight '{u}'")))?;
        let a = Curve::from_csv_row(curve).map_err(|e| MarketError::InvalidSpec(e.to_string()))?;
        AMASpec::new(u, a, k)
    }

    fn prepare(&self) -> PreparedAma {
        let ts: Vec<f64> = (0..=self.k).map(|j| j as f64 / self.k as f64).collect();
        PreparedAma {
            g_o: ts.iter().map(|&t| offender_share(t)).collect(),
            g_d: ts.iter().map(|&t| defender_share(t)).collect(),
            a: ts.iter().map(|&t| self.a.eval(t)).collect(),
            ts,
            u: self.u_defender,
        }
    }
}

/// Grid tables for repeated AMA evaluation.
struct PreparedAma {
    ts: Vec<f64>,
    g_o: Vec<f64>,
    g_d: Vec<f64>,
    a: Vec<f64>,
    u: f64,
}

impl PreparedAma {
    fn outcome(&self, types: MarketTypes) -> MarketOutcome {
        let (o, d, u) = (types.theta_o, types.theta_d, self.u);
        let mut best = (f64::NEG_INFINITY, 0usize);
        let mut without_o = f64::NEG_INFINITY;
        let mut without_d = f64::NEG_INFINITY;
        for j in 0..self.ts.len() {
            let vo = o * self.g_o[j];
            let vd = u * d * self.g_d[j];
            let total = vo + vd + self.a[j];
            if total > best.0 {
                best = (total, j);
            }
            without_o = without_o.max(vd + self.a[j]);
            without_d = without_d.max(vo + self.a[j]);
        }
        let j = best.1;
        let p_o = without_o - (u * d * self.g_d[j] + self.a[j]);
        let p_d = (without_d - (o * self.g_o[j] + self.a[j])) / u;
        // the realized term never exceeds the maximum; clip rounding noise
        MarketOutcome { t_end: self.ts[j], p_offender: p_o.max(0.0), p_defender: p_d.max(0.0) }
    }
}

/// Argmax over the grid (ties to the smallest time) with the payments
/// `p_i = [max without i − others' weighted value at o* − a(o*)] / u_i`.
pub fn ama_outcome(types: MarketTypes, spec: &AMASpec) -> MarketOutcome {
    spec.prepare().outcome(types)
}

/// Grid argmax of `A·(t − t²/2) + B·(1 − t)` with `A = 2θ_O − 400`,
/// `B = 2θ_D − 15`; ties go to the smallest time.
pub fn optimal_allocation(types: MarketTypes) -> f64 {
    optimal_allocation_on(types, EVAL_GRID)
}

fn optimal_allocation_on(types: MarketTypes, k: usize) -> f64 {
    let a = 2.0 * types.theta_o - THETA_O_MAX;
    let b = 2.0 * types.theta_d - THETA_D_MAX;
    let f = |j: usize| {
        let t = j as f64 / k as f64;
        a * offender_share(t) + b * (1.0 - t)
    };
    // concave for A > 0 (check the grid neighbours of the stationary point),
    // otherwise the maximum sits at an end of the grid
    let mut candidates = vec![0, k];
    if a > 0.0 {
        let t = (1.0 - b / a).clamp(0.0, 1.0);
        let j = (t * k as f64).floor() as usize;
        candidates.push(j.min(k));
        candidates.push((j + 1).min(k));
    }
    candidates.sort_unstable();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for j in candidates {
        let v = f(j);
        if v > best.0 {
            best = (v, j);
        }
    }
    best.1 as f64 / k as f64
}

/// Revenue-optimal mechanism: the allocation above with threshold payments
/// `p_i = θ_i q_i(θ) − ∫₀^{θ_i} q_i(s, θ₋ᵢ) ds` (trapezoid rule).
pub fn optimal_outcome(types: MarketTypes) -> MarketOutcome {
    optimal_outcome_on(types, EVAL_GRID)
}

pub fn optimal_outcome_on(types: MarketTypes, grid: usize) -> MarketOutcome {
    let t = optimal_allocation_on(types, grid);
    let q_o = |s: f64| offender_share(optimal_allocation_on(MarketTypes { theta_o: s, ..types }, grid));
    let q_d = |s: f64| defender_share(optimal_allocation_on(MarketTypes { theta_d: s, ..types }, grid));
    let p_o = types.theta_o * offender_share(t) - trapezoid(q_o, types.theta_o);
    let p_d = types.theta_d * defender_share(t) - trapezoid(q_d, types.theta_d);
    MarketOutcome { t_end: t, p_offender: p_o, p_defender: p_d }
}

fn trapezoid<F: Fn(f64) -> f64>(f: F, upper: f64) -> f64 {
    if upper <= 0.0 {
        return 0.0;
    }
    let m = PAYMENT_POINTS - 1;
    let h = upper / m as f64;
    let inner: f64 = (1..m).map(|j| f(j as f64 * h)).sum();
    h * (inner + (f(0.0) + f(upper)) / 2.0)
}

/// Type profiles stratified on a `m × m` grid of cells over
/// `[0, 400] × [0, 15]` (`m = ⌈√samples⌉`), one uniform point per cell.
pub fn market_profiles(samples: usize, seed: u64) -> Vec<MarketTypes> {
    let m = (samples as f64).sqrt().ceil().max(1.0) as usize;
    let mut rng = stream_rng(seed, &[0x4d4b]);
    (0..samples)
        .map(|j| {
            let (cx, cy) = (j % m, (j / m) % m);
            let x = (cx as f64 + rng.gen::<f64>()) / m as f64;
            let y = (cy as f64 + rng.gen::<f64>()) / m as f64;
            MarketTypes { theta_o: x * THETA_O_MAX, theta_d: y * THETA_D_MAX }
        })
        .collect()
}

fn revenue_estimate<F: Fn(MarketTypes) -> f64 + Sync + Send>(samples: usize, seed: u64, f: F) -> Result<Estimate> {
    if samples == 0 {
        return Err(MarketError::NoSamples);
    }
    let xs: Vec<f64> = market_profiles(samples, seed).into_par_iter().map(&f).collect();
    Ok(Estimate::from_samples(&xs))
}

/// Expected revenue of the optimal mechanism. The reported standard error
/// treats the stratified points as independent, so it is conservative.
pub fn optimal_revenue(samples: usize, grid: usize, seed: u64) -> Result<Estimate> {
    if grid == 0 {
        return Err(MarketError::InvalidSpec("grid size must be at least 1".into()));
    }
    revenue_estimate(samples, seed, |t| optimal_outcome_on(t, grid).revenue())
}

pub fn ama_expected_revenue(spec: &AMASpec, samples: usize, seed: u64) -> Result<Estimate> {
    let prepared = spec.prepare();
    revenue_estimate(samples, seed, |t| prepared.outcome(t).revenue())
}

/// Defender weights tried by [`optimize_ama`].
pub const DEFENDER_WEIGHTS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

#[derive(Debug, Clone)]
pub struct AmaSearchResult {
    pub spec: AMASpec,
    /// Held-out revenue at the evaluation grid.
    pub revenue: Estimate,
    /// Held-out revenue of the best curve for every weight tried.
    pub per_weight: Vec<(f64, Estimate)>,
    /// GA trace of the winning weight.
    pub trace: Vec<TraceRow>,
}

impl AmaSearchResult {
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }

    /// `u_defender,mean,stderr` per weight.
    pub fn weights_csv(&self) -> String {
        let mut out = String::from("u_defender,mean,stderr\n");
        for (u, e) in &self.per_weight {
            let _ = writeln!(out, "{u},{:.6},{:.6}", e.mean, e.stderr);
        }
        out
    }
}

/// Evolves `a(t)` for each defender weight (fitness on the coarse grid with
/// fresh profiles each round), then picks the weight whose champion earns
/// the most on a held-out evaluation at [`EVAL_GRID`].
pub fn optimize_ama(kind: CurveKind, weights: &[f64], ga: &GAConfig) -> Result<AmaSearchResult> {
    if weights.is_empty() {
        return Err(MarketError::InvalidSpec("no defender weights to try".into()));
    }
    let mut best: Option<(AMASpec, Estimate, Vec<TraceRow>)> = None;
    let mut per_weight = Vec::with_capacity(weights.len());
    for (w, &u) in weights.iter().enumerate() {
        AMASpec::new(u, Curve::zero(kind), FITNESS_GRID)?;
        let cfg = GAConfig { seed: derive_seed(ga.seed, &[w as u64]), ..ga.clone() };
        let fitness = |a: &Curve, seed: u64, samples: usize| {
            let spec = AMASpec { u_defender: u, a: a.clone(), k: FITNESS_GRID };
            let prepared = spec.prepare();
            let mut rng = stream_rng(seed, &[0x4654]);
            let total: f64 = (0..samples)
                .map(|_| {
                    let t = MarketTypes { theta_o: rng.gen::<f64>() * THETA_O_MAX, theta_d: rng.gen::<f64>() * THETA_D_MAX };
                    prepared.outcome(t).revenue()
                })
                .sum();
            total / samples as f64
        };
        let r = evolve(&cfg, &CurveCodec { kind }, fitness)?;
        let spec = AMASpec::new(u, r.best, EVAL_GRID)?;
        let revenue = ama_expected_revenue(&spec, ga.holdout_profiles, derive_seed(ga.seed, &[0x484f]))?;
        per_weight.push((u, revenue));
        if best.as_ref().map_or(true, |(_, e, _)| revenue.mean > e.mean) {
            best = Some((spec, revenue, r.trace));
        }
    }
    let (spec, revenue, trace) = best.expect("at least one weight");
    Ok(AmaSearchResult { spec, revenue, per_weight, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{check_budget_in, check_sp_in};

    fn types(o: f64, d: f64) -> MarketTypes {
        MarketTypes::new(o, d).unwrap()
    }

    #[test]
    fn valuation_examples() {
        assert_eq!(offender_value(400.0, 1.0), 200.0);
        assert_eq!(offender_value(123.0, 0.0), 0.0);
        assert_eq!(offender_value(400.0, 0.5), 150.0);
        assert_eq!(defender_value(15.0, 0.0), 7.5);
        assert_eq!(defender_value(9.0, 1.0), 0.0);
        assert_eq!(defender_value(15.0, 0.5), 5.625);
        assert!(MarketTypes::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn multi_buyer_bookkeeping() {
        let (t, o, d) = multi_buyer_values(&[(400.0, 0.0), (100.0, 0.5)], &[(15.0, 0.5), (10.0, 0.8)]);
        assert_eq!(t, 0.5);
        assert_eq!(o, vec![150.0, 0.0]);
        assert_eq!(d[0], 5.625);
        assert!((d[1] - 1.8).abs() < 1e-12);
        let (t, o, _) = multi_buyer_values(&[(400.0, 0.0)], &[]);
        assert_eq!((t, o[0]), (1.0, 200.0));
    }

    #[test]
    fn ama_examples() {
        let o = ama_outcome(types(400.0, 15.0), &AMASpec::vcg(2));
        assert_eq!(o.t_end, 1.0);
        assert!((o.p_offender - 7.5).abs() < 1e-12);
        assert!(o.p_defender.abs() < 1e-12);
        let o = ama_outcome(types(0.0, 0.0), &AMASpec::vcg(10));
        assert_eq!(o, MarketOutcome { t_end: 0.0, p_offender: 0.0, p_defender: 0.0 });
        assert!(AMASpec::new(0.0, Curve::Polynomial(vec![0.0]), 10).is_err());
        assert!(AMASpec::new(1.0, Curve::Polynomial(vec![0.0]), 0).is_err());
    }

    #[test]
    fn optimal_allocation_examples() {
        assert_eq!(optimal_allocation(types(400.0, 0.0)), 1.0);
        assert_eq!(optimal_allocation(types(0.0, 15.0)), 0.0);
        assert_eq!(optimal_allocation(types(200.0, 7.5)), 0.0);
    }

    #[test]
    fn closed_form_allocation_matches_grid_scan() {
        let mut rng = stream_rng(3, &[]);
        for _ in 0..3000 {
            let t = types(rng.gen::<f64>() * 400.0, rng.gen::<f64>() * 15.0);
            let a = 2.0 * t.theta_o - THETA_O_MAX;
            let b = 2.0 * t.theta_d - THETA_D_MAX;
            let mut best = (f64::NEG_INFINITY, 0.0);
            for j in 0..=EVAL_GRID {
                let x = j as f64 / EVAL_GRID as f64;
                let v = a * (x - x * x / 2.0) + b * (1.0 - x);
                if v > best.0 {
                    best = (v, x);
                }
            }
            assert_eq!(optimal_allocation(t), best.1, "{t:?}");
        }
    }

    #[test]
    fn optimal_allocation_is_monotone() {
        for i in 0..=40 {
            for j in 0..=30 {
                let o = i as f64 * 10.0;
                let d = j as f64 * 0.5;
                let t = optimal_allocation(types(o, d));
                if i < 40 {
                    assert!(optimal_allocation(types(o + 10.0, d)) >= t);
                }
                if j < 30 {
                    assert!(optimal_allocation(types(o, d + 0.5)) <= t);
                }
            }
        }
    }

    #[test]
    fn optimal_payments_are_nonnegative_and_zero_at_zero() {
        for p in market_profiles(2000, 5) {
            let o = optimal_outcome(p);
            assert!(o.p_offender >= -1e-9 && o.p_defender >= -1e-9, "{p:?} {o:?}");
        }
        assert_eq!(optimal_outcome(types(0.0, 7.0)).p_offender, 0.0);
    }

    #[test]
    fn optimal_mechanism_is_truthful() {
        let mech = |v: &[f64]| optimal_outcome(MarketTypes { theta_o: v[0], theta_d: v[1] });
        // q is a monotone step function with total variation ≤ 1/2, so the
        // 400-point trapezoid errs by at most h/4 per payment (h ≤ 400/399)
        let r = check_sp_in(&mech, &MarketTypeSpace, 2000, 0.51, 7);
        assert!(r.is_clean(), "{:?}", r.violations.first());
    }

    #[test]
    fn revenue_orders() {
        let opt = optimal_revenue(2500, EVAL_GRID, 1).unwrap();
        let vcg = ama_expected_revenue(&AMASpec::vcg(EVAL_GRID), 2500, 1).unwrap();
        assert!(vcg.mean < opt.mean);
        assert!(vcg.mean > 0.0);
        assert!(ama_expected_revenue(&AMASpec::vcg(10), 0, 1).is_err());
        assert!(optimal_revenue(0, EVAL_GRID, 1).is_err());
    }

    #[test]
    fn ama_is_truthful_with_nonnegative_payments() {
        let mut rng = stream_rng(11, &[]);
        for kind in [CurveKind::PiecewiseLinear { segments: 10 }, CurveKind::Fourier { terms: 5, period: 2.0 }] {
            let spec = AMASpec::new(1.0 + rng.gen::<f64>() * 8.0, kind.random(&mut rng), 200).unwrap();
            let mech = |v: &[f64]| ama_outcome(MarketTypes { theta_o: v[0], theta_d: v[1] }, &spec);
            assert!(check_sp_in(&mech, &MarketTypeSpace, 3000, 1e-6, 3).is_clean());
            assert!(check_budget_in(&mech, &MarketTypeSpace, 3000, 3).is_clean());
        }
    }

    #[test]
    fn scaling_keeps_the_outcome() {
        let mut rng = stream_rng(12, &[]);
        let a = CurveKind::Polynomial { degree: 3 }.random(&mut rng);
        let spec = AMASpec::new(2.0, a.clone(), 100).unwrap();
        for p in market_profiles(500, 2) {
            let base = ama_outcome(p, &spec);
            // scaling every weight (the offender's included) by 3 ≡ scaling the types
            let scaled_a = Curve::Polynomial(a.coefficients().iter().map(|c| 3.0 * c).collect());
            let scaled = AMASpec::new(2.0, scaled_a, 100).unwrap();
            let o = ama_outcome(MarketTypes { theta_o: 3.0 * p.theta_o, theta_d: 3.0 * p.theta_d }, &scaled);
            assert_eq!(o.t_end, base.t_end);
        }
    }

    #[test]
    fn spec_csv_round_trip() {
        let spec = AMASpec::new(4.0, Curve::Fourier { period: 2.0, coeffs: vec![1.0, 2.0, 3.0] }, 1000).unwrap();
        assert_eq!(AMASpec::from_csv_row(&spec.to_csv_row(), 1000).unwrap(), spec);
        assert!(AMASpec::from_csv_row("oops", 10).is_err());
    }

    #[test]
    fn stratified_profiles_cover_the_grid() {
        let ps = market_profiles(10_000, 1);
        let mut counts = vec![0usize; 100];
        for p in &ps {
            let c = ((p.theta_o / THETA_O_MAX * 10.0) as usize).min(9) * 10 + ((p.theta_d / THETA_D_MAX * 10.0) as usize).min(9);
            counts[c] += 1;
        }
        assert!(counts.iter().all(|&c| c == 100));
    }
}

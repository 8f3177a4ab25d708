//! A small elitist genetic algorithm and its genome codecs: sequences of
//! cost-time vectors, single-variable curves, and bounded real vectors.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use thiserror::Error;

use crate::delay::{
    draw_profiles, evaluate_on, loose_filter, random_vector, sequential_unanimous, strict_filter, CostTimeVector,
    DelayObjective, SequentialMechanism,
};
use crate::numeric::{derive_seed, stream_rng};
use crate::priors::Prior;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error("invalid GA configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
}

pub type Result<T> = std::result::Result<T, EvolveError>;

#[derive(Debug, Clone, PartialEq)]
pub struct GAConfig {
    pub population: usize,
    pub elite: usize,
    pub rounds: usize,
    /// Profiles per fitness evaluation; redrawn every round.
    pub fitness_profiles: usize,
    /// Profiles for the final held-out selection.
    pub holdout_profiles: usize,
    pub mutation_prob: f64,
    pub mutation_delta: f64,
    pub perturb_range: f64,
    pub prune_l1: f64,
    pub seed: u64,
}

impl GAConfig {
    /// Sequence GA defaults: 200 individuals, top half kept, 200 rounds.
    pub fn sequences(seed: u64) -> Self {
        GAConfig {
            population: 200,
            elite: 100,
            rounds: 200,
            fitness_profiles: 200,
            holdout_profiles: 10_000,
            mutation_prob: 0.2,
            mutation_delta: 0.0,
            perturb_range: 0.1,
            prune_l1: 1e-4,
            seed,
        }
    }

    /// Curve GA defaults: 60 curves, top 20 kept, 100 rounds.
    pub fn curves(seed: u64) -> Self {
        GAConfig {
            population: 60,
            elite: 20,
            rounds: 100,
            fitness_profiles: 200,
            holdout_profiles: 10_000,
            mutation_prob: 0.1,
            mutation_delta: 0.5,
            perturb_range: 0.0,
            prune_l1: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EvolveError::InvalidConfig(m.to_string()));
        if self.population == 0 {
            return bad("population must be positive");
        }
        if self.elite == 0 || self.elite > self.population {
            return bad("elite must be in 1..=population");
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad("mutation_prob must be a probability");
        }
        if !(self.mutation_delta >= 0.0 && self.perturb_range >= 0.0 && self.prune_l1 >= 0.0) {
            return bad("mutation_delta, perturb_range and prune_l1 must be nonnegative");
        }
        if self.fitness_profiles == 0 || self.holdout_profiles == 0 {
            return bad("profile counts must be positive");
        }
        Ok(())
    }
}

/// Genome representation plus its variation operators.
pub trait Codec: Sync {
    type Genome: Clone + Send + Sync;

    fn random(&self, rng: &mut ChaCha8Rng) -> Self::Genome;

    /// Number of distinct offspring operators; refill slots are split
    /// evenly among them.
    fn operators(&self) -> usize;

    /// One offspring from operator `op`. `elite` is nonempty.
    fn breed(
        &self,
        op: usize,
        elite: &[Self::Genome],
        population: &[Self::Genome],
        cfg: &GAConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self::Genome;

    /// Whether a genome may enter or stay in the population.
    fn admissible(&self, _genome: &Self::Genome, _seed: u64) -> bool {
        true
    }

    /// Per-round cleanup applied before fitness evaluation.
    fn tidy(&self, genome: Self::Genome, _seed: u64) -> Self::Genome {
        genome
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone)]
pub struct EvolveResult<G> {
    /// Winner of the held-out evaluation.
    pub best: G,
    pub best_fitness: f64,
    /// Per-round fitness on that round's profiles.
    pub trace: Vec<TraceRow>,
    /// Final population, best first by held-out fitness.
    pub population: Vec<G>,
    pub population_fitness: Vec<f64>,
}

/// CSV `round,best,mean`.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("round,best,mean\n");
    for r in trace {
        let _ = writeln!(out, "{},{:.9},{:.9}", r.round, r.best, r.mean);
    }
    out
}

const INIT: u64 = 1;
const ROUND: u64 = 2;
const BREED: u64 = 3;
const HOLDOUT: u64 = 4;
const FIT: u64 = 5;
const FILTER: u64 = 6;
const TIDY: u64 = 7;

/// Random initial population.
pub fn evolve<C, F>(cfg: &GAConfig, codec: &C, fitness: F) -> Result<EvolveResult<C::Genome>>
where
    C: Codec,
    F: Fn(&C::Genome, u64, usize) -> f64 + Sync,
{
    cfg.validate()?;
    let initial: Vec<C::Genome> = (0..cfg.population)
        .map(|i| codec.random(&mut stream_rng(cfg.seed, &[INIT, i as u64])))
        .collect();
    evolve_from(cfg, codec, initial, fitness)
}

/// Runs the GA from `initial`. `fitness(genome, seed, samples)` is maximized;
/// all genomes in a round share the same `seed`. The result is chosen among
/// the final population and every round's champion by a held-out evaluation.
pub fn evolve_from<C, F>(cfg: &GAConfig, codec: &C, initial: Vec<C::Genome>, fitness: F) -> Result<EvolveResult<C::Genome>>
where
    C: Codec,
    F: Fn(&C::Genome, u64, usize) -> f64 + Sync,
{
    cfg.validate()?;
    if initial.is_empty() {
        return Err(EvolveError::InvalidConfig("empty initial population".into()));
    }
    let mut population = initial;
    let mut champions: Vec<C::Genome> = Vec::new();
    let mut trace = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let round_seed = derive_seed(cfg.seed, &[ROUND, round as u64]);
        let filter_seed = derive_seed(round_seed, &[FILTER]);
        let tidy_seed = derive_seed(round_seed, &[TIDY]);

        let survivors: Vec<C::Genome> = population
            .into_iter()
            .map(|g| codec.tidy(g, tidy_seed))
            .collect::<Vec<_>>()
            .into_par_iter()
            .filter(|g| codec.admissible(g, filter_seed))
            .collect();
        population = if survivors.is_empty() {
            (0..cfg.population)
                .map(|i| admissible_random(codec, cfg, round, i, filter_seed))
                .collect()
        } else {
            survivors
        };
        population = refill(codec, cfg, population, round, (tidy_seed, filter_seed), 0);

        let fit_seed = derive_seed(round_seed, &[FIT]);
        let scores: Vec<f64> = population.par_iter().map(|g| fitness(g, fit_seed, cfg.fitness_profiles)).collect();
        let order = ranking(&scores);
        let best = scores[order[0]];
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        trace.push(TraceRow { round, best, mean });
        champions.push(population[order[0]].clone());

        let elite: Vec<C::Genome> = order.iter().take(cfg.elite).map(|&i| population[i].clone()).collect();
        population = refill(codec, cfg, elite, round, (tidy_seed, filter_seed), 1);
    }

    // held-out selection over the final population and the round champions
    let holdout_seed = derive_seed(cfg.seed, &[HOLDOUT]);
    let mut candidates = population;
    let pop_len = candidates.len();
    candidates.extend(champions);
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|g| fitness(g, holdout_seed, cfg.holdout_profiles))
        .collect();
    let order = ranking(&scores);
    let best = candidates[order[0]].clone();
    let best_fitness = scores[order[0]];
    let pop_order = ranking(&scores[..pop_len]);
    let population_fitness = pop_order.iter().map(|&i| scores[i]).collect();
    let population = pop_order.into_iter().map(|i| candidates[i].clone()).collect();
    Ok(EvolveResult { best, best_fitness, trace, population, population_fitness })
}

/// Indices by fitness descending; ties keep the earlier index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn admissible_random<C: Codec>(codec: &C, cfg: &GAConfig, round: usize, slot: usize, seed: u64) -> C::Genome {
    let mut rng = stream_rng(cfg.seed, &[INIT, round as u64, slot as u64, 1]);
    let mut g = codec.random(&mut rng);
    for _ in 0..100 {
        if codec.admissible(&g, seed) {
            break;
        }
        g = codec.random(&mut rng);
    }
    g
}

/// Tops `parents` up to the population size with tidied, admissible
/// offspring, falling back to copies of parents.
fn refill<C: Codec>(
    codec: &C,
    cfg: &GAConfig,
    parents: Vec<C::Genome>,
    round: usize,
    (tidy_seed, filter_seed): (u64, u64),
    phase: u64,
) -> Vec<C::Genome> {
    let missing = cfg.population.saturating_sub(parents.len());
    if missing == 0 {
        return parents;
    }
    let ops = codec.operators().max(1);
    let children: Vec<C::Genome> = (0..missing)
        .into_par_iter()
        .map(|slot| {
            let op = slot * ops / missing;
            let mut rng = stream_rng(cfg.seed, &[BREED, round as u64, phase, slot as u64]);
            for _ in 0..20 {
                let child = codec.tidy(codec.breed(op, &parents, &parents, cfg, &mut rng), tidy_seed);
                if codec.admissible(&child, filter_seed) {
                    return child;
                }
            }
            parents[slot % parents.len()].clone()
        })
        .collect();
    let mut out = parents;
    out.extend(children);
    out
}

// ---------------------------------------------------------------------------
// Sequences of cost-time vectors

/// Swaps one aligned segment of genes between two mechanisms; returns both
/// offspring. Identical parents yield identical offspring.
pub fn sequence_crossover<R: Rng + ?Sized>(
    a: &SequentialMechanism,
    b: &SequentialMechanism,
    rng: &mut R,
) -> (SequentialMechanism, SequentialMechanism) {
    let (va, vb) = (a.vectors(), b.vectors());
    let shortest = va.len().min(vb.len());
    let start = rng.gen_range(0..shortest);
    let len = rng.gen_range(1..=shortest - start);
    let mut x = va.to_vec();
    let mut y = vb.to_vec();
    x[start..start + len].clone_from_slice(&vb[start..start + len]);
    y[start..start + len].clone_from_slice(&va[start..start + len]);
    (
        SequentialMechanism::new(x).expect("nonempty, same agents"),
        SequentialMechanism::new(y).expect("nonempty, same agents"),
    )
}

/// One agent's `(T_i, B_i)`: excluded with probability 1/4, otherwise
/// each of `T_i` and `B_i` is 0 or `U(0, 1)` with equal odds.
pub fn random_offer<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    if rng.gen_bool(0.25) {
        return (1.0, 0.0);
    }
    let t = if rng.gen_bool(0.5) { 0.0 } else { rng.gen::<f64>() };
    let b = if rng.gen_bool(0.5) { 0.0 } else { rng.gen::<f64>() };
    (t, b)
}

/// Scales payments to sum to 1; if nothing is left to scale, one
/// non-excluded agent chosen uniformly pays the whole cost. `None` if
/// everyone is excluded.
fn renormalize<R: Rng + ?Sized>(t: Vec<f64>, mut b: Vec<f64>, rng: &mut R) -> Option<CostTimeVector> {
    if b.iter().sum::<f64>() <= 0.0 {
        let open: Vec<usize> = (0..t.len()).filter(|&i| t[i] < 1.0).collect();
        b[*open.choose(rng)?] = 1.0;
    }
    CostTimeVector::normalized(t, b).ok()
}

/// Random cost-time vector with offers from [`random_offer`].
pub fn random_sparse_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CostTimeVector {
    loop {
        let (t, b): (Vec<f64>, Vec<f64>) = (0..n).map(|_| random_offer(rng)).unzip();
        if let Some(v) = renormalize(t, b, rng) {
            return v;
        }
    }
}

/// Copies a random gene, changes one agent's offer, renormalizes the
/// payments and inserts the copy somewhere after the original.
/// Returns the input if every agent ends up excluded.
pub fn insert_mutation<R: Rng + ?Sized>(m: &SequentialMechanism, rng: &mut R) -> SequentialMechanism {
    let genes = m.vectors();
    let g = rng.gen_range(0..genes.len());
    let n = m.n();
    let i = rng.gen_range(0..n);
    let mut t = genes[g].t().to_vec();
    let mut b = genes[g].b().to_vec();
    (t[i], b[i]) = random_offer(rng);
    let Some(copy) = renormalize(t, b, rng) else {
        return m.clone();
    };
    let pos = rng.gen_range(g + 1..=genes.len());
    let mut out = genes.to_vec();
    out.insert(pos, copy);
    SequentialMechanism::new(out).expect("nonempty")
}

/// Multiplies every entry of one random gene by `1 + U(-range, range)`,
/// keeping excluded agents excluded, then renormalizes the payments.
pub fn perturb_gene<R: Rng + ?Sized>(m: &SequentialMechanism, range: f64, rng: &mut R) -> SequentialMechanism {
    let genes = m.vectors();
    let g = rng.gen_range(0..genes.len());
    let mut factor = || 1.0 + if range > 0.0 { rng.gen_range(-range..=range) } else { 0.0 };
    let gene = &genes[g];
    let t: Vec<f64> = gene
        .t()
        .iter()
        .map(|&x| if x >= 1.0 { 1.0 } else { (x * factor()).clamp(0.0, 0.999) })
        .collect();
    let b: Vec<f64> = gene.b().iter().map(|&x| x * factor()).collect();
    match CostTimeVector::normalized(t, b) {
        Ok(v) => {
            let mut out = genes.to_vec();
            out[g] = v;
            SequentialMechanism::new(out).expect("nonempty")
        }
        Err(_) => m.clone(),
    }
}

/// With probability `mutation_prob` an insert mutation, then with
/// probability `mutation_prob` a gene perturbation.
pub fn sequence_mutation<R: Rng + ?Sized>(m: &SequentialMechanism, cfg: &GAConfig, rng: &mut R) -> SequentialMechanism {
    let mut out = m.clone();
    if rng.gen_bool(cfg.mutation_prob) {
        out = insert_mutation(&out, rng);
    }
    if rng.gen_bool(cfg.mutation_prob) {
        out = perturb_gene(&out, cfg.perturb_range, rng);
    }
    out
}

/// Drops genes no sampled profile accepts and genes within `threshold` (L1)
/// of an earlier kept gene. Keeps the first gene if nothing survives.
pub fn prune_mechanism(m: &SequentialMechanism, profiles: &[Vec<f64>], threshold: f64) -> SequentialMechanism {
    let mut kept: Vec<CostTimeVector> = Vec::new();
    for gene in m.vectors() {
        if !profiles.iter().any(|v| gene.accepted_by(v)) {
            continue;
        }
        if kept.iter().any(|k| k.l1_distance(gene) <= threshold) {
            continue;
        }
        kept.push(gene.clone());
    }
    if kept.is_empty() {
        kept.push(m.vectors()[0].clone());
    }
    SequentialMechanism::new(kept).expect("nonempty")
}

pub fn prune(population: &[SequentialMechanism], profiles: &[Vec<f64>], threshold: f64) -> Vec<SequentialMechanism> {
    population.iter().map(|m| prune_mechanism(m, profiles, threshold)).collect()
}

/// Truthfulness filter applied before each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceFilter {
    /// Nondecreasing unit prices and release times (provably truthful).
    Strict,
    /// Simulation with this many profiles per round (probably truthful).
    Loose { profiles: usize },
}

pub struct SequenceCodec<'a> {
    pub prior: &'a Prior,
    pub n: usize,
    pub filter: SequenceFilter,
    /// Profiles used to find never-accepted genes.
    pub prune_profiles: usize,
    pub prune_l1: f64,
}

impl Codec for SequenceCodec<'_> {
    type Genome = SequentialMechanism;

    fn random(&self, rng: &mut ChaCha8Rng) -> SequentialMechanism {
        let v = if rng.gen_bool(0.5) { random_vector(self.n, rng) } else { random_sparse_vector(self.n, rng) };
        SequentialMechanism::new(vec![v]).expect("one vector")
    }

    fn operators(&self) -> usize {
        3
    }

    fn breed(&self, op: usize, elite: &[SequentialMechanism], population: &[SequentialMechanism], cfg: &GAConfig, rng: &mut ChaCha8Rng) -> SequentialMechanism {
        let parent = elite.choose(rng).expect("nonempty elite");
        match op {
            0 => {
                let other = population.choose(rng).expect("nonempty population");
                sequence_crossover(parent, other, rng).0
            }
            1 => insert_mutation(parent, rng),
            _ => perturb_gene(parent, cfg.perturb_range, rng),
        }
    }

    fn admissible(&self, m: &SequentialMechanism, seed: u64) -> bool {
        match self.filter {
            SequenceFilter::Strict => strict_filter(m),
            SequenceFilter::Loose { profiles } => loose_filter(m, self.prior, profiles, seed).unwrap_or(false),
        }
    }

    fn tidy(&self, m: SequentialMechanism, seed: u64) -> SequentialMechanism {
        if self.prune_profiles == 0 {
            return m;
        }
        let profiles = draw_profiles(self.prior, self.n, self.prune_profiles, seed);
        prune_mechanism(&m, &profiles, self.prune_l1)
    }
}

#[derive(Debug, Clone)]
pub struct SequenceGaResult {
    pub best: SequentialMechanism,
    /// Held-out expected delay of `best`.
    pub value: f64,
    pub trace: Vec<TraceRow>,
    pub population: Vec<SequentialMechanism>,
    /// Post-hoc simulation verdict per final individual (loose filter only).
    pub verified: Option<Vec<bool>>,
}

impl SequenceGaResult {
    pub fn survival_rate(&self) -> Option<f64> {
        self.verified
            .as_ref()
            .map(|v| v.iter().filter(|&&x| x).count() as f64 / v.len().max(1) as f64)
    }
}

/// Profiles for the post-hoc truthfulness test of loose-filter runs.
pub const VERIFY_PROFILES: usize = 10_000;

/// Evolves sequential unanimous mechanisms minimizing an expected delay.
pub fn evolve_sequences(
    prior: &Prior,
    n: usize,
    objective: DelayObjective,
    filter: SequenceFilter,
    cfg: &GAConfig,
) -> Result<SequenceGaResult> {
    let codec = SequenceCodec { prior, n, filter, prune_profiles: cfg.fitness_profiles, prune_l1: cfg.prune_l1 };
    let fitness = |m: &SequentialMechanism, seed: u64, samples: usize| {
        let profiles = draw_profiles(prior, n, samples, seed);
        -evaluate_on(&profiles, |v| sequential_unanimous(v, m), objective).mean
    };
    let r = evolve(cfg, &codec, fitness)?;
    let verified = match filter {
        SequenceFilter::Strict => None,
        SequenceFilter::Loose { .. } => Some(
            r.population
                .par_iter()
                .enumerate()
                .map(|(i, m)| loose_filter(m, prior, VERIFY_PROFILES, derive_seed(cfg.seed, &[8, i as u64])).unwrap_or(false))
                .collect(),
        ),
    };
    Ok(SequenceGaResult { best: r.best, value: -r.best_fitness, trace: r.trace, population: r.population, verified })
}

// ---------------------------------------------------------------------------
// Curves

/// A function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Curve {
    /// Values at `j/k` for `j = 0..=k`, joined by straight segments.
    PiecewiseLinear(Vec<f64>),
    /// `c_0 + c_1 t + ... + c_k t^k`.
    Polynomial(Vec<f64>),
    /// `c_0/2 + sum_j c_j cos(2 pi j t / p) + c'_j sin(2 pi j t / p)`,
    /// stored as `[c_0, c_1..c_N, c'_1..c'_N]`.
    Fourier { period: f64, coeffs: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveKind {
    PiecewiseLinear { segments: usize },
    Polynomial { degree: usize },
    Fourier { terms: usize, period: f64 },
}

impl CurveKind {
    pub fn tag(&self) -> String {
        match self {
            CurveKind::PiecewiseLinear { segments } => format!("piecewise-{segments}"),
            CurveKind::Polynomial { degree } => format!("polynomial-{degree}"),
            CurveKind::Fourier { terms, period } => format!("fourier-{terms}-{period}"),
        }
    }

    pub fn dimension(&self) -> usize {
        match *self {
            CurveKind::PiecewiseLinear { segments } => segments + 1,
            CurveKind::Polynomial { degree } => degree + 1,
            CurveKind::Fourier { terms, .. } => 2 * terms + 1,
        }
    }

    pub fn with_coefficients(&self, coeffs: Vec<f64>) -> Result<Curve> {
        if coeffs.len() != self.dimension() {
            return Err(EvolveError::InvalidCurve(format!(
                "{} needs {} coefficients, got {}",
                self.tag(),
                self.dimension(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(EvolveError::InvalidCurve("non-finite coefficient".into()));
        }
        Ok(match *self {
            CurveKind::PiecewiseLinear { .. } => Curve::PiecewiseLinear(coeffs),
            CurveKind::Polynomial { .. } => Curve::Polynomial(coeffs),
            CurveKind::Fourier { period, .. } => Curve::Fourier { period, coeffs },
        })
    }

    /// Random initial curve: a line with slope and intercept from
    /// `U(-100, 100)` for piecewise curves; `U(-10, 10)` coefficients otherwise.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Curve {
        match *self {
            CurveKind::PiecewiseLinear { segments } => {
                let slope = rng.gen_range(-100.0..100.0);
                let intercept = rng.gen_range(-100.0..100.0);
                Curve::PiecewiseLinear((0..=segments).map(|j| intercept + slope * j as f64 / segments as f64).collect())
            }
            _ => {
                let c = (0..self.dimension()).map(|_| rng.gen_range(-10.0..10.0)).collect();
                self.with_coefficients(c).expect("right length")
            }
        }
    }
}

impl Curve {
    pub fn kind(&self) -> CurveKind {
        match self {
            Curve::PiecewiseLinear(v) => CurveKind::PiecewiseLinear { segments: v.len() - 1 },
            Curve::Polynomial(c) => CurveKind::Polynomial { degree: c.len() - 1 },
            Curve::Fourier { period, coeffs } => CurveKind::Fourier { terms: (coeffs.len() - 1) / 2, period: *period },
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        match self {
            Curve::PiecewiseLinear(c) | Curve::Polynomial(c) | Curve::Fourier { coeffs: c, .. } => c,
        }
    }

    fn coefficients_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Curve::PiecewiseLinear(c) | Curve::Polynomial(c) | Curve::Fourier { coeffs: c, .. } => c,
        }
    }

    pub fn zero(kind: CurveKind) -> Curve {
        kind.with_coefficients(vec![0.0; kind.dimension()]).expect("right length")
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Curve::PiecewiseLinear(v) => {
                let k = v.len() - 1;
                if k == 0 {
                    return v[0];
                }
                let x = t.clamp(0.0, 1.0) * k as f64;
                let j = (x.floor() as usize).min(k - 1);
                let frac = x - j as f64;
                v[j] + frac * (v[j + 1] - v[j])
            }
            Curve::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &x| acc * t + x),
            Curve::Fourier { period, coeffs } => {
                let terms = (coeffs.len() - 1) / 2;
                let w = 2.0 * std::f64::consts::PI / period * t;
                let mut s = coeffs[0] / 2.0;
                for j in 1..=terms {
                    let (sin, cos) = (w * j as f64).sin_cos();
                    s += coeffs[j] * cos + coeffs[terms + j] * sin;
                }
                s
            }
        }
    }

    /// `tag,c_0,c_1,...` on one line.
    pub fn to_csv_row(&self) -> String {
        let mut out = self.kind().tag();
        for c in self.coefficients() {
            let _ = write!(out, ",{c:?}");
        }
        out
    }

    pub fn from_csv_row(row: &str) -> Result<Curve> {
        let mut fields = row.trim().split(',');
        let tag = fields.next().unwrap_or_default();
        let coeffs = fields
            .map(|f| f.trim().parse::<f64>().map_err(|e| EvolveError::InvalidCurve(format!("bad coefficient '{f}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let kind = parse_curve_tag(tag)?;
        kind.with_coefficients(coeffs)
    }
}

/// Parses `piecewise-K`, `polynomial-D` or `fourier-N-P`.
pub fn parse_curve_tag(tag: &str) -> Result<CurveKind> {
    let parts: Vec<&str> = tag.split('-').collect();
    let bad = || EvolveError::InvalidCurve(format!("unknown curve tag '{tag}'"));
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match parts.as_slice() {
        ["piecewise", k] if num(k)? >= 1 => Ok(CurveKind::PiecewiseLinear { segments: num(k)? }),
        ["polynomial", d] => Ok(CurveKind::Polynomial { degree: num(d)? }),
        ["fourier", n, p] => {
            let period: f64 = p.parse().map_err(|_| bad())?;
            if !(period > 0.0) {
                return Err(bad());
            }
            Ok(CurveKind::Fourier { terms: num(n)?, period })
        }
        _ => Err(bad()),
    }
}

/// Standard two-point crossover on the coefficient lists.
pub fn curve_crossover<R: Rng + ?Sized>(a: &Curve, b: &Curve, rng: &mut R) -> Curve {
    let mut child = a.clone();
    let len = a.coefficients().len();
    let mut i = rng.gen_range(0..=len);
    let mut j = rng.gen_range(0..=len);
    if i > j {
        std::mem::swap(&mut i, &mut j);
    }
    child.coefficients_mut()[i..j].copy_from_slice(&b.coefficients()[i..j]);
    child
}

/// Each coefficient moves by `+-delta` with probability `prob`.
pub fn curve_mutation<R: Rng + ?Sized>(c: &Curve, prob: f64, delta: f64, rng: &mut R) -> Curve {
    let mut child = c.clone();
    for x in child.coefficients_mut() {
        if rng.gen_bool(prob) {
            *x += if rng.gen_bool(0.5) { delta } else { -delta };
        }
    }
    child
}

pub struct CurveCodec {
    pub kind: CurveKind,
}

impl Codec for CurveCodec {
    type Genome = Curve;

    fn random(&self, rng: &mut ChaCha8Rng) -> Curve {
        self.kind.random(rng)
    }

    fn operators(&self) -> usize {
        2
    }

    fn breed(&self, op: usize, elite: &[Curve], _population: &[Curve], cfg: &GAConfig, rng: &mut ChaCha8Rng) -> Curve {
        let a = elite.choose(rng).expect("nonempty elite");
        if op == 0 {
            let b = elite.choose(rng).expect("nonempty elite");
            curve_crossover(a, b, rng)
        } else {
            curve_mutation(a, cfg.mutation_prob, cfg.mutation_delta, rng)
        }
    }
}

// ---------------------------------------------------------------------------
// Bounded real vectors

/// Real vectors in a box. Offspring come from two-point crossover and
/// per-coordinate uniform steps of up to `mutation_delta` (scaled by the
/// box width) taken with probability `mutation_prob`.
pub struct BoxCodec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// If set, random genomes jitter around this point instead of filling the box.
    pub center: Option<Vec<f64>>,
    pub jitter: f64,
}

impl BoxCodec {
    pub fn unit(dim: usize) -> Self {
        BoxCodec { lo: vec![0.0; dim], hi: vec![1.0; dim], center: None, jitter: 0.0 }
    }

    fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }
}

impl Codec for BoxCodec {
    type Genome = Vec<f64>;

    fn random(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x: Vec<f64> = match &self.center {
            Some(c) => c
                .iter()
                .enumerate()
                .map(|(i, &v)| v + self.jitter * (self.hi[i] - self.lo[i]) * rng.gen_range(-1.0..=1.0))
                .collect(),
            None => self.lo.iter().zip(&self.hi).map(|(&a, &b)| rng.gen_range(a..=b)).collect(),
        };
        self.clamp(&mut x);
        x
    }

    fn operators(&self) -> usize {
        2
    }

    fn breed(&self, op: usize, elite: &[Vec<f64>], _population: &[Vec<f64>], cfg: &GAConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let a = elite.choose(rng).expect("nonempty elite");
        let mut child = a.clone();
        if op == 0 {
            let b = elite.choose(rng).expect("nonempty elite");
            let mut i = rng.gen_range(0..=a.len());
            let mut j = rng.gen_range(0..=a.len());
            if i > j {
                std::mem::swap(&mut i, &mut j);
            }
            child[i..j].copy_from_slice(&b[i..j]);
        } else {
            let mut moved = false;
            for (k, x) in child.iter_mut().enumerate() {
                if rng.gen_bool(cfg.mutation_prob) {
                    *x += cfg.mutation_delta * (self.hi[k] - self.lo[k]) * rng.gen_range(-1.0..=1.0);
                    moved = true;
                }
            }
            if !moved && !child.is_empty() {
                let k = rng.gen_range(0..child.len());
                child[k] += cfg.mutation_delta * (self.hi[k] - self.lo[k]) * rng.gen_range(-1.0..=1.0);
            }
        }
        self.clamp(&mut child);
        child
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::Family;

    fn ctv(t: &[f64], b: &[f64]) -> CostTimeVector {
        CostTimeVector::new(t.to_vec(), b.to_vec()).unwrap()
    }

    fn small_cfg(seed: u64) -> GAConfig {
        GAConfig { population: 20, elite: 8, rounds: 15, fitness_profiles: 100, holdout_profiles: 500, ..GAConfig::curves(seed) }
    }

    #[test]
    fn curve_evaluation() {
        assert_eq!(Curve::Polynomial(vec![1.0]).eval(0.7), 1.0);
        assert_eq!(Curve::PiecewiseLinear(vec![0.0, 1.0]).eval(0.5), 0.5);
        let f = Curve::Fourier { period: 2.0, coeffs: vec![2.0, 0.0, 0.0] };
        assert!((f.eval(0.3) - 1.0).abs() < 1e-15);
        let p = Curve::Polynomial(vec![1.0, -2.0, 3.0]);
        assert!((p.eval(0.5) - (1.0 - 1.0 + 0.75)).abs() < 1e-15);
        let s = Curve::Fourier { period: 2.0, coeffs: vec![0.0, 0.0, 1.0] };
        assert!((s.eval(0.5) - (std::f64::consts::PI * 0.5).sin()).abs() < 1e-15);
        let pw = Curve::PiecewiseLinear(vec![0.0, 2.0, -2.0]);
        assert_eq!(pw.eval(1.0), -2.0);
        assert_eq!(pw.eval(0.75), 0.0);
    }

    #[test]
    fn curve_csv_round_trip() {
        for kind in [
            CurveKind::PiecewiseLinear { segments: 4 },
            CurveKind::Polynomial { degree: 3 },
            CurveKind::Fourier { terms: 2, period: 2.0 },
        ] {
            let c = kind.random(&mut stream_rng(1, &[]));
            assert_eq!(Curve::from_csv_row(&c.to_csv_row()).unwrap(), c);
        }
        assert!(Curve::from_csv_row("spline-3,1,2").is_err());
        assert!(Curve::from_csv_row("polynomial-2,1").is_err());
    }

    #[test]
    fn random_piecewise_curves_are_lines() {
        let c = CurveKind::PiecewiseLinear { segments: 10 }.random(&mut stream_rng(3, &[]));
        let v = c.coefficients();
        let step = v[1] - v[0];
        assert!(v.windows(2).all(|w| ((w[1] - w[0]) - step).abs() < 1e-9));
        assert!(v[0].abs() <= 100.0 && (v[10] - v[0]).abs() <= 100.0);
    }

    #[test]
    fn crossover_identical_and_single_gene() {
        let a = SequentialMechanism::new(vec![ctv(&[0.0, 0.1], &[0.5, 0.5]), ctv(&[0.2, 0.1], &[0.4, 0.6])]).unwrap();
        let mut rng = stream_rng(2, &[]);
        for _ in 0..20 {
            let (x, y) = sequence_crossover(&a, &a, &mut rng);
            assert_eq!(x, a);
            assert_eq!(y, a);
        }
        let p = SequentialMechanism::new(vec![ctv(&[0.0, 0.0], &[1.0, 0.0])]).unwrap();
        let q = SequentialMechanism::new(vec![ctv(&[0.0, 0.0], &[0.0, 1.0])]).unwrap();
        let (x, y) = sequence_crossover(&p, &q, &mut rng);
        assert_eq!((x, y), (q, p));
    }

    #[test]
    fn crossover_lengths_stay_bounded() {
        let mut rng = stream_rng(5, &[]);
        let mk = |len: usize, rng: &mut ChaCha8Rng| SequentialMechanism::new((0..len).map(|_| random_vector(3, rng)).collect()).unwrap();
        for _ in 0..200 {
            let a = mk(3, &mut rng);
            let b = mk(5, &mut rng);
            let (x, y) = sequence_crossover(&a, &b, &mut rng);
            for m in [x, y] {
                assert!((1..=7).contains(&m.len()));
                for v in m.vectors() {
                    assert!(CostTimeVector::new(v.t().to_vec(), v.b().to_vec()).is_ok());
                }
            }
        }
    }

    #[test]
    fn mutation_contracts() {
        let m = SequentialMechanism::new(vec![ctv(&[0.0, 0.0], &[0.5, 0.5])]).unwrap();
        let mut rng = stream_rng(4, &[]);
        let cfg = GAConfig { mutation_prob: 0.0, ..GAConfig::sequences(1) };
        assert_eq!(sequence_mutation(&m, &cfg, &mut rng), m);
        let cfg = GAConfig { mutation_prob: 1.0, ..GAConfig::sequences(1) };
        for _ in 0..500 {
            let out = sequence_mutation(&m, &cfg, &mut rng);
            for v in out.vectors() {
                assert!((v.b().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let p = perturb_gene(&m, 0.1, &mut rng);
        let b = p.vectors()[0].b();
        assert!(b.iter().all(|&x| (0.45 / 1.1 - 1e-12..=0.55 / 0.9 + 1e-12).contains(&x)));
    }

    #[test]
    fn pruning() {
        let unaffordable = ctv(&[0.0, 0.0], &[1.0, 0.0]);
        let cheap = ctv(&[0.0, 0.2], &[0.5, 0.5]);
        let m = SequentialMechanism::new(vec![unaffordable.clone(), cheap.clone(), cheap.clone()]).unwrap();
        let profiles = vec![vec![0.9, 0.9], vec![0.6, 0.99]];
        let p = prune_mechanism(&m, &profiles, 1e-4);
        assert_eq!(p.vectors(), &[cheap]);
        let only = SequentialMechanism::new(vec![unaffordable.clone()]).unwrap();
        assert_eq!(prune_mechanism(&only, &profiles, 1e-4), only);
        // unit price above the support maximum can never be accepted
        let pricey = SequentialMechanism::new(vec![ctv(&[0.5, 0.0], &[0.6, 0.4]), ctv(&[0.0, 0.0], &[0.5, 0.5])]).unwrap();
        let profiles = draw_profiles(&Prior::uniform(), 2, 500, 1);
        assert_eq!(prune_mechanism(&pricey, &profiles, 1e-4).len(), 1);
    }

    #[test]
    fn degenerate_ga_returns_initial_genome() {
        let cfg = GAConfig { population: 1, elite: 1, rounds: 0, ..GAConfig::curves(1) };
        let start = Curve::Polynomial(vec![0.25, 1.0]);
        let r = evolve_from(&cfg, &CurveCodec { kind: start.kind() }, vec![start.clone()], |c, _, _| c.eval(0.5)).unwrap();
        assert_eq!(r.best, start);
        assert!(r.trace.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(GAConfig { elite: 0, ..GAConfig::curves(1) }.validate().is_err());
        assert!(GAConfig { elite: 61, ..GAConfig::curves(1) }.validate().is_err());
        assert!(GAConfig { mutation_prob: 1.5, ..GAConfig::curves(1) }.validate().is_err());
        assert!(GAConfig::sequences(1).validate().is_ok());
    }

    #[test]
    fn curve_ga_fits_a_target_and_is_deterministic() {
        // deterministic fitness: negative squared distance to sin on a grid
        let target = |t: f64| (3.0 * t).sin() * 5.0;
        let fitness = |c: &Curve, _: u64, _: usize| -(0..=20).map(|i| (c.eval(i as f64 / 20.0) - target(i as f64 / 20.0)).powi(2)).sum::<f64>();
        let codec = CurveCodec { kind: CurveKind::PiecewiseLinear { segments: 5 } };
        let cfg = small_cfg(11);
        let a = evolve(&cfg, &codec, fitness).unwrap();
        let b = evolve(&cfg, &codec, fitness).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
        // elitism with a noiseless fitness: round best never drops
        assert!(a.trace.windows(2).all(|w| w[1].best >= w[0].best));
        assert!(a.best_fitness >= a.trace[0].best);
    }

    #[test]
    fn strict_runs_keep_every_individual_truthful() {
        let prior = Prior::new(Family::TwoPoint { low: 0.0, high: 1.0, p_low: 0.5 }).unwrap();
        let codec = SequenceCodec { prior: &prior, n: 3, filter: SequenceFilter::Strict, prune_profiles: 50, prune_l1: 1e-4 };
        let cfg = GAConfig { population: 30, elite: 15, rounds: 10, fitness_profiles: 50, holdout_profiles: 200, ..GAConfig::sequences(3) };
        let fitness = |m: &SequentialMechanism, seed: u64, samples: usize| {
            assert!(strict_filter(m));
            let profiles = draw_profiles(&prior, 3, samples, seed);
            -evaluate_on(&profiles, |v| sequential_unanimous(v, m), DelayObjective::Sum).mean
        };
        let r = evolve(&cfg, &codec, fitness).unwrap();
        assert!(r.population.iter().all(strict_filter));
    }
}

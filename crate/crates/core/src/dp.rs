//! Dynamic programs over a discretized money grid: the optimal unanimous
//! mechanism, the welfare partition `G(t)`, the performance upper bound for
//! largest unanimous mechanisms, and the one-directional offers heuristic.

use rayon::prelude::*;
use thiserror::Error;

pub use crate::mechanism::Objective;
use crate::priors::{Prior, PriorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("invalid discretization: {0}")]
    InvalidDiscretization(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

pub type Result<T> = std::result::Result<T, DpError>;

/// Grid resolution for the money axis (step `1/h`) and the utility axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub h: usize,
    pub u_levels: usize,
    pub objective: Objective,
}

impl Discretization {
    pub fn new(h: usize, u_levels: usize, objective: Objective) -> Result<Self> {
        if h < 10 {
            return Err(DpError::InvalidDiscretization(format!("H must be at least 10, got {h}")));
        }
        if u_levels < 1 {
            return Err(DpError::InvalidDiscretization("need at least one utility level".into()));
        }
        Ok(Discretization { h, u_levels, objective })
    }

    /// `h` money steps and as many utility levels.
    pub fn with_h(h: usize, objective: Objective) -> Result<Self> {
        Discretization::new(h, h, objective)
    }
}

/// A DP value with the policy that attains it.
///
/// For the unanimous DP the policy is the share vector; for the sequential
/// DPs it is the sequence of offers made while every agent keeps accepting.
#[derive(Debug, Clone, PartialEq)]
pub struct DPResult {
    pub value: f64,
    pub policy: Vec<f64>,
}

/// Acceptance probability and per-agent objective at each money grid point.
struct Grid {
    h: usize,
    accept: Vec<f64>,
    gain: Vec<f64>,
}

impl Grid {
    fn new(prior: &Prior, h: usize, objective: Objective) -> Result<Grid> {
        let (lo, hi) = prior.support();
        let mut accept = Vec::with_capacity(h + 1);
        let mut gain = Vec::with_capacity(h + 1);
        let mean = prior.mean();
        for i in 0..=h {
            let c = i as f64 / h as f64;
            let p = prior.accept_prob(c);
            accept.push(p);
            let g = match objective {
                Objective::Consumers => 1.0,
                Objective::Welfare if p <= 0.0 || c > hi => 0.0,
                Objective::Welfare if c < lo => mean - c,
                Objective::Welfare => prior.conditional_welfare(c)?,
            };
            gain.push(g);
        }
        Ok(Grid { h, accept, gain })
    }
}

/// Utility axis `{0, du, 2du, ...}` with linear interpolation.
struct UAxis {
    du: f64,
    levels: usize,
}

impl UAxis {
    fn new(grid: &Grid, n: usize, disc: &Discretization) -> UAxis {
        match disc.objective {
            Objective::Consumers => UAxis { du: 1.0, levels: n },
            Objective::Welfare => {
                let top = grid.gain.iter().cloned().fold(0.0, f64::max) * n as f64;
                let du = if top > 0.0 { top / disc.u_levels as f64 } else { 1.0 };
                UAxis { du, levels: disc.u_levels }
            }
        }
    }

    fn at(&self, j: usize) -> f64 {
        j as f64 * self.du
    }

    /// Interpolates column `m` of a `(levels+1) x (h+1)` row-major table at `u`.
    fn interp(&self, table: &[f64], width: usize, u: f64, m: usize) -> f64 {
        let pos = u / self.du;
        let j0 = (pos.floor() as usize).min(self.levels.saturating_sub(1));
        if self.levels == 0 {
            return table[m];
        }
        let frac = pos - j0 as f64;
        let a = table[j0 * width + m];
        let b = table[(j0 + 1) * width + m];
        a + frac * (b - a)
    }
}

/// Optimal unanimous mechanism: maximizes `P(all accept) * sum of w(c_i)`
/// over share vectors on the `1/H` grid, via `B(k, u, m)`.
pub fn optimal_unanimous(prior: &Prior, n: usize, disc: &Discretization) -> Result<DPResult> {
    if n == 0 {
        return Err(DpError::InvalidArgument("need at least one agent".into()));
    }
    let grid = Grid::new(prior, disc.h, disc.objective)?;
    let axis = UAxis::new(&grid, n, disc);
    let h = grid.h;
    let width = h + 1;
    let rows = axis.levels + 1;

    // layers[k-1] holds B(k, u_j, m) at index j * width + m
    let mut layers: Vec<Vec<f64>> = Vec::with_capacity(n);
    let base: Vec<f64> = (0..rows)
        .flat_map(|j| {
            let u = axis.at(j);
            let g = &grid;
            (0..width).map(move |m| g.accept[m] * (u + g.gain[m]))
        })
        .collect();
    layers.push(base);
    for _k in 2..=n {
        let prev = layers.last().expect("nonempty");
        let next: Vec<f64> = (0..rows)
            .into_par_iter()
            .flat_map_iter(|j| {
                let u = axis.at(j);
                let (grid, axis) = (&grid, &axis);
                (0..width).map(move |m| {
                    (0..=m)
                        .map(|c| grid.accept[c] * axis.interp(prev, width, u + grid.gain[c], m - c))
                        .fold(0.0, f64::max)
                })
            })
            .collect();
        layers.push(next);
    }

    // Walk the argmax from B(n, 0, H).
    let mut shares = Vec::with_capacity(n);
    let (mut u, mut m) = (0.0, h);
    for k in (2..=n).rev() {
        let prev = &layers[k - 2];
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..=m {
            let v = grid.accept[c] * axis.interp(prev, width, u + grid.gain[c], m - c);
            if v > best.0 {
                best = (v, c);
            }
        }
        shares.push(best.1 as f64 / h as f64);
        u += grid.gain[best.1];
        m -= best.1;
    }
    shares.push(m as f64 / h as f64);
    let value = layers[n - 1][h];
    Ok(DPResult { value, policy: shares })
}

/// `G(t)`: the best total objective of `t` agents who all accept shares
/// summing to one. `t` for the consumers objective.
pub fn welfare_partition(prior: &Prior, t: usize, h: usize, objective: Objective) -> Result<f64> {
    if t == 0 {
        return Err(DpError::InvalidArgument("partition needs t >= 1".into()));
    }
    if objective == Objective::Consumers {
        return Ok(t as f64);
    }
    let grid = Grid::new(prior, h, objective)?;
    Ok(partition_table(&grid, t)[t - 1])
}

/// `G(1..=t)` on the grid.
fn partition_table(grid: &Grid, t: usize) -> Vec<f64> {
    let h = grid.h;
    let mut g = grid.gain.clone();
    let mut out = vec![g[h]];
    for _ in 2..=t {
        g = (0..=h)
            .map(|m| (0..=m).map(|c| grid.gain[c] + g[m - c]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        out.push(g[h]);
    }
    out
}

/// Upper bound `U(n, n, 1, 0)` on the expected objective of every largest
/// unanimous mechanism, from the Markov process over (agents, agents yet to
/// be offered, money still needed, lower bounds of those yet to be offered).
///
/// The policy is the offer sequence along the all-accept path.
pub fn excludable_upper_bound(prior: &Prior, n: usize, disc: &Discretization) -> Result<DPResult> {
    if prior.is_discrete() {
        return Err(PriorError::DiscretePrior.into());
    }
    if n == 0 {
        return Err(DpError::InvalidArgument("need at least one agent".into()));
    }
    let grid = Grid::new(prior, disc.h, disc.objective)?;
    let h = grid.h;
    let width = h + 1;
    let g = match disc.objective {
        Objective::Consumers => (1..=n).map(|t| t as f64).collect(),
        Objective::Welfare => partition_table(&grid, n),
    };
    let inv_accept: Vec<f64> = grid.accept.iter().map(|&p| if p > 0.0 { 1.0 / p } else { 0.0 }).collect();

    // U(t-1, t-1, 1, l) for every l; zero for a single agent.
    let mut restart = vec![0.0; width];
    let mut top_layers: Vec<Vec<f64>> = Vec::new();
    for t in 2..=n {
        // U(t, 1, m, l) at index m * width + l, valid for l <= m
        let mut layer: Vec<f64> = vec![0.0; width * width];
        for m in 0..=h {
            for l in 0..=m {
                let r = grid.accept[m] * inv_accept[l];
                let reject = restart[h - m];
                layer[m * width + l] = reject + r * (g[t - 1] - reject);
            }
        }
        let mut layers = vec![layer];
        for _k in 2..=t {
            let prev = layers.last().expect("nonempty");
            let restart = &restart;
            let grid = &grid;
            let inv = &inv_accept;
            let next: Vec<f64> = (0..=h)
                .into_par_iter()
                .flat_map_iter(move |m| {
                    (0..width).map(move |l| {
                        if l > m {
                            return 0.0;
                        }
                        let mut best = f64::NEG_INFINITY;
                        for ls in 0..=l {
                            let rest_l = l - ls;
                            let reject = restart[h - m + rest_l];
                            let scale = inv[ls];
                            // remaining money must cover the remaining lower bounds
                            for cs in ls..=(m - rest_l) {
                                let accept = prev[(m - cs) * width + rest_l];
                                let v = reject + grid.accept[cs] * scale * (accept - reject);
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        best
                    })
                })
                .collect();
            layers.push(next);
        }
        let full = layers.last().expect("nonempty");
        restart = (0..width).map(|l| full[h * width + l]).collect();
        if t == n {
            top_layers = layers;
        }
    }
    if n == 1 {
        return Ok(DPResult { value: 0.0, policy: vec![1.0] });
    }

    // All-accept path from (n, n, H, 0): lower bounds stay at zero.
    let mut policy = Vec::with_capacity(n);
    let mut m = h;
    for k in (2..=n).rev() {
        let prev = &top_layers[k - 2];
        let mut best = (f64::NEG_INFINITY, 0);
        for cs in 0..=m {
            let v = grid.accept[cs] * prev[(m - cs) * width];
            if v > best.0 {
                best = (v, cs);
            }
        }
        policy.push(best.1 as f64 / h as f64);
        m -= best.1;
    }
    policy.push(m as f64 / h as f64);
    let value = top_layers[n - 1][h * width];
    Ok(DPResult { value, policy })
}

/// One-directional offers: each agent gets a single take-it-or-leave-it
/// offer depending on agents left, cumulated objective and money still
/// needed; rejecting agents leave. The project is built (and every accepting
/// agent consumes) only if the full cost is raised by the end.
///
/// The policy is the offer sequence while every agent keeps accepting.
pub fn one_directional_offers(prior: &Prior, n: usize, disc: &Discretization) -> Result<DPResult> {
    if n == 0 {
        return Err(DpError::InvalidArgument("need at least one agent".into()));
    }
    let grid = Grid::new(prior, disc.h, disc.objective)?;
    let axis = UAxis::new(&grid, n, disc);
    let h = grid.h;
    let width = h + 1;
    let rows = axis.levels + 1;

    // V(0, m, u) = u iff the money has been raised
    let mut layers: Vec<Vec<f64>> = vec![(0..rows)
        .flat_map(|j| (0..width).map(move |m| if m == 0 { j as f64 } else { 0.0 }))
        .map(|x| x * axis.du)
        .collect()];
    for _j in 1..=n {
        let prev = layers.last().expect("nonempty");
        let (grid, axis) = (&grid, &axis);
        let next: Vec<f64> = (0..rows)
            .into_par_iter()
            .flat_map_iter(move |ju| {
                let u = axis.at(ju);
                (0..width).map(move |m| {
                    let reject = prev[ju * width + m];
                    (0..=m)
                        .map(|c| {
                            let p = grid.accept[c];
                            p * axis.interp(prev, width, u + grid.gain[c], m - c) + (1.0 - p) * reject
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
            })
            .collect();
        layers.push(next);
    }

    let mut policy = Vec::with_capacity(n);
    let (mut u, mut m) = (0.0, h);
    for j in (1..=n).rev() {
        let prev = &layers[j - 1];
        let reject = axis.interp(prev, width, u, m);
        // the last agent can only usefully be asked for everything still missing
        let first = if j == 1 { m } else { 0 };
        let mut best = (f64::NEG_INFINITY, 0);
        for c in first..=m {
            let p = grid.accept[c];
            let v = p * axis.interp(prev, width, u + grid.gain[c], m - c) + (1.0 - p) * reject;
            if v > best.0 {
                best = (v, c);
            }
        }
        policy.push(best.1 as f64 / h as f64);
        u += grid.gain[best.1];
        m -= best.1;
    }
    Ok(DPResult { value: layers[n][h], policy })
}

//! Binary public project mechanisms: conservative equal costs, unanimous
//! cost-share vectors, serial cost sharing, and table-driven largest
//! unanimous mechanisms.

use std::fmt::Write as _;
use thiserror::Error;

use crate::mechanism::BinaryOutcome;

/// Largest agent count with an explicit per-coalition table.
pub const MAX_TABLE_AGENTS: usize = 12;

const SHARE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostShareError {
    #[error("invalid cost shares: {0}")]
    InvalidShares(String),
    #[error("invalid cost-share spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, CostShareError>;

/// Nonnegative shares summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CostShareVector(Vec<f64>);

impl CostShareVector {
    pub fn new(shares: Vec<f64>) -> Result<Self> {
        if shares.is_empty() {
            return Err(CostShareError::InvalidShares("empty share vector".into()));
        }
        if shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(CostShareError::InvalidShares(format!("negative or non-finite share in {shares:?}")));
        }
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > SHARE_TOL {
            return Err(CostShareError::InvalidShares(format!("shares sum to {total}, not 1")));
        }
        Ok(CostShareVector(shares))
    }

    pub fn equal(k: usize) -> Self {
        CostShareVector(vec![1.0 / k as f64; k])
    }

    pub fn shares(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `(I, K)` for a value vector: `K` is the largest `k` such that at least
/// `k` values are `>= 1/k` (0 if none), and `I = 1` iff `K >= 1`.
pub fn coalition_feasibility(values: &[f64]) -> (u8, usize) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = largest_feasible_k(&sorted);
    (u8::from(k > 0), k)
}

/// `K` for values already sorted in descending order.
pub(crate) fn largest_feasible_k(sorted_desc: &[f64]) -> usize {
    (1..=sorted_desc.len())
        .rev()
        .find(|&k| sorted_desc[k - 1] >= 1.0 / k as f64)
        .unwrap_or(0)
}

/// Agent indices ordered by value descending, ties by lowest index.
pub(crate) fn rank_agents(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Builds iff every agent values the project at least `1/n`; then everyone
/// consumes and pays `1/n`.
pub fn conservative_equal_cost(values: &[f64]) -> BinaryOutcome {
    let n = values.len();
    let share = 1.0 / n as f64;
    if values.iter().all(|&v| v >= share) {
        BinaryOutcome::built_with(n, (0..n).collect(), &vec![share; n])
    } else {
        BinaryOutcome::not_built(n)
    }
}

/// Builds iff `v_i >= c_i` for all agents.
pub fn unanimous(values: &[f64], shares: &CostShareVector) -> Result<BinaryOutcome> {
    let n = values.len();
    if shares.len() != n {
        return Err(CostShareError::InvalidShares(format!(
            "{} shares for {n} agents",
            shares.len()
        )));
    }
    let accept = values.iter().zip(shares.shares()).all(|(v, c)| v >= c);
    Ok(if accept {
        BinaryOutcome::built_with(n, (0..n).collect(), shares.shares())
    } else {
        BinaryOutcome::not_built(n)
    })
}

/// Moulin's serial cost sharing: the `K(v)` highest-value agents consume
/// and each pays `1/K(v)`.
pub fn serial_cost_sharing(values: &[f64]) -> BinaryOutcome {
    let n = values.len();
    let order = rank_agents(values);
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let k = largest_feasible_k(&sorted);
    if k == 0 {
        return BinaryOutcome::not_built(n);
    }
    BinaryOutcome::built_with(n, order[..k].to_vec(), &vec![1.0 / k as f64; k])
}

/// A monotone violation: `agent`'s share rises from `subset` to `superset`...
/// i.e. is lower in the smaller coalition than in the larger one.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneViolation {
    pub subset: u32,
    pub superset: u32,
    pub agent: usize,
    pub subset_share: f64,
    pub superset_share: f64,
}

/// Per-coalition cost shares for a largest unanimous mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum CostShareSpec {
    /// Explicit table indexed by coalition bitmask; entry `mask` lists the
    /// members' shares in ascending agent order. Index 0 is unused.
    Table { n: usize, shares: Vec<Vec<f64>> },
    /// Equal split `1/|S|` for every coalition (serial cost sharing).
    Equal { n: usize },
}

fn members(mask: u32) -> impl Iterator<Item = usize> {
    (0..32).filter(move |i| mask & (1 << i) != 0)
}

fn share_of(table: &[Vec<f64>], mask: u32, agent: usize) -> f64 {
    let pos = (mask & ((1u32 << agent) - 1)).count_ones() as usize;
    table[mask as usize][pos]
}

impl CostShareSpec {
    /// Validated explicit table.
    pub fn from_table(n: usize, shares: Vec<Vec<f64>>) -> Result<Self> {
        check_table_shape(n, &shares)?;
        let violations = validate_spec(n, &shares);
        if let Some(v) = violations.first() {
            return Err(CostShareError::InvalidSpec(format!(
                "agent {}'s share is {} in coalition {:#b} but {} in its superset {:#b} ({} violations)",
                v.agent,
                v.subset_share,
                v.subset,
                v.superset_share,
                v.superset,
                violations.len()
            )));
        }
        Ok(CostShareSpec::Table { n, shares })
    }

    /// Table built from a rule `shares(coalition members) -> shares`.
    pub fn from_rule<F: Fn(&[usize]) -> Vec<f64>>(n: usize, rule: F) -> Result<Self> {
        if n == 0 || n > MAX_TABLE_AGENTS {
            return Err(CostShareError::InvalidSpec(format!("explicit tables need 1 <= n <= {MAX_TABLE_AGENTS}")));
        }
        let mut shares = vec![Vec::new(); 1 << n];
        for mask in 1u32..(1 << n) {
            let m: Vec<usize> = members(mask).collect();
            shares[mask as usize] = rule(&m);
        }
        CostShareSpec::from_table(n, shares)
    }

    pub fn equal(n: usize) -> Self {
        CostShareSpec::Equal { n }
    }

    /// The equal-split rule materialized as a table (n <= 12).
    pub fn equal_table(n: usize) -> Result<Self> {
        CostShareSpec::from_rule(n, |m| vec![1.0 / m.len() as f64; m.len()])
    }

    pub fn n(&self) -> usize {
        match self {
            CostShareSpec::Table { n, .. } | CostShareSpec::Equal { n } => *n,
        }
    }

    /// Shares faced by `coalition` members (ascending agent order).
    pub fn shares_for(&self, coalition: &[usize]) -> Vec<f64> {
        match self {
            CostShareSpec::Equal { .. } => vec![1.0 / coalition.len() as f64; coalition.len()],
            CostShareSpec::Table { shares, .. } => {
                let mask = coalition.iter().fold(0u32, |m, &i| m | (1 << i));
                shares[mask as usize].clone()
            }
        }
    }

    /// Text form: one line per coalition, `bitmask share share ...`.
    pub fn to_text(&self) -> String {
        let n = self.n();
        let mut out = format!("# n={n}\n");
        for mask in 1u32..(1u32 << n) {
            let m: Vec<usize> = members(mask).collect();
            let s = self.shares_for(&m);
            let _ = write!(out, "{mask}");
            for x in s {
                let _ = write!(out, " {x:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`CostShareSpec::to_text`] output and validates it.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut n = None;
        let mut rows: Vec<(u32, Vec<f64>)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# n=") {
                n = Some(rest.trim().parse::<usize>().map_err(|e| {
                    CostShareError::InvalidSpec(format!("line {}: bad agent count: {e}", lineno + 1))
                })?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let bad = |what: &str| CostShareError::InvalidSpec(format!("line {}: {what}", lineno + 1));
            let mask: u32 = fields.next().ok_or_else(|| bad("missing mask"))?.parse().map_err(|_| bad("bad mask"))?;
            let shares = fields
                .map(|f| f.parse::<f64>().map_err(|_| bad("bad share")))
                .collect::<Result<Vec<_>>>()?;
            rows.push((mask, shares));
        }
        let n = n.ok_or_else(|| CostShareError::InvalidSpec("missing '# n=' header".into()))?;
        if n == 0 || n > MAX_TABLE_AGENTS {
            return Err(CostShareError::InvalidSpec(format!("n={n} outside 1..={MAX_TABLE_AGENTS}")));
        }
        let mut shares = vec![Vec::new(); 1 << n];
        for (mask, s) in rows {
            if mask == 0 || mask as usize >= shares.len() {
                return Err(CostShareError::InvalidSpec(format!("mask {mask} out of range for n={n}")));
            }
            shares[mask as usize] = s;
        }
        CostShareSpec::from_table(n, shares)
    }
}

fn check_table_shape(n: usize, shares: &[Vec<f64>]) -> Result<()> {
    if n == 0 || n > MAX_TABLE_AGENTS {
        return Err(CostShareError::InvalidSpec(format!("explicit tables need 1 <= n <= {MAX_TABLE_AGENTS}")));
    }
    if shares.len() != 1 << n {
        return Err(CostShareError::InvalidSpec(format!("table has {} rows, expected {}", shares.len(), 1 << n)));
    }
    for mask in 1u32..(1 << n) {
        let row = &shares[mask as usize];
        if row.len() != mask.count_ones() as usize {
            return Err(CostShareError::InvalidSpec(format!("coalition {mask:#b} has {} shares", row.len())));
        }
        CostShareVector::new(row.clone())
            .map_err(|e| CostShareError::InvalidSpec(format!("coalition {mask:#b}: {e}")))?;
    }
    Ok(())
}

/// Every `(S, T, i)` with `S ⊊ T`, `i ∈ S`, where `i`'s share under `S` is
/// below its share under `T`. Expects a well-shaped table.
pub fn validate_spec(n: usize, shares: &[Vec<f64>]) -> Vec<MonotoneViolation> {
    let mut out = Vec::new();
    let full = (1u32 << n) - 1;
    for superset in 1u32..=full {
        // proper nonempty subsets of `superset`
        let mut subset = (superset - 1) & superset;
        while subset != 0 {
            for agent in members(subset) {
                let small = share_of(shares, subset, agent);
                let large = share_of(shares, superset, agent);
                if small < large - SHARE_TOL {
                    out.push(MonotoneViolation {
                        subset,
                        superset,
                        agent,
                        subset_share: small,
                        superset_share: large,
                    });
                }
            }
            subset = (subset - 1) & superset;
        }
    }
    out
}

/// Largest unanimous mechanism: starting from the grand coalition, drop
/// every agent whose current share exceeds her value until the remaining
/// agents all accept (built) or nobody is left.
pub fn largest_unanimous(values: &[f64], spec: &CostShareSpec) -> BinaryOutcome {
    let n = values.len();
    assert_eq!(spec.n(), n, "spec built for {} agents, profile has {n}", spec.n());
    let mut coalition: Vec<usize> = (0..n).collect();
    while !coalition.is_empty() {
        let shares = spec.shares_for(&coalition);
        let keep: Vec<usize> = coalition
            .iter()
            .zip(&shares)
            .filter(|(&i, &c)| values[i] >= c)
            .map(|(&i, _)| i)
            .collect();
        if keep.len() == coalition.len() {
            return BinaryOutcome::built_with(n, coalition, &shares);
        }
        coalition = keep;
    }
    BinaryOutcome::not_built(n)
}

//! Valuation priors on a bounded interval.
//!
//! Continuous families that live on a wider domain (normal, exponential,
//! logistic) are truncated to the support and renormalized, so sampled values
//! always stay inside it. `TwoPoint` is an exact two-atom law; density queries
//! are rejected for it.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::numeric::{integrate, stream_rng, QUAD_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("density is undefined for a discrete prior")]
    DiscretePrior,
    #[error("value {x} outside support [{lo}, {hi}]")]
    OutOfSupport { x: f64, lo: f64, hi: f64 },
    #[error("no probability mass at or above cost share {c}")]
    ZeroAcceptanceMass { c: f64 },
    #[error("invalid prior parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, PriorError>;

/// Distribution family and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Uniform { lo: f64, hi: f64 },
    TruncatedNormal { mean: f64, sd: f64 },
    TruncatedExponential { rate: f64 },
    TruncatedLogistic { loc: f64, scale: f64 },
    /// With probability `weight` a draw from the first truncated normal,
    /// otherwise from the second.
    TwoPeak { mean1: f64, sd1: f64, mean2: f64, sd2: f64, weight: f64 },
    Beta { alpha: f64, beta: f64 },
    /// `low` with probability `p_low`, `high` otherwise.
    TwoPoint { low: f64, high: f64, p_low: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Uniform { .. } => "uniform",
            Family::TruncatedNormal { .. } => "normal",
            Family::TruncatedExponential { .. } => "exponential",
            Family::TruncatedLogistic { .. } => "logistic",
            Family::TwoPeak { .. } => "two-peak",
            Family::Beta { .. } => "beta",
            Family::TwoPoint { .. } => "two-point",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Family::Uniform { lo, hi } => vec![lo, hi],
            Family::TruncatedNormal { mean, sd } => vec![mean, sd],
            Family::TruncatedExponential { rate } => vec![rate],
            Family::TruncatedLogistic { loc, scale } => vec![loc, scale],
            Family::TwoPeak { mean1, sd1, mean2, sd2, weight } => vec![mean1, sd1, mean2, sd2, weight],
            Family::Beta { alpha, beta } => vec![alpha, beta],
            Family::TwoPoint { low, high, p_low } => vec![low, high, p_low],
        }
    }

    /// Builds a family from the name/parameter-list form used in configs.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Family> {
        let want = |k: usize| {
            if params.len() == k {
                Ok(())
            } else {
                Err(PriorError::InvalidParameter(format!(
                    "{name} takes {k} parameters, got {}",
                    params.len()
                )))
            }
        };
        let family = match name {
            "uniform" => {
                want(2)?;
                Family::Uniform { lo: params[0], hi: params[1] }
            }
            "normal" => {
                want(2)?;
                Family::TruncatedNormal { mean: params[0], sd: params[1] }
            }
            "exponential" => {
                want(1)?;
                Family::TruncatedExponential { rate: params[0] }
            }
            "logistic" => {
                want(2)?;
                Family::TruncatedLogistic { loc: params[0], scale: params[1] }
            }
            "two-peak" => {
                want(5)?;
                Family::TwoPeak {
                    mean1: params[0],
                    sd1: params[1],
                    mean2: params[2],
                    sd2: params[3],
                    weight: params[4],
                }
            }
            "beta" => {
                want(2)?;
                Family::Beta { alpha: params[0], beta: params[1] }
            }
            "two-point" => {
                want(3)?;
                Family::TwoPoint { low: params[0], high: params[1], p_low: params[2] }
            }
            other => return Err(PriorError::InvalidParameter(format!("unknown family {other:?}"))),
        };
        Ok(family)
    }
}

/// A valuation prior restricted to a closed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    family: Family,
    lo: f64,
    hi: f64,
    // Untruncated CDF at the support endpoints, per component.
    base_lo: [f64; 2],
    base_mass: [f64; 2],
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Prior {
    /// A prior on its default support: `[lo, hi]` for uniform, `[0, 1]` otherwise.
    pub fn new(family: Family) -> Result<Prior> {
        let (lo, hi) = match family {
            Family::Uniform { lo, hi } => (lo, hi),
            _ => (0.0, 1.0),
        };
        Prior::with_support(family, lo, hi)
    }

    /// A prior truncated to `[lo, hi]`.
    pub fn with_support(family: Family, lo: f64, hi: f64) -> Result<Prior> {
        let bad = |msg: &str| Err(PriorError::InvalidParameter(msg.to_string()));
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad("support must be a finite interval with lo < hi");
        }
        match family {
            Family::Uniform { lo: a, hi: b } => {
                if a != lo || b != hi {
                    return bad("uniform support must match its parameters");
                }
            }
            Family::TruncatedNormal { sd, mean } => {
                if !(sd > 0.0 && mean.is_finite()) {
                    return bad("normal needs sd > 0");
                }
            }
            Family::TruncatedExponential { rate } => {
                if !(rate > 0.0) {
                    return bad("exponential needs rate > 0");
                }
            }
            Family::TruncatedLogistic { scale, loc } => {
                if !(scale > 0.0 && loc.is_finite()) {
                    return bad("logistic needs scale > 0");
                }
            }
            Family::TwoPeak { sd1, sd2, weight, mean1, mean2 } => {
                if !(sd1 > 0.0 && sd2 > 0.0 && (0.0..=1.0).contains(&weight)) || !(mean1.is_finite() && mean2.is_finite()) {
                    return bad("two-peak needs positive sds and weight in [0, 1]");
                }
            }
            Family::Beta { alpha, beta } => {
                if !(alpha > 0.0 && beta > 0.0) {
                    return bad("beta needs positive shape parameters");
                }
                if lo < 0.0 || hi > 1.0 {
                    return bad("beta support must lie within [0, 1]");
                }
            }
            Family::TwoPoint { low, high, p_low } => {
                if !(low < high && low >= lo && high <= hi && (0.0..=1.0).contains(&p_low)) {
                    return bad("two-point needs lo <= low < high <= hi and p_low in [0, 1]");
                }
            }
        }
        let mut prior = Prior { family, lo, hi, base_lo: [0.0; 2], base_mass: [1.0; 2] };
        for comp in 0..prior.components() {
            let a = prior.base_cdf(comp, lo);
            let b = prior.base_cdf(comp, hi);
            if !(b - a > 0.0) {
                return bad("family has no mass on the support");
            }
            prior.base_lo[comp] = a;
            prior.base_mass[comp] = b - a;
        }
        Ok(prior)
    }

    pub fn uniform() -> Prior {
        Prior::new(Family::Uniform { lo: 0.0, hi: 1.0 }).expect("valid")
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.family, Family::TwoPoint { .. })
    }

    fn components(&self) -> usize {
        match self.family {
            Family::TwoPeak { .. } => 2,
            Family::TwoPoint { .. } => 0,
            _ => 1,
        }
    }

    fn base_cdf(&self, comp: usize, x: f64) -> f64 {
        match self.family {
            Family::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Family::TruncatedNormal { mean, sd } => std_normal_cdf((x - mean) / sd),
            Family::TruncatedExponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Family::TruncatedLogistic { loc, scale } => 1.0 / (1.0 + (-(x - loc) / scale).exp()),
            Family::TwoPeak { mean1, sd1, mean2, sd2, .. } => {
                let (m, s) = if comp == 0 { (mean1, sd1) } else { (mean2, sd2) };
                std_normal_cdf((x - m) / s)
            }
            Family::Beta { alpha, beta } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    beta_reg(alpha, beta, x)
                }
            }
            Family::TwoPoint { .. } => unreachable!("discrete prior has no base density"),
        }
    }

    fn base_pdf(&self, comp: usize, x: f64) -> f64 {
        match self.family {
            Family::Uniform { lo, hi } => 1.0 / (hi - lo),
            Family::TruncatedNormal { mean, sd } => std_normal_pdf((x - mean) / sd) / sd,
            Family::TruncatedExponential { rate } => rate * (-rate * x).exp(),
            Family::TruncatedLogistic { loc, scale } => {
                let e = (-(x - loc) / scale).exp();
                e / (scale * (1.0 + e).powi(2))
            }
            Family::TwoPeak { mean1, sd1, mean2, sd2, .. } => {
                let (m, s) = if comp == 0 { (mean1, sd1) } else { (mean2, sd2) };
                std_normal_pdf((x - m) / s) / s
            }
            Family::Beta { alpha, beta } => {
                let ln = (alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - ln_beta(alpha, beta);
                ln.exp()
            }
            Family::TwoPoint { .. } => unreachable!("discrete prior has no base density"),
        }
    }

    fn weight(&self, comp: usize) -> f64 {
        match self.family {
            Family::TwoPeak { weight, .. } => {
                if comp == 0 {
                    weight
                } else {
                    1.0 - weight
                }
            }
            _ => 1.0,
        }
    }

    /// Density at `x`.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        if self.is_discrete() {
            return Err(PriorError::DiscretePrior);
        }
        if !(self.lo..=self.hi).contains(&x) {
            return Err(PriorError::OutOfSupport { x, lo: self.lo, hi: self.hi });
        }
        Ok((0..self.components())
            .map(|c| self.weight(c) * self.base_pdf(c, x) / self.base_mass[c])
            .sum())
    }

    /// Cumulative distribution function; arguments outside the support are clamped.
    pub fn cdf(&self, x: f64) -> f64 {
        if let Family::TwoPoint { low, high, p_low } = self.family {
            return if x < low {
                0.0
            } else if x < high {
                p_low
            } else {
                1.0
            };
        }
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let v: f64 = (0..self.components())
            .map(|c| self.weight(c) * (self.base_cdf(c, x) - self.base_lo[c]) / self.base_mass[c])
            .sum();
        v.clamp(0.0, 1.0)
    }

    /// `1 - F(x)`.
    pub fn reliability(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    /// Probability that a draw is at least `x`, i.e. that an agent accepts a
    /// take-it-or-leave-it price of `x`. Equals the reliability for
    /// continuous priors; includes the atom at `x` for `TwoPoint`.
    pub fn accept_prob(&self, x: f64) -> f64 {
        if let Family::TwoPoint { low, high, p_low } = self.family {
            return if x <= low {
                1.0
            } else if x <= high {
                1.0 - p_low
            } else {
                0.0
            };
        }
        self.reliability(x)
    }

    /// Expected surplus `E[X - c | X >= c]` of an agent whose share is `c`.
    ///
    /// At the top of the support the surplus is empty and `0` is returned.
    pub fn conditional_welfare(&self, c: f64) -> Result<f64> {
        if !(self.lo..=self.hi).contains(&c) {
            return Err(PriorError::OutOfSupport { x: c, lo: self.lo, hi: self.hi });
        }
        if let Family::TwoPoint { low, high, p_low } = self.family {
            let mass = self.accept_prob(c);
            if mass <= 0.0 {
                return Err(PriorError::ZeroAcceptanceMass { c });
            }
            let mut surplus = 0.0;
            if low >= c {
                surplus += p_low * (low - c);
            }
            if high >= c {
                surplus += (1.0 - p_low) * (high - c);
            }
            return Ok(surplus / mass);
        }
        if c >= self.hi {
            return Ok(0.0);
        }
        let mass = self.reliability(c);
        if mass <= 0.0 {
            return Err(PriorError::ZeroAcceptanceMass { c });
        }
        // int_c^hi (x - c) f(x) dx == int_c^hi (1 - F(x)) dx
        let surplus = integrate(|x| self.reliability(x), c, self.hi, QUAD_TOL);
        Ok(surplus / mass)
    }

    /// `E[X]`.
    pub fn mean(&self) -> f64 {
        self.lo + integrate(|x| self.reliability(x), self.lo, self.hi, QUAD_TOL)
    }

    /// Inverse CDF for a uniform variate `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let (lo, hi) = (self.lo, self.hi);
        let x = match self.family {
            Family::Uniform { lo, hi } => lo + u * (hi - lo),
            Family::TwoPoint { low, high, p_low } => {
                if u < p_low {
                    low
                } else {
                    high
                }
            }
            Family::TruncatedNormal { mean, sd } => {
                let p = self.base_lo[0] + u * self.base_mass[0];
                mean + sd * std_normal_inverse(p)
            }
            Family::TruncatedExponential { rate } => {
                let p = self.base_lo[0] + u * self.base_mass[0];
                -(-p).ln_1p() / rate
            }
            Family::TruncatedLogistic { loc, scale } => {
                let p = self.base_lo[0] + u * self.base_mass[0];
                loc + scale * (p / (1.0 - p)).ln()
            }
            Family::Beta { alpha, beta } if lo == 0.0 && hi == 1.0 => {
                if alpha == 0.5 && beta == 0.5 {
                    (0.5 * std::f64::consts::PI * u).sin().powi(2)
                } else if beta == 1.0 {
                    u.powf(1.0 / alpha)
                } else if alpha == 1.0 {
                    1.0 - (1.0 - u).powf(1.0 / beta)
                } else {
                    self.bisect_quantile(u)
                }
            }
            _ => self.bisect_quantile(u),
        };
        x.clamp(lo, hi)
    }

    fn bisect_quantile(&self, u: f64) -> f64 {
        let (mut a, mut b) = (self.lo, self.hi);
        while b - a > 1e-10 {
            let m = 0.5 * (a + b);
            if self.cdf(m) < u {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    /// One draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            Family::TwoPeak { mean1, sd1, mean2, sd2, weight } => {
                let comp = if rng.gen::<f64>() < weight { 0 } else { 1 };
                let (m, s) = if comp == 0 { (mean1, sd1) } else { (mean2, sd2) };
                let p = self.base_lo[comp] + rng.gen::<f64>() * self.base_mass[comp];
                (m + s * std_normal_inverse(p)).clamp(self.lo, self.hi)
            }
            _ => self.quantile(rng.gen::<f64>()),
        }
    }

    /// `count` i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.draw(rng)).collect()
    }

    /// `count` i.i.d. draws from a fresh RNG seeded by `seed`.
    pub fn sample_seeded(&self, seed: u64, count: usize) -> Vec<f64> {
        self.sample(&mut stream_rng(seed, &[]), count)
    }
}

fn std_normal_inverse(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

//! Mechanism design for binary public projects: cost-sharing mechanisms,
//! dynamic-programming optimizers, release-delay mechanisms, evolutionary
//! search, VCG redistribution and an offender/defender market.

pub mod costshare;
pub mod delay;
pub mod dp;
pub mod evolve;
pub mod market;
pub mod mechanism;
pub mod numeric;
pub mod priors;
pub mod redist;

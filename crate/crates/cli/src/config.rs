//! Experiment configuration: a TOML file with top-level run settings and
//! `[prior]`, `[mechanism]`, `[dp]` and `[ga]` sections. Every field has a
//! default, so an empty file is a valid config.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; defaults to all cores. Never affects results.
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub n: usize,
    /// consumers | welfare | sum-delay | max-delay | ratio | revenue.
    /// Defaults to the first one that fits the mechanism.
    pub objective: Option<String>,
    /// Monte Carlo profiles for `evaluate` and the tables.
    pub samples: usize,
    /// Trials per property in `check`.
    pub trials: usize,
    /// Property tolerance; 1e-9 (1e-6 for AMA) when unset.
    pub tolerance: Option<f64>,
    pub prior: PriorSection,
    pub mechanism: MechanismSection,
    pub dp: DpSection,
    pub ga: GaSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            threads: None,
            out: None,
            n: 3,
            objective: None,
            samples: 100_000,
            trials: 10_000,
            tolerance: None,
            prior: PriorSection::default(),
            mechanism: MechanismSection::default(),
            dp: DpSection::default(),
            ga: GaSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    /// uniform | normal | exponential | logistic | two-peak | beta | two-point
    pub family: String,
    pub params: Vec<f64>,
    /// Truncation interval; `[lo, hi]` for uniform and `[0, 1]` otherwise.
    pub support: Option<[f64; 2]>,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection { family: "uniform".into(), params: vec![0.0, 1.0], support: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanismSection {
    /// cec | scs | unanimous | largest-unanimous | scs-delay | single-deadline |
    /// multiple-deadline | sequence | redistribution | ama | optimal-market
    pub kind: String,
    /// Share vector for `unanimous`.
    pub shares: Option<Vec<f64>>,
    /// Cost-share table file for `largest-unanimous` (equal split if unset).
    /// Sequence CSV for `sequence`, h CSV for `redistribution`, spec row for
    /// `ama`.
    pub file: Option<PathBuf>,
    pub deadline: Option<f64>,
    pub deadlines: Option<Vec<f64>>,
    /// Inline AMA spec (VCG when no curve is given).
    pub u_defender: f64,
    pub curve: Option<String>,
    pub coefficients: Option<Vec<f64>>,
    /// Outcome grid for market mechanisms.
    pub grid: usize,
}

impl Default for MechanismSection {
    fn default() -> Self {
        MechanismSection {
            kind: "scs".into(),
            shares: None,
            file: None,
            deadline: None,
            deadlines: None,
            u_defender: 1.0,
            curve: None,
            coefficients: None,
            grid: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSection {
    /// unanimous | upper-bound | one-directional
    pub solver: String,
    pub h: usize,
    /// Utility levels for the welfare bound; `h` when unset.
    pub u_levels: Option<usize>,
}

impl Default for DpSection {
    fn default() -> Self {
        DpSection { solver: "unanimous".into(), h: 200, u_levels: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaSection {
    /// sequences | curves | redistribution
    pub target: String,
    /// strict | loose (sequences)
    pub filter: String,
    pub loose_profiles: usize,
    /// Curve tag (curves): piecewise-K, polynomial-D or fourier-N-P.
    pub curve: String,
    /// Defender weights tried (curves).
    pub weights: Vec<f64>,
    /// identity | c1 | c7 | c8 (redistribution)
    pub combo: String,
    pub knots: usize,
    /// expectation | worst-case (redistribution)
    pub redist_objective: String,
    pub population: Option<usize>,
    pub elite: Option<usize>,
    pub rounds: Option<usize>,
    pub fitness_profiles: Option<usize>,
    pub holdout_profiles: Option<usize>,
    pub mutation_prob: Option<f64>,
    pub mutation_delta: Option<f64>,
}

impl Default for GaSection {
    fn default() -> Self {
        GaSection {
            target: "sequences".into(),
            filter: "strict".into(),
            loose_profiles: 100,
            curve: "fourier-30-2".into(),
            weights: pubmech::market::DEFENDER_WEIGHTS.to_vec(),
            combo: "c1".into(),
            knots: 8,
            redist_objective: "expectation".into(),
            population: None,
            elite: None,
            rounds: None,
            fitness_profiles: None,
            holdout_profiles: None,
            mutation_prob: None,
            mutation_delta: None,
        }
    }
}

/// A parsed config plus its source text, kept for error line references.
#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: Option<(PathBuf, String)>,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            CliError::config(path.display().to_string(), line, e.message().to_string())
        })?;
        Ok(LoadedConfig { config, source: Some((path.to_path_buf(), text.to_string())) })
    }

    /// Validation error pointing at `section.key` when it appears in the file.
    pub fn invalid(&self, section: Option<&str>, key: &str, msg: impl Into<String>) -> CliError {
        match &self.source {
            Some((path, text)) => CliError::config(path.display().to_string(), locate(text, section, key), msg.into()),
            None => CliError::config("command line".into(), None, msg.into()),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of `key = ...` inside `[section]` (or before any section).
fn locate(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = Some(t.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            continue;
        }
        let Some((k, _)) = t.split_once('=') else { continue };
        if k.trim() == key && current.as_deref() == section {
            return Some(i + 1);
        }
    }
    None
}

impl ExperimentConfig {
    /// Short hash of everything that can change results (not threads or the
    /// output directory), combined with the command line that ran it.
    pub fn hash(&self, command: &str) -> String {
        let mut c = self.clone();
        c.threads = None;
        c.out = None;
        let text = toml::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(format!("{command}\n{text}").as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c = LoadedConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(c.config, ExperimentConfig::default());
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = LoadedConfig::parse("seed = 1\n\n[prior]\nfamly = \"beta\"\n", Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().starts_with("x.toml:4:"), "{err}");
    }

    #[test]
    fn locate_respects_sections() {
        let text = "n = 3\n[dp]\nh = 5\n[ga]\nrounds = 2\nh = 1\n";
        assert_eq!(locate(text, None, "n"), Some(1));
        assert_eq!(locate(text, Some("dp"), "h"), Some(3));
        assert_eq!(locate(text, Some("ga"), "h"), Some(6));
        assert_eq!(locate(text, Some("prior"), "h"), None);
    }

    #[test]
    fn hash_ignores_threads() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { threads: Some(3), ..a.clone() };
        assert_eq!(a.hash("table"), b.hash("table"));
        assert_ne!(a.hash("table"), ExperimentConfig { seed: 1, ..a.clone() }.hash("table"));
        assert_ne!(a.hash("table ch3-ub"), a.hash("table ch6-revenue"));
    }
}

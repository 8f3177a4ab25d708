use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", location(.file, *.line, .msg))]
    Config { file: String, line: Option<usize>, msg: String },
    #[error("cannot access {}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("{count} property violation(s); witnesses in {}", .report.display())]
    Violations { count: usize, report: PathBuf },
}

fn location(file: &str, line: Option<usize>, msg: &str) -> String {
    match line {
        Some(l) => format!("{file}:{l}: {msg}"),
        None => format!("{file}: {msg}"),
    }
}

impl CliError {
    pub fn config(file: String, line: Option<usize>, msg: String) -> Self {
        CliError::Config { file, line, msg }
    }

    /// 0 success, 1 configuration or runtime error, 2 property violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Violations { .. } => 2,
            _ => 1,
        }
    }
}

macro_rules! compute_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Compute(e.to_string())
            }
        }
    )*};
}

compute_from!(
    pubmech::dp::DpError,
    pubmech::delay::DelayError,
    pubmech::evolve::EvolveError,
    pubmech::redist::RedistError,
    pubmech::market::MarketError
);

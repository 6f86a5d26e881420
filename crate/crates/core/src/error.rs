use thiserror::Error;

/// A malformed input row, with its 1-based line number in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested quantity is unbounded (e.g. a zero margin needs an
    /// infinite budget) or the policy cannot run under the given budget.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Caller misuse: mismatched lengths, empty inputs, bad options.
    #[error("usage error: {0}")]
    Usage(String),

    /// A statistic is undefined for the given data (constant input,
    /// single cluster, zero decisive judgments).
    #[error("undefined: {0}")]
    Undefined(String),

    /// Structural problem with an input document.
    #[error("format error: {0}")]
    Format(String),

    #[error("{} malformed row(s): {}", .0.len(), join_rows(.0))]
    MalformedRows(Vec<RowError>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn join_rows(rows: &[RowError]) -> String {
    let shown: Vec<String> = rows.iter().take(5).map(ToString::to_string).collect();
    let mut out = shown.join("; ");
    if rows.len() > 5 {
        out.push_str(&format!("; ... ({} more)", rows.len() - 5));
    }
    out
}

pub type Result<T> = std::result::Result<T, Error>;

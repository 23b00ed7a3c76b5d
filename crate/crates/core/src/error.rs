use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix in the plant description has the wrong shape.
    #[error("{matrix}[{time}] has shape {actual_rows}x{actual_cols}, expected {expected_rows}x{expected_cols}")]
    Dimension {
        matrix: &'static str,
        time: usize,
        expected_rows: usize,
        expected_cols: usize,
        actual_rows: usize,
        actual_cols: usize,
    },

    #[error("{matrix}: expected {expected} entries, got {actual}")]
    Length {
        matrix: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{matrix}[{time}] is not {requirement} (min eigenvalue {min_eigenvalue:.3e})")]
    Definiteness {
        matrix: &'static str,
        time: usize,
        requirement: &'static str,
        min_eigenvalue: f64,
    },

    #[error("{0}")]
    InvalidArgument(String),

    /// A policy (or Q parameter) has a nonzero entry in block (t, s) with s > t.
    #[error("{what} is not causal: entry ({row}, {col}) = {value:.3e} lies in future block ({block_row}, {block_col})")]
    NonCausal {
        what: &'static str,
        row: usize,
        col: usize,
        block_row: usize,
        block_col: usize,
        value: f64,
    },

    #[error("policy lies outside the subspace (projection residual {residual:.3e})")]
    OutsideSubspace { residual: f64 },

    #[error("subspace is empty: a zero-dimensional policy space is rejected")]
    EmptySubspace,

    #[error("basis columns are linearly dependent (rank {rank} < {columns})")]
    RankDeficient { rank: usize, columns: usize },

    #[error("subspace is not quadratically invariant w.r.t. CP12 (basis pair ({i}, {j}), relative residual {residual:.3e}); the convex reformulation does not apply; rerun with --direct to use the Newton minimiser")]
    NotQuadraticallyInvariant { i: usize, j: usize, residual: f64 },

    #[error("quadratic form is singular: {0}")]
    Singular(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("only {accepted} of {proposed} proposals fell in the sublevel set (acceptance {rate:.3})")]
    Sampling {
        accepted: usize,
        proposed: usize,
        rate: f64,
    },

    #[error("schedule precondition violated: {0}")]
    Schedule(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status used by the CLI: 2 config, 3 precondition, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotQuadraticallyInvariant { .. } | Error::Singular(_) => 3,
            Error::Internal(_) | Error::Io(_) | Error::Csv(_) => 4,
            _ => 2,
        }
    }
}

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by channel ingestion, beamforming, scheduling, and the
/// simulation harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed trace header: {0}")]
    MalformedHeader(String),

    #[error("truncated trace payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("non-finite channel coefficient at flat index {index}")]
    NonFiniteCoefficient { index: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid cluster spec: {0}")]
    InvalidClusterSpec(String),

    #[error("user {user} has a zero-norm channel on (rb {rb}, tti {tti}); correlation undefined")]
    ZeroNormChannel { user: usize, rb: usize, tti: usize },

    #[error("correlation threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),

    #[error("cannot zero-force {users} users with {antennas} antennas")]
    OverSubscribed { users: usize, antennas: usize },

    #[error("channel submatrix is singular (condition number {condition:.3e} above cap)")]
    SingularChannel { condition: f64 },

    #[error("unknown slice id {0}")]
    UnknownSlice(usize),

    #[error("fairness index undefined: all rates are zero")]
    AllZeroRates,

    #[error("subset enumeration for slice {slice} needs {count} candidates, above cap {cap}")]
    CombinatorialCap { slice: usize, count: u128, cap: u128 },

    #[error("exact solver guard exceeded: {rbs} RBs x {slices} slices (caps {max_rbs} x {max_slices})")]
    SizeGuard {
        rbs: usize,
        slices: usize,
        max_rbs: usize,
        max_slices: usize,
    },

    #[error("no RB assignment can cover the per-slice deficits of this TTI")]
    Infeasible,

    #[error("unknown scheduler `{0}` (expected greedy|gp|dro|drs|rs_es|bnb|dro_para|drs_para)")]
    UnknownScheduler(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

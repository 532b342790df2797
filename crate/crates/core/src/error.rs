use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("exact oracle refuses n = {n} (limit {limit})")]
    OracleTooLarge { n: usize, limit: usize },
    #[error("epsilon too large for horizon: gamma = eps / T = {gamma} >= 1")]
    EpsilonTooLarge { gamma: f64 },
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("policy chose applicant {app} which is unavailable at state {state}")]
    UnavailableApplicant { app: usize, state: String },
    #[error("rank {rank} out of range for block of size {len}")]
    RankOutOfRange { rank: usize, len: usize },
    #[error("block tree node {0} carries a correction coin")]
    CoinPresent(usize),
    #[error("premise check failed: {0}")]
    Premise(String),
    #[error("guess grid dimension `{dimension}` needs {count} points, budget is {cap}")]
    Budget { dimension: String, count: f64, cap: u64 },
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

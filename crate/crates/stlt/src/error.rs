//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("bad time window: upper bound {b} < lower bound {a}")]
    Window { a: i64, b: i64 },
    #[error("window bound {0} s is not a multiple of the sampling period {1} s")]
    PeriodMismatch(f64, f64),
    #[error("conjunct holds two temporal operators and no time encoding was supplied")]
    NotFlattenable,
    #[error("state {0:?} lies outside the grid bounding box")]
    OutOfDomain(Vec<f64>),
    #[error("grid regions live on different lattices")]
    LatticeMismatch,
    #[error("box-union fast path needs translation-invariant dynamics; rasterize first")]
    UnsupportedFastPath,
    #[error("trajectory ends at step {have} but the coding needs step {need}")]
    HorizonTooShort { have: usize, need: usize },
    #[error("feasible table has no entry for step {step}, index set {mask:#b}")]
    TableMissing { step: usize, mask: u32 },
    #[error("parameter out of range: {0}")]
    Domain(String),
    #[error("fragment set node is not a single box; no sup-norm barrier template")]
    NonBoxFragment,
    #[error("quadratic program infeasible: {0}")]
    Infeasible(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

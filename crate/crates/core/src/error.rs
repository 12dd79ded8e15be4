use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("joint state size c^n = {c}^{n} exceeds the size cap {cap}")]
    SizeCap { n: usize, c: usize, cap: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("payoff model kind `{found}` does not support {operation}")]
    KindMismatch {
        found: &'static str,
        operation: &'static str,
    },

    #[error("state is off the product (Wright) manifold by {deviation:e} (tolerance {tol:e})")]
    NotOnWrightManifold { deviation: f64, tol: f64 },

    #[error("cumulative renormalization drift {drift:e} exceeds limit {limit:e}")]
    Drift { drift: f64, limit: f64 },

    #[error("checkpoint budget exceeded: {requested} requested, budget {budget}")]
    CheckpointBudget { requested: usize, budget: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(what: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        what,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

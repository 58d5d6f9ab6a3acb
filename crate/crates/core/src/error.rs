use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("non-finite ODE right-hand side at t = {t}")]
    NonFiniteRhs { t: f64 },

    #[error("singularity at t = {t}: {what}")]
    Singularity { t: f64, what: String },

    #[error("CFL violation at t = {t}, x = {x}, u = {u}: dt = {dt} exceeds {limit} ({which})")]
    Cfl {
        t: f64,
        x: f64,
        u: f64,
        dt: f64,
        limit: f64,
        which: &'static str,
    },

    #[error("non-finite {field} at t = {t}, x = {x}")]
    NonFiniteField { field: &'static str, t: f64, x: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

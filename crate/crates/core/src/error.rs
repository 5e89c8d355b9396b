use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("recursion overflowed at step {step}: |R| = {norm:e} (Lyapunov exponent non-negative or bad parameters?)")]
    Overflow { step: usize, norm: f64 },

    #[error("series did not contract within {cap} terms (last product norm {last_norm:e})")]
    NonContraction { cap: usize, last_norm: f64 },

    #[error("too many singular draws: {singular} of {total}")]
    SingularDraws { singular: usize, total: usize },

    #[error("power iteration did not converge after {iterations} iterations; last ratios {last:?}")]
    PowerIteration { iterations: usize, last: Vec<f64> },

    #[error("invalid bracket: rho({lo}) = {rho_lo}, rho({hi}) = {rho_hi}; need rho(lo) < 1 < rho(hi) (try a larger upper end)")]
    Bracket {
        lo: f64,
        hi: f64,
        rho_lo: f64,
        rho_hi: f64,
    },

    #[error("non-positive drift alpha = {0}")]
    NonPositiveDrift(f64),

    #[error("estimate failed: {0}")]
    Estimate(String),

    #[error("tail regime not reached: plateau dispersion {dispersion:.3} exceeds 50% of level {level:e}")]
    NoPlateau { dispersion: f64, level: f64 },

    #[error("only {count} exceedances above u = {u:e}, need at least {needed}; try u <= {suggested:e}")]
    TooFewExceedances {
        count: usize,
        needed: usize,
        u: f64,
        suggested: f64,
    },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<S: Into<String>>(msg: S) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn precondition<S: Into<String>>(msg: S) -> Error {
    Error::Precondition(msg.into())
}

use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset violates p*cos(delta) > 1: {0}")]
    AssumptionViolation(String),
    #[error("dimension must be at least 2, got {0}")]
    BadDimension(usize),
    #[error("initialization scales must satisfy 0 < kappa1 < kappa2 <= 1 (got kappa1={kappa1}, kappa2={kappa2})")]
    BadScales { kappa1: f64, kappa2: f64 },
    #[error("width must be even and at least 2, got {0}")]
    OddWidth(usize),
    #[error("both one-sided normal projections vanish at neuron {neuron}")]
    DegenerateProjection { neuron: usize },
    #[error("non-finite value encountered at t={time}")]
    NonFinite { time: f64 },
    #[error("neuron has zero norm")]
    ZeroNeuron,
    #[error("trajectory ends at t={end} before t_I={t_i}")]
    HorizonTooShort { end: f64, t_i: f64 },
    #[error("timeline is incomplete: {0} not reached")]
    IncompleteTimeline(&'static str),
    #[error("state lies outside the validity region of the first integral")]
    OutOfRegion,
    #[error("classification has an empty {0} set")]
    EmptyClass(&'static str),
    #[error("parameter cannot be scaled to unit margins (min margin {0})")]
    Infeasible(f64),
    #[error("need at least {needed} samples, got {got}")]
    Underdetermined { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed record: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

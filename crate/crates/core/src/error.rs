use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid alphabet size K = {0}: need K >= 2")]
    InvalidAlphabet(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not reach tolerance {requested:e} (achieved {achieved:e})")]
    Quadrature { requested: f64, achieved: f64 },

    #[error("query {axis} = {value} lies outside the tabulated range [{min}, {max}]")]
    OutOfRange {
        axis: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("no excess coincidences in Alice's reference arm (C_IA - C~_IA = {0}); intrusion parameter undefined")]
    NoCorrelation(f64),

    #[error("at L = {l_km} km, K = {k}: {source}")]
    SweepPoint {
        l_km: f64,
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

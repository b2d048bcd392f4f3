use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter or interval fell outside the domain it must live in.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two paths or maps could not be composed (endpoint or fibre mismatch).
    #[error("composition error: {0}")]
    Composition(String),

    #[error("element lies over {found:?}, expected the fibre over {expected:?}")]
    WrongFiber { expected: Vec<f64>, found: Vec<f64> },

    #[error("payload does not match the fibre: {0}")]
    Payload(String),

    /// Chart coordinates at which the chart itself degenerates (sphere poles).
    #[error("singular chart at {0:?}")]
    SingularChart(Vec<f64>),

    #[error("path leaves the chart at parameter {parameter}")]
    PathExitsChart { parameter: f64 },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// The transport is only defined on specific paths (e.g. a reconstructed factorization).
    #[error("path not supported by this transport: {0}")]
    UnsupportedPath(String),

    #[error("invalid reparametrization: {0}")]
    Reparam(String),
}

pub(crate) fn domain_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

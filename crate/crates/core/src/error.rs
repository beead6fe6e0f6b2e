use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("numerical failure: {message} (residual {residual:.3e})")]
    NumericalFailure { message: String, residual: f64 },

    #[error("degenerate mode n={n} at k={k}: eigenvalue {lambda:.3e} is below the floor")]
    DegenerateMode { k: f64, n: i32, lambda: f64 },

    #[error("incomplete fiber pair: no cluster supplied for sigma={missing}")]
    IncompletePair { missing: f64 },

    #[error("boundary degeneracy at x={x}: incoming characteristic coefficient {coefficient:.3e}")]
    BoundaryDegeneracy { x: f64, coefficient: f64 },

    #[error("CFL violation: {0}")]
    Cfl(String),

    #[error("misaligned grid: {0}")]
    MisalignedGrid(String),

    #[error("missing mode data: {0}")]
    MissingMode(String),

    #[error("zero-norm reference slice")]
    ZeroNorm,

    #[error("invalid epsilon sequence: {0}")]
    InvalidSequence(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

/// Attaches a pipeline stage label to an error.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

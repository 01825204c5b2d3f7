use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument {value} lies outside [0, 1]")]
    Domain { value: f64 },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("degenerate derivative at x = {at}: the boundary segment is flat")]
    DegenerateDerivative { at: f64 },

    #[error("symbol {index} is out of range for a system of {k} maps")]
    InvalidSymbol { index: usize, k: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("systems have different numbers of maps ({0} vs {1})")]
    SizeMismatch(usize, usize),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("measures have unequal total mass ({0} vs {1})")]
    UnequalMass(f64, f64),

    #[error("measures live on different grids ({0} vs {1} cells); resample first")]
    GridMismatch(usize, usize),

    #[error("system is not admissible: {0}")]
    NotAdmissible(String),

    #[error("no tail-bound certificate: {0}")]
    NoCertificate(String),

    #[error("fixed point did not converge at N = {n_cells}: residual {residual:e} after {iterations} iterations")]
    NotConverged {
        n_cells: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("margin is not positive: {0}")]
    NonPositiveMargin(String),

    #[error("invalid plateau specification: {0}")]
    InvalidPlateau(String),

    #[error("closeness budget violated: d = {measured} is not below {budget}")]
    BudgetExceeded { measured: f64, budget: f64 },

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

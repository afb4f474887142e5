//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "cavity too close to outer boundary: clearance {clearance:.4}, required {required:.4}"
    )]
    CavityTooClose { clearance: f64, required: f64 },

    #[error("no boundary edge lies on the requested data arc")]
    EmptyGamma,

    #[error("region mask selects no triangles")]
    EmptyRegion,

    #[error("triangle {index} has non-positive area")]
    DegenerateTriangle { index: usize },

    #[error("conductivity value at cell {index} is {value}, below the positivity floor")]
    NonPositiveSigma { index: usize, value: f64 },

    #[error("series truncation order must be at least 2, got {k_max}")]
    SeriesOrder { k_max: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("boundary data sup norm {sup:.4e} exceeds the small-data limit {limit:.4e}")]
    AmplitudeTooLarge { sup: f64, limit: f64 },

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:.4e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("Newton iteration hit the cap of {iterations} iterations (residual {residual:.4e})")]
    NewtonMaxIterations { iterations: usize, residual: f64 },

    #[error("field is not a discrete solution: interior residual {residual:.4e}")]
    NotASolution { residual: f64 },

    #[error("linear solver failed: {0}")]
    SolverBreakdown(String),

    #[error("finite-difference stencils are tabulated up to derivative order 4, got {order}")]
    FdOrderUnsupported { order: usize },

    #[error("stencil point (t1={t1:.3e}, t2={t2:.3e}) left the solvable neighborhood: {source}")]
    StencilPointFailed {
        t1: f64,
        t2: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("region masks overlap")]
    RegionsNotDisjoint,

    #[error("constraint region disconnects the domain from the data arc")]
    RegionDisconnects,

    #[error("energy ratio failed to increase at step {step}")]
    NoLocalization { step: usize },

    #[error("insufficient measurement data: {0}")]
    InsufficientData(String),

    #[error("descent stalled: misfit {misfit:.4e} could not be reduced")]
    MisfitNotReduced { misfit: f64 },

    #[error("coefficient fields are identical; no sign split exists")]
    FieldsEqual,

    #[error("no sign orientation yields a valid region split")]
    NoValidSplit,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh mismatch: expected N={expected}, got N={got}")]
    MeshMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),
    #[error("CFL violation: dt={dt} exceeds limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("divergence: non-finite value at step {step}")]
    Divergence { step: usize },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mask is not a boundary mask")]
    NotBoundaryMask,
    #[error("need at least {need} snapshots, got {got}")]
    TooFewSnapshots { need: usize, got: usize },
    #[error("inadmissible-parameter: {0}")]
    InadmissibleParameter(String),
    #[error("quadrature did not converge: relative difference {0:e}")]
    QuadratureNonConvergence(f64),
    #[error("negative curvature detected in conjugate gradient (pAp = {0:e})")]
    NegativeCurvature(f64),
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
    #[error("weight construction failed: {0}")]
    WeightConstruction(String),
    #[error("imaginary part {im} exceeds strip width {strip}")]
    StripExceeded { im: f64, strip: f64 },
    #[error("fit infeasible: {0}")]
    FitInfeasible(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("line search stagnated at iteration {iter} (J = {j:e}, |grad| = {grad:e})")]
    Stagnation { iter: usize, j: f64, grad: f64 },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}

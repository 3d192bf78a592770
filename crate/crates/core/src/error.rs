use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the domain {domain}")]
    Domain { point: Vec<f64>, domain: String },

    #[error("requested derivative order {requested} exceeds available smoothness {available}")]
    Capability { requested: usize, available: usize },

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("unknown family `{0}`")]
    UnknownFamily(String),

    #[error("empty audit grid: {0}")]
    EmptyGrid(String),

    #[error("degenerate phase: {0}")]
    DegeneratePhase(String),

    #[error("gradient magnitude {grad_norm:e} below floor {floor:e} at {point:?}")]
    NearCritical {
        point: Vec<f64>,
        grad_norm: f64,
        floor: f64,
    },

    #[error("cover would need {required} balls, above the cap of {cap}; use a smaller support or a larger δ")]
    Resource { required: usize, cap: usize },

    #[error("point {0:?} is not covered by any ball of the partition")]
    CoverDefect(Vec<f64>),

    #[error("quadrature did not converge: best value {best_re:e}{best_im:+e}i, last change {delta:e}")]
    Accuracy {
        best_re: f64,
        best_im: f64,
        delta: f64,
    },

    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

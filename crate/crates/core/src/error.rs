use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain mask is empty")]
    EmptyMask,
    #[error("invalid domain specification: {0}")]
    InvalidSpec(String),
    #[error("field is identically zero")]
    ZeroField,
    #[error("field and context live on different grids or masks")]
    GridMismatch,
    #[error("padding {pad_width} is narrower than the kernel radius {radius}")]
    PaddingTooSmall { pad_width: f64, radius: f64 },
    #[error("invalid fractional order: {0}")]
    InvalidOrder(String),
    #[error("kernel is not normalizable (raw integral {value})")]
    NotNormalizable { value: f64 },
    #[error("kernel is not radially non-increasing")]
    KernelNotDecreasing,
    #[error("solver did not converge after {iterations} iterations (best value {best})")]
    NotConverged { iterations: usize, best: f64 },
    #[error("dense oracle limited to {limit} unknowns, got {size}")]
    TooLarge { size: usize, limit: usize },
    #[error("assembled matrix is not symmetric (defect {defect:e})")]
    NotSymmetric { defect: f64 },
    #[error("operation requires p = 2, got p = {0}")]
    RequiresP2(f64),
    #[error("mask A is not strictly contained in mask B")]
    NotNested,
    #[error("probe lies (numerically) in the span of the first eigenfunction")]
    DegenerateProbe,
    #[error("adjacent path nodes coincide (distance {distance:e})")]
    CollapsedPath { distance: f64 },
    #[error("field does not change sign")]
    NotSignChanging,
    #[error("domain has {0} connected components, expected 2")]
    NotTwoComponent(usize),
    #[error("input violates the lemma hypothesis: {0}")]
    ConstraintViolated(String),
    #[error("negative input where a nonnegative field is required")]
    NegativeInput,
    #[error("u must be strictly positive on the mask")]
    NonPositiveU,
    #[error("realized measure {realized} deviates from target {target} by more than 1%")]
    MeasureMismatch { realized: f64, target: f64 },
    #[error("balls overlap: separation {separation} <= 2R = {diameter}")]
    OverlapError { separation: f64, diameter: f64 },
    #[error("residual {residual:e} exceeds the required {limit:e}")]
    ResidualTooLarge { residual: f64, limit: f64 },
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NskError {
    #[error("state (rho = {rho}, theta = {theta}) left the admissible rectangle")]
    OutOfAdmissibleRange { rho: f64, theta: f64 },
    #[error("symbol is singular at the zero mode but the input mean is {mean:e}")]
    ZeroModeSingular { mean: f64 },
    #[error("field mean {mean:e} is not zero")]
    NonZeroMean { mean: f64 },
    #[error("derivative order {order} exceeds the resolved budget {budget}")]
    DerivativeBudgetExceeded { order: usize, budget: usize },
    #[error("decomposition residual {residual:e} above tolerance")]
    DecompositionMismatch { residual: f64 },
    #[error("forcing tail at the box boundary is {fraction:e} of the peak")]
    BoxTooSmall { fraction: f64 },
    #[error("inner relaxation diverged after {iterations} iterations (update {update:e})")]
    InnerLoopDiverged { iterations: usize, update: f64 },
    #[error("outer iteration not contracting, last ratios {ratios:?}")]
    NotContracting { ratios: Vec<f64> },
    #[error("forcing budget {budget:e} above threshold {threshold:e}")]
    BudgetExceeded { budget: f64, threshold: f64 },
    #[error("time step {dt} exceeds CFL bound {bound}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("blow-up at t = {t}: {reason}")]
    BlowUpDetected { t: f64, reason: String },
    #[error("initial perturbation norm {norm:e} above threshold {threshold:e}")]
    InitTooLarge { norm: f64, threshold: f64 },
    #[error("density map mismatch {defect:e} between pressure and density perturbations")]
    ConventionMismatch { defect: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NskError {
    /// Stable machine-readable name, used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            NskError::OutOfAdmissibleRange { .. } => "OutOfAdmissibleRange",
            NskError::ZeroModeSingular { .. } => "ZeroModeSingular",
            NskError::NonZeroMean { .. } => "NonZeroMean",
            NskError::DerivativeBudgetExceeded { .. } => "DerivativeBudgetExceeded",
            NskError::DecompositionMismatch { .. } => "DecompositionMismatch",
            NskError::BoxTooSmall { .. } => "BoxTooSmall",
            NskError::InnerLoopDiverged { .. } => "InnerLoopDiverged",
            NskError::NotContracting { .. } => "NotContracting",
            NskError::BudgetExceeded { .. } => "BudgetExceeded",
            NskError::CflViolation { .. } => "CFLViolation",
            NskError::BlowUpDetected { .. } => "BlowUpDetected",
            NskError::InitTooLarge { .. } => "InitTooLarge",
            NskError::ConventionMismatch { .. } => "ConventionMismatch",
            NskError::Config(_) => "ConfigError",
            NskError::Snapshot(_) => "MalformedSnapshot",
            NskError::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, NskError>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("quadrature needs {nodes} nodes but the budget is {budget}; use the monte_carlo estimator")]
    NodeBudget { nodes: usize, budget: usize },

    #[error("precondition violated at {location}: {detail}")]
    Precondition { location: String, detail: String },

    #[error("no convergence in {stage}: {detail} (best achieved {best:e})")]
    Convergence { stage: String, detail: String, best: f64 },

    #[error("enumeration over {units} units exceeds the cap of {cap}")]
    EnumerationCap { units: usize, cap: usize },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("solve error: {0}")]
    Solve(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<mpbs_milp::MilpError> for CoreError {
    fn from(e: mpbs_milp::MilpError) -> Self {
        CoreError::Solve(e.to_string())
    }
}

impl CoreError {
    /// Process exit code for the CLI: config=2, parse=3, solve=4, internal=5.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Config(_) => 2,
            CoreError::Parse(_) | CoreError::Validation(_) | CoreError::Io(_) => 3,
            CoreError::Solve(_) => 4,
            CoreError::Graph(_) | CoreError::Internal(_) => 5,
        }
    }
}

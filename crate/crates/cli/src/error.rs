use thiserror::Error;
use wigner_clt::chebyshev::ChebError;
use wigner_clt::ensemble::EnsembleError;
use wigner_clt::greenfn::GreenError;
use wigner_clt::montecarlo::MonteCarloError;
use wigner_clt::spectral::SpectralError;
use wigner_clt::theory::TheoryError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Assertion(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

impl From<ChebError> for CliError {
    fn from(e: ChebError) -> Self {
        match e {
            ChebError::DomainError(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::AssumptionViolated(_)
            | TheoryError::OutOfDomain { .. }
            | TheoryError::InvalidArgument(_)
            | TheoryError::NonSmooth(_)
            | TheoryError::DegenerateArguments(_) => CliError::Config(e.to_string()),
            TheoryError::BranchError(_) | TheoryError::TailTooLarge { .. } | TheoryError::QuadratureWarning(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<GreenError> for CliError {
    fn from(e: GreenError) -> Self {
        match e {
            GreenError::Spectral(s) => s.into(),
            GreenError::Theory(t) => t.into(),
            GreenError::Ensemble(s) => s.into(),
            GreenError::QuadratureWarning(_) => CliError::Numerical(e.to_string()),
            GreenError::BudgetExceeded { .. } | GreenError::InvalidArgument(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<MonteCarloError> for CliError {
    fn from(e: MonteCarloError) -> Self {
        match e {
            MonteCarloError::Ensemble(s) => s.into(),
            MonteCarloError::Spectral(s) => s.into(),
            MonteCarloError::Theory(t) => t.into(),
            MonteCarloError::Cheb(c) => c.into(),
            MonteCarloError::InvalidConfig(_) | MonteCarloError::BudgetExceeded(_) => CliError::Config(e.to_string()),
            MonteCarloError::EmptyBatch | MonteCarloError::NonPositiveStatistic(..) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

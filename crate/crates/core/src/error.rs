use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("incompatible sampling path: {0}")]
    IncompatiblePath(String),

    #[error("non-finite gradient at coordinate {coord}")]
    NonFiniteGradient { coord: usize },

    #[error("normalizer unstable: {0}")]
    NormalizerUnstable(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("target has no exact sampler")]
    NoExactSampler,

    #[error("non-smooth balancing function: {0}")]
    NonSmoothBalancing(String),

    #[error("infeasible noise moments: mu4 = {mu4}, mu6 = {mu6}")]
    MomentInfeasible { mu4: f64, mu6: f64 },

    #[error("all balancing functions are equivalent for this noise (mu6 - 2 mu4 + 1 = 0)")]
    AllBalancingEquivalent,

    #[error("degenerate design: efficiency unbounded at this order (theta^2 = {0})")]
    Degenerate(f64),

    #[error("chain diverged at iteration {iter} (coordinate {coord} = {value})")]
    Diverged { iter: usize, coord: usize, value: f64 },

    #[error("objective is not unimodal on the search bracket: {0}")]
    NotUnimodal(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Config(_)
                | Error::IncompatiblePath(_)
                | Error::NonSmoothBalancing(_)
                | Error::MomentInfeasible { .. }
                | Error::AllBalancingEquivalent
                | Error::NoExactSampler
                | Error::Json(_)
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("actuator support empty")]
    ActuatorEmpty,

    #[error("observation region {0} is empty")]
    EmptyRegion(usize),

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("no stabilizing solution found: {0}")]
    NoStabilizingSolution(String),

    #[error("initial gain is not stabilizing: {0}")]
    UnstableInitialGain(String),

    #[error("lyapunov solve failed: {0}")]
    Lyapunov(String),

    #[error("riccati solve failed at step {step}: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ill-conditioned interpolation matrix (cond {cond:.3e}); use a larger snapshot set")]
    IllConditioned { cond: f64 },

    #[error("posterior covariance lost positive definiteness: {0}")]
    Posterior(String),

    #[error("no parameter configuration survived snapshot generation")]
    NoSurvivingConfiguration,

    #[error("LAPACK routine {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error(transparent)]
    Shape(#[from] ndarray::ShapeError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed artifact: {0}")]
    Artifact(String),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::StepFailed {
            step,
            source: Box::new(self),
        }
    }

    /// True when the error originates in a numerical solver rather than in
    /// validation of caller-supplied data.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::ActuatorEmpty
            | Error::EmptyRegion(_)
            | Error::Io(_)
            | Error::Artifact(_) => false,
            Error::StepFailed { source, .. } => source.is_numerical(),
            _ => true,
        }
    }
}

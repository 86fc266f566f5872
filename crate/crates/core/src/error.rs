use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    AngleNearPi { angle: f64 },

    #[error("arclength {s} outside [0, {length}]")]
    OutOfRange { s: f64, length: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown body `{0}`")]
    UnknownBody(String),

    #[error("mass matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    SingularMass { condition: f64 },

    #[error("numerical blowup at t = {time}: state norm {norm:.3e}")]
    NumericalBlowup { time: f64, norm: f64 },

    #[error("pose unobservable: {visible} visible markers on {bodies} distinct bodies")]
    Underdetermined { visible: usize, bodies: usize },

    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("quadratic program is infeasible or unbounded ({0})")]
    InfeasibleOrUnbounded(String),

    #[error("quadratic program Hessian is not positive semidefinite")]
    NotPsd,

    #[error("degenerate range: {0}")]
    DegenerateRange(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn at_frame(self, index: usize) -> Self {
        Error::Frame {
            index,
            source: Box::new(self),
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("datum has mean {mean:e}, exceeding the zero-mean tolerance {tol:e}")]
    MeanNotZero { mean: f64, tol: f64 },

    #[error("linear solve residual {residual:e} above tolerance {tol:e}")]
    SolverDiverged { residual: f64, tol: f64 },

    #[error("pair field is not conforming: trace mismatch {mismatch:e}")]
    NonConforming { mismatch: f64 },

    #[error("argument {value} outside the potential domain ({r_minus}, {r_plus})")]
    OutOfDomain { value: f64, r_minus: f64, r_plus: f64 },

    #[error("Newton iteration failed at step {step}; residual history {history:?}")]
    NewtonDiverged { step: usize, history: Vec<f64> },

    #[error("separation lost at step {step}: iterate value {value} left the admissible band")]
    SeparationLost { step: usize, value: f64 },

    #[error("linear solve failed at step {step}: {reason}")]
    LinearSolveFailed { step: usize, reason: String },

    #[error("adjoint requires b_omega = b_gamma = 0 (got b_omega = {b_omega}, b_gamma = {b_gamma})")]
    CompatibilityViolated { b_omega: f64, b_gamma: f64 },

    #[error("infeasible admissible set: u_min > u_max at {count} points")]
    InfeasibleSet { count: usize },

    #[error("critical cone sample is empty: all {candidates} candidates vanished")]
    EmptyCone { candidates: usize },
}

//! Port-Hamiltonian mechanical system modeling, PID passivity-based control
//! synthesis, and numerical exponential-stability certification.
//!
//! The pipeline goes: model a mechanical system ([`model::MechanicalSystem`]),
//! close the loop with a PID-PBC ([`pidpbc`]), transform to canonical
//! port-Hamiltonian coordinates via an upper-Cholesky momentum change of
//! variables ([`plvcc`]), then search for a Lyapunov decay-rate certificate
//! over a sampled region ([`certify`]) and validate it against simulated
//! trajectories ([`sim`]). [`tune`] ranks gain sets by predicted decay rate
//! and [`pera`] ships a 3-DoF robotic-arm benchmark.

pub mod certify;
pub mod config;
pub mod diff;
pub mod linalg;
pub mod model;
pub mod pera;
pub mod pidpbc;
pub mod plvcc;
pub mod sim;
pub mod tune;

pub use nalgebra::{DMatrix, DVector};

/// Column vector of f64, the working vector type throughout.
pub type VecF = DVector<f64>;
/// Dense f64 matrix, the working matrix type throughout.
pub type MatF = DMatrix<f64>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("inertia not invertible at q")]
    SingularInertia,
    #[error("matrix not positive definite (pivot <= 0 at row {0})")]
    NotPositiveDefinite(usize),
    #[error("K_I must be positive definite")]
    SingularKi,
    #[error("invalid gain matrix: {0}")]
    InvalidGains(String),
    #[error("equilibrium not stabilizable with given K_I")]
    GainConditionFailed,
    #[error("gravity compensation requires m = n")]
    GravityCompensationUnderactuated,
    #[error("transform degenerate at q")]
    DegenerateTransform,
    #[error("Phi = A^-1 undefined at q")]
    SingularA,
    #[error("Assumption 1 violated at q = {0:?}")]
    NotConvex(Vec<f64>),
    #[error("certificate infeasible on region: {0}")]
    Infeasible(String),
    #[error("integration blow-up at t = {0}")]
    BlowUp(f64),
    #[error("time must be non-negative")]
    NegativeTime,
    #[error("horizon must be positive")]
    NonPositiveHorizon,
    #[error("envelope not applicable: initial state outside certified region")]
    OutsideRegion,
    #[error("trajectory not converging")]
    NotConverging,
    #[error("no certifiable gains on grid")]
    NoFeasibleGains,
    #[error("evaluator failure at stencil point {0:?}: {1}")]
    Stencil(Vec<f64>, String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

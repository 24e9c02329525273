//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the numerical operations.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Integration loop exceeded the configured step budget.
    #[error("integration exceeded max_steps = {max_steps} at t = {t}")]
    MaxStepsExceeded { max_steps: usize, t: f64 },

    /// Adaptive step-size control shrank the step below the representable floor.
    #[error("adaptive step underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    /// No sign change with the requested direction found on the trajectory.
    #[error("no event crossing found in [{t0}, {t1}]")]
    NoCrossing { t0: f64, t1: f64 },

    /// Doubling the quadrature nodes moved a reported integral beyond tolerance.
    #[error("quadrature not converged: |change| = {change:e} > {tol:e}")]
    QuadratureNotConverged { change: f64, tol: f64 },

    /// The diagonal field value F(μ𝟙, μ) vanished or turned negative.
    #[error("diagonal field value F(μ𝟙,μ) = {value} is not positive at μ = {mu}")]
    DiagonalVanishing { mu: f64, value: f64 },

    /// The scanned function grows along the diagonal; the seminorm estimate is
    /// only a lower bound.
    #[error("function is not 𝟙-periodic; seminorm lower bound {lower_bound}")]
    NonPeriodicUnbounded { lower_bound: f64 },

    /// The stability assumption fails: the zero-sum residual is too large or
    /// the mean decay rate α is not positive.
    #[error("stability assumption violated: zero-sum residual {residual:e}, alpha {alpha}")]
    HstabViolated { residual: f64, alpha: f64 },

    /// A decay exponent β outside (0, α) was requested.
    #[error("beta = {beta} outside (0, alpha = {alpha})")]
    BetaOutOfRange { beta: f64, alpha: f64 },

    /// The denominator integral H(t, t') is numerically zero at the endpoint.
    #[error("H(t,t') = {value:e} too close to zero at t = {t}; extend the horizon")]
    HNearZero { t: f64, value: f64 },

    /// An iterative limit did not settle within the horizon. Carries the
    /// approximant sequence for diagnosis.
    #[error("limit not converged after {steps} steps (last change {last_change:e})")]
    NotConverged {
        steps: usize,
        last_change: f64,
        approximants: Vec<f64>,
    },

    /// No candidate produced a solution bounded away from zero and infinity.
    #[error("no normalizing solution among {tried} candidates")]
    NotFound { tried: usize },

    /// ψ(V(t')) is below the positivity threshold; 𝓛 is not defined.
    #[error("psi(V) = {value:e} below threshold; linear form undefined")]
    PsiVanishing { value: f64 },

    /// Decay certification failed; diagnostics attached.
    #[error("certification failed: fitted beta {fitted_beta}, r^2 {fit_r2}")]
    CertificationFailed { fitted_beta: f64, fit_r2: f64 },

    /// Newton iteration for the shooting problem did not reach tolerance.
    #[error("Newton diverged: best residual {residual:e} after {iterations} iterations")]
    NewtonDiverged {
        residual: f64,
        iterations: usize,
        best_state: Vec<f64>,
        best_period: f64,
    },

    /// The shooting Jacobian is singular (degenerate section or phase condition).
    #[error("singular shooting Jacobian")]
    SingularShootingJacobian,

    /// The requested direction is not in the kernel of the linear form.
    #[error("kernel violation: |L(xi)| = {value:e} exceeds {tol:e}")]
    KernelViolation { value: f64, tol: f64 },

    /// The requested chart displacement exceeds the validated radius.
    #[error("|xi| = {norm:e} exceeds chart radius {radius:e}")]
    RadiusExceeded { norm: f64, radius: f64 },

    /// The comparison point is too far from the orbit for phase alignment.
    #[error("initial distance {distance} to the orbit exceeds 0.1")]
    OrbitMisaligned { distance: f64 },

    /// Distance between the two compared states is zero.
    #[error("zero initial separation; contraction rate undefined")]
    ZeroSeparation,

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

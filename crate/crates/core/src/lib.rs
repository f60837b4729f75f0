#![doc = r#"Finite-difference solver for the Cahn-Hilliard equation with dynamic
boundary conditions on the unit square, periodic in x with physical walls at
y = 0 and y = 1.

The time stepper is a convex splitting of the singular (logarithmic)
mixing energy: each implicit step is the unique minimizer of a strictly
convex functional over the set of fields with |phi| < 1 and prescribed
bulk, bottom-trace, and top-trace means. That construction makes every
step positivity preserving, unconditionally energy stable, and exactly
mass conservative in all three components.

Modules:
- [`grid`]: grid containers and the staggered difference/average calculus,
  weighted inner products, summation-by-parts building blocks.
- [`elliptic`]: the wall-aware operator `L_h`, its inverse on mean-zero
  fields, the periodic boundary inverse, `-1` inner products, and the
  mass decomposition that parameterizes the constraint set.
- [`energy`]: logarithmic potential, total discrete energy, the per-step
  convex objective with its gradient and Hessian action.
- [`stepper`]: the safeguarded Newton step, chemical-potential recovery,
  scheme residual audit, and the homogeneous-Neumann comparison stepper.
- [`harness`]: initial profiles, simulation driver with CSV diagnostics,
  and the coarse/fine Cauchy-difference convergence study.
- [`checks`]: the self-check suite behind `chdbc check-ops`.
- [`config`]: key=value run configuration shared by the CLI.
"#]

pub mod checks;
pub mod config;
pub mod elliptic;
pub mod energy;
pub mod grid;
pub mod harness;
pub mod stepper;

use thiserror::Error;

/// Crate-wide error type. Each variant maps to a distinct CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Field sizes disagree with the grid or with each other.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An inverse-operator argument violates its compatibility condition.
    #[error("input is not mean-zero: {what} has mean {mean:e}")]
    NotMeanZero { what: &'static str, mean: f64 },
    /// Arguments of the step objective do not share the same three masses.
    #[error("mass incompatibility: {what} differs by {diff:e}")]
    MassIncompatible { what: &'static str, diff: f64 },
    /// The logarithmic potential was evaluated outside (-1, 1).
    #[error("potential argument out of domain: |{0}| >= 1")]
    Domain(f64),
    /// An iterative or direct solve failed to meet its tolerance.
    #[error("solver failure: {what} (residual {residual:e} after {iters} iterations)")]
    Solver {
        what: &'static str,
        residual: f64,
        iters: usize,
    },
    /// Invalid configuration value or file.
    #[error("config error: {0}")]
    Config(String),
    /// Filesystem failure while writing outputs.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 3,
            Error::Solver { .. } => 4,
            Error::Dimension(_)
            | Error::NotMeanZero { .. }
            | Error::MassIncompatible { .. }
            | Error::Domain(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

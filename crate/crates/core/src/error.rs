use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("theta series did not converge within |m| <= {cap} terms")]
    NonconvergentSeries { cap: i64 },

    #[error("argument {context} = {re}{im:+}i lies on (or within tolerance of) a lattice point")]
    PoleAtLatticePoint {
        context: &'static str,
        re: f64,
        im: f64,
    },

    #[error("weight vector is degenerate: {0}")]
    DegenerateWeights(String),

    #[error("matrix is numerically singular (condition estimate {cond:.3e})")]
    NearSingular { cond: f64 },

    #[error("modification point mismatch: |v - (u + sum(lambda - mu))| = {gap:.3e}")]
    ShiftMismatch { gap: f64 },

    #[error("Baecklund step is inconsistent: {0}")]
    InconsistentStep(String),

    #[error("Newton solve did not converge after {attempts} start(s); best residual {best_residual:.3e}")]
    NoConvergence { attempts: usize, best_residual: f64 },

    #[error("solution is degenerate: {0}")]
    DegenerateSolution(String),

    #[error("no integration path avoids the lattice zeros near {re}{im:+}i")]
    PathThroughZero { re: f64, im: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn pole(context: &'static str, z: num_complex::Complex64) -> Self {
        Error::PoleAtLatticePoint {
            context,
            re: z.re,
            im: z.im,
        }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `j*omega` is (numerically) a characteristic root, so the frequency
    /// response is undefined there.
    #[error("frequency response undefined at omega = {omega}: resolvent is singular")]
    SingularResolvent { omega: f64 },

    #[error("level xi = {xi} hits a feedthrough singular value (D_cl^T D_cl - xi^2 I is singular); perturb xi")]
    SingularFeedthroughLevel { xi: f64 },

    #[error("H-infinity norm undefined: spectral abscissa ≥ 0 (abscissa = {abscissa})")]
    Unstable { abscissa: f64 },

    #[error("discretization cap N = {n_max} reached without convergence (best estimate {best})")]
    DiscretizationCap { n_max: usize, best: f64 },

    #[error("no peak frequency available")]
    NoPeak,

    #[error("derivative undefined at defective root {re}{im:+}j")]
    DefectiveRoot { re: f64, im: f64 },

    #[error("no stabilizing controller found for order {order} (best abscissa {best_abscissa})")]
    StabilizationFailed { order: usize, best_abscissa: f64 },

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

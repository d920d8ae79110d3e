use thiserror::Error;

use crate::solvers::SolveReport;

#[derive(Debug, Error)]
pub enum DeconvError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid filter bank: {0}")]
    InvalidBank(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel {kernel_h}x{kernel_w} is too large for a {height}x{width} grid")]
    KernelTooLarge { kernel_h: usize, kernel_w: usize, height: usize, width: usize },
    #[error("spectrum is not Hermitian (deviation {0:e})")]
    NonHermitian(f64),
    #[error("zero denominator in spectral solve at frequency ({0}, {1})")]
    ZeroDenominator(usize, usize),
    #[error("grid {0}x{1} is too large to materialize densely (max 32x32)")]
    GridTooLarge(usize, usize),
    #[error("solver diverged after {} iterations", .0.iterations)]
    Diverged(Box<SolveReport>),
    #[error("penalty weight {0} is not in the dictionary's precomputed schedule")]
    ScheduleMismatch(f64),
}

pub type Result<T> = std::result::Result<T, DeconvError>;

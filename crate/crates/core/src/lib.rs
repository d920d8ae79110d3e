//! Non-blind deconvolution with convolutional half-quadratic splitting.
//!
//! The x-update of HQS is solved by a short preconditioned fixed-point
//! iteration whose preconditioner is a bank of small inverse filters, so
//! every step is a handful of convolutions under any boundary rule.

// `!(v > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod dense;
pub mod error;
pub mod hqs;
pub mod image;
pub mod invfilter;
pub mod nonuniform;
pub mod operator;
pub mod solvers;
pub mod spectral;

pub use error::{DeconvError, Result};
pub use hqs::{chqs, hqs_cg, hqs_fft, FftPadding, HqsConfig, HqsRun};
pub use image::{
    add_gaussian_noise, bank_apply, conv2d, correlate2d, psnr, psnr_cropped, Boundary, FilterBank, Image, Kernel,
};
pub use invfilter::{compute_inverse_bank, InverseBank};
pub use nonuniform::{build_dictionary, nearest_kernel, nonuniform_chqs, varying_conv, KernelDictionary, MotionField};
pub use operator::StackedOperator;
pub use solvers::{cg_normal, cg_normal_masked, cpcr, SolveReport};

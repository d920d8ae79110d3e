//! Approximate inverse filter banks for the stacked operator `L` and the
//! convergence check of the preconditioned Richardson iteration.
//!
//! The bank `C = [c_0, …, c_n]` minimizes `‖δ − L⋆C‖² + ρ Σ‖c_i‖²`, which
//! on a DFT grid has the closed form
//! `c_i = F⁻¹(L̃_i* / (ρ + Σ_j |L̃_j|²))`. Each filter is then hard-cropped to
//! its target support around the anchor.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{check_grid, contraction_matrix, stacked_matrix};
use crate::error::{DeconvError, Result};
use crate::image::{Boundary, Kernel};
use crate::operator::StackedOperator;
use crate::spectral::{embed_taps, Fft2};

/// Side of the inverse filters paired with the prior rows.
pub const PRIOR_INVERSE_SIDE: usize = 31;
pub const DEFAULT_RHO: f64 = 0.05;
pub const DEFAULT_RATIO: f64 = 2.0;

const RADIUS_MAX_ITERS: usize = 200;
const RADIUS_STAGNATION: f64 = 1e-8;

/// Nearest odd integer to `v`, rounding even results up.
pub fn round_to_odd(v: f64) -> usize {
    let r = v.round().max(1.0) as usize;
    if r.is_multiple_of(2) {
        r + 1
    } else {
        r
    }
}

/// A convolutional approximate inverse of a [`StackedOperator`].
#[derive(Clone, Debug, PartialEq)]
pub struct InverseBank {
    c0: Kernel,
    c_rest: Vec<Kernel>,
    rho: f64,
    mu: f64,
    ratio: f64,
    dirac_residual: f64,
}

impl InverseBank {
    /// Wraps explicit filters, recording their Dirac residual against `op`.
    pub fn from_filters(c0: Kernel, c_rest: Vec<Kernel>, op: &StackedOperator, rho: f64, ratio: f64) -> Result<Self> {
        if c_rest.len() != op.prior().len() {
            return Err(DeconvError::ShapeMismatch(format!(
                "{} prior inverse filters for {} prior rows",
                c_rest.len(),
                op.prior().len()
            )));
        }
        let mut bank = Self { c0, c_rest, rho, mu: op.mu(), ratio, dirac_residual: 0.0 };
        bank.dirac_residual = dirac_residual(&bank, op);
        Ok(bank)
    }

    /// Reassembles a bank from stored parts without recomputing its
    /// Dirac residual.
    pub fn from_parts(c0: Kernel, c_rest: Vec<Kernel>, rho: f64, mu: f64, ratio: f64, dirac_residual: f64) -> Self {
        Self { c0, c_rest, rho, mu, ratio, dirac_residual }
    }

    pub fn c0(&self) -> &Kernel {
        &self.c0
    }

    pub fn c_rest(&self) -> &[Kernel] {
        &self.c_rest
    }

    /// `[c_0, c_1, …, c_n]`.
    pub fn filters(&self) -> Vec<Kernel> {
        std::iter::once(self.c0.clone()).chain(self.c_rest.iter().cloned()).collect()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// `‖δ − C⋆L‖_F` at construction.
    pub fn dirac_residual(&self) -> f64 {
        self.dirac_residual
    }
}

/// Fourier ridge solution for the inverse bank of `op`.
///
/// `c_0` has side `round_to_odd(ratio · side(k))` per axis; prior inverses
/// are [`PRIOR_INVERSE_SIDE`] wide. All filters share one DFT grid of side
/// `max side(L) + max side(C) − 1`.
pub fn compute_inverse_bank(op: &StackedOperator, rho: f64, ratio: f64) -> Result<InverseBank> {
    if !(ratio >= 1.0) {
        return Err(DeconvError::InvalidParameter(format!("inverse size ratio must be >= 1, got {ratio}")));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(DeconvError::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let k = op.blur();
    let c0_h = round_to_odd(ratio * k.height() as f64);
    let c0_w = round_to_odd(ratio * k.width() as f64);
    let rows = op.rows();
    let has_prior = rows.len() > 1;
    let target_h = if has_prior { c0_h.max(PRIOR_INVERSE_SIDE) } else { c0_h };
    let target_w = if has_prior { c0_w.max(PRIOR_INVERSE_SIDE) } else { c0_w };
    let grid_h = rows.iter().map(Kernel::height).max().unwrap_or(1) + target_h - 1;
    let grid_w = rows.iter().map(Kernel::width).max().unwrap_or(1) + target_w - 1;

    let fft = Fft2::new(grid_h, grid_w);
    let spectra: Vec<Vec<Complex64>> = rows
        .iter()
        .map(|r| {
            let mut s = embed_taps(r, grid_h, grid_w);
            fft.forward(&mut s);
            s
        })
        .collect();
    let denom: Vec<f64> =
        (0..grid_h * grid_w).map(|f| rho + spectra.iter().map(|s| s[f].norm_sqr()).sum::<f64>()).collect();

    let scale = 1.0 / (grid_h * grid_w) as f64;
    let mut filters = Vec::with_capacity(rows.len());
    for (i, s) in spectra.iter().enumerate() {
        let mut buf: Vec<Complex64> = s.iter().zip(&denom).map(|(l, d)| l.conj() / d).collect();
        fft.inverse(&mut buf);
        let (th, tw) = if i == 0 { (c0_h, c0_w) } else { (PRIOR_INVERSE_SIDE, PRIOR_INVERSE_SIDE) };
        let (hh, hw) = ((th / 2) as isize, (tw / 2) as isize);
        let mut taps = Vec::with_capacity(th * tw);
        for di in -hh..=hh {
            for dj in -hw..=hw {
                let gi = di.rem_euclid(grid_h as isize) as usize;
                let gj = dj.rem_euclid(grid_w as isize) as usize;
                taps.push(buf[gi * grid_w + gj].re * scale);
            }
        }
        filters.push(Kernel::new(th, tw, taps)?);
    }
    let c0 = filters.remove(0);
    InverseBank::from_filters(c0, filters, op, rho, ratio)
}

/// `C ⋆ L = Σ_i c_i ⋆ L_i` as a single kernel on the full composed support.
pub fn composed_response(bank: &InverseBank, op: &StackedOperator) -> Kernel {
    bank.filters()
        .iter()
        .zip(op.rows().iter())
        // blur and derivative rows are sparse; keep them in the outer loop
        .map(|(c, l)| l.compose(c))
        .reduce(|a, b| a.plus(&b))
        .expect("bank has at least c0")
}

/// `‖δ − (c_0⋆k + √μ Σ c_i⋆k_i)‖_F`.
pub fn dirac_residual(bank: &InverseBank, op: &StackedOperator) -> f64 {
    let response = composed_response(bank, op);
    Kernel::delta().plus(&response.scale(-1.0)).frobenius_norm()
}

/// Result of a power-iteration spectral-radius estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusEstimate {
    pub radius: f64,
    pub iterations: usize,
    /// Set when the iteration hit its budget without stagnating.
    pub approximate: bool,
}

/// Dense matrix of `Id − M_C·M_L` on a `grid × grid` Zero-boundary domain.
pub fn iteration_matrix(op: &StackedOperator, bank: &InverseBank, grid: usize) -> Result<DMatrix<f64>> {
    check_grid(grid, grid)?;
    let ml = stacked_matrix(&op.rows(), grid, grid, Boundary::Zero);
    let mc = contraction_matrix(&bank.filters(), grid, grid, Boundary::Zero);
    let n = grid * grid;
    Ok(DMatrix::identity(n, n) - mc * ml)
}

/// Spectral radius of the Richardson iteration matrix `Id − M_C·M_L`, by
/// power iteration.
///
/// The per-step growth `‖A v‖` (unit `v`) is the estimate once it stagnates
/// to 1e-8; otherwise, after the iteration budget, the geometric mean of the
/// growth over the second half of the run is returned and flagged
/// approximate, which also covers complex dominant pairs. An iterate that
/// collapses to zero restarts from a fresh random vector.
pub fn spectral_radius_estimate(op: &StackedOperator, bank: &InverseBank, grid: usize) -> Result<RadiusEstimate> {
    let a = iteration_matrix(op, bank, grid)?;
    Ok(power_iteration(&a))
}

pub(crate) fn power_iteration(a: &DMatrix<f64>) -> RadiusEstimate {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let fresh = |rng: &mut ChaCha8Rng| {
        let v = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
        let nrm = v.norm();
        v / nrm
    };
    let mut v = fresh(&mut rng);
    let mut logs: Vec<f64> = Vec::with_capacity(RADIUS_MAX_ITERS);
    let mut prev = f64::NAN;
    let mut restarts = 0;
    let mut it = 0;
    while it < RADIUS_MAX_ITERS {
        it += 1;
        let w = a * &v;
        let nrm = w.norm();
        if !(nrm > 1e-200) {
            if restarts == 3 {
                return RadiusEstimate { radius: 0.0, iterations: it, approximate: false };
            }
            restarts += 1;
            logs.clear();
            v = fresh(&mut rng);
            continue;
        }
        logs.push(nrm.ln());
        v = w / nrm;
        if it > 5 && (nrm - prev).abs() < RADIUS_STAGNATION * nrm.max(1e-12) {
            return RadiusEstimate { radius: nrm, iterations: it, approximate: false };
        }
        prev = nrm;
    }
    let tail = &logs[logs.len() / 2..];
    let radius = (tail.iter().sum::<f64>() / tail.len() as f64).exp();
    RadiusEstimate { radius, iterations: it, approximate: true }
}

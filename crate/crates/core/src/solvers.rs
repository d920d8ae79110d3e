//! Inner solvers for the HQS x-update `min_x ½‖u − L⋆x‖²`.
//!
//! * [`cpcr`]: preconditioned Richardson iterations `x ← x − C⋆(L⋆x − u)`.
//! * [`cg_normal`]: conjugate gradient on `LᵀL x = Lᵀu`, Zero boundary.
//! * [`dense_oracle`]: exact dense solves on small grids.

use nalgebra::{DMatrix, DVector};

use crate::dense::{check_grid, contraction_matrix, stacked_matrix};
use crate::error::{DeconvError, Result};
use crate::image::{Boundary, Image};
use crate::invfilter::InverseBank;
use crate::operator::StackedOperator;
use crate::spectral::ConvPlan;

/// Relative residual under which a CPCR run counts as converged.
const CPCR_CONVERGED: f64 = 1e-6;

/// Per-iteration trace of an inner solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// CPCR: `‖C⋆(L⋆x − u)‖_F` before each update. CG: relative
    /// normal-equation residual after each update.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// CG only: a non-positive curvature direction stopped the iteration.
    pub breakdown: bool,
}

impl SolveReport {
    /// `iteration,residual` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,residual\n");
        for (i, r) in self.residual_history.iter().enumerate() {
            s.push_str(&format!("{},{:e}\n", i + 1, r));
        }
        s
    }
}

fn check_stack(op: &StackedOperator, u: &Image, x0: &Image) -> Result<()> {
    if u.channels() != op.len() {
        return Err(DeconvError::ShapeMismatch(format!("u has {} channels, L has {} rows", u.channels(), op.len())));
    }
    if x0.channels() != 1 || (x0.height(), x0.width()) != (u.height(), u.width()) {
        return Err(DeconvError::ShapeMismatch(format!("x0 is {:?}, u is {:?}", x0.shape(), u.shape())));
    }
    Ok(())
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Runs `iterations` CPCR steps `x ← x − Σ_i c_i ⋆ (L_i⋆x − u_i)`.
///
/// `u` stacks `[y; √μ z_1; …; √μ z_n]`. The returned report holds the
/// preconditioned residual norm observed before each step. A non-finite
/// value aborts with [`DeconvError::Diverged`].
pub fn cpcr(
    op: &StackedOperator,
    u: &Image,
    bank: &InverseBank,
    x0: &Image,
    iterations: usize,
    boundary: Boundary,
) -> Result<(Image, SolveReport)> {
    check_stack(op, u, x0)?;
    if iterations == 0 {
        return Err(DeconvError::InvalidParameter("CPCR needs at least one iteration".into()));
    }
    let (h, w) = (u.height(), u.width());
    let forward = ConvPlan::new(&op.rows(), h, w, boundary);
    let precond = ConvPlan::new(&bank.filters(), h, w, boundary);
    let mut x = x0.data().to_vec();
    let mut report = SolveReport::default();
    let scale = l2(u.channel(0)).max(f64::MIN_POSITIVE);
    for _ in 0..iterations {
        let mut residuals = forward.apply_all(&x);
        for (c, r) in residuals.iter_mut().enumerate() {
            for (a, b) in r.iter_mut().zip(u.channel(c)) {
                *a -= b;
            }
        }
        let refs: Vec<&[f64]> = residuals.iter().map(Vec::as_slice).collect();
        let step = precond.contract(&refs);
        let norm = l2(&step);
        report.iterations += 1;
        report.residual_history.push(norm);
        if !norm.is_finite() {
            return Err(DeconvError::Diverged(Box::new(report)));
        }
        for (a, s) in x.iter_mut().zip(&step) {
            *a -= s;
        }
    }
    report.converged = report.residual_history.last().is_some_and(|r| *r <= CPCR_CONVERGED * scale);
    Ok((Image::from_raw(h, w, 1, x), report))
}

/// Conjugate gradient on the normal equations `Σ L_iᵀL_i x = Σ L_iᵀu_i`
/// with Zero-boundary operators (exact adjoints).
///
/// Stops once `‖b − Ax‖ ≤ tol·‖b‖` or after `max_iter` steps.
pub fn cg_normal(
    op: &StackedOperator,
    u: &Image,
    x0: &Image,
    max_iter: usize,
    tol: f64,
) -> Result<(Image, SolveReport)> {
    cg_normal_masked(op, u, None, x0, max_iter, tol)
}

/// [`cg_normal`] with the data row restricted by a 0/1 mask:
/// `(KᵀMK + Σ_{i≥1} L_iᵀL_i) x = KᵀMy + Σ_{i≥1} L_iᵀu_i`. Masking the
/// replicated border of a pre-padded observation leaves only observed
/// pixels in the data term.
pub fn cg_normal_masked(
    op: &StackedOperator,
    u: &Image,
    mask: Option<&[f64]>,
    x0: &Image,
    max_iter: usize,
    tol: f64,
) -> Result<(Image, SolveReport)> {
    check_stack(op, u, x0)?;
    if !(tol > 0.0) {
        return Err(DeconvError::InvalidParameter(format!("CG tolerance must be positive, got {tol}")));
    }
    let (h, w) = (u.height(), u.width());
    if mask.is_some_and(|m| m.len() != h * w) {
        return Err(DeconvError::ShapeMismatch("data mask does not match the grid".into()));
    }
    let masked = |v: &mut [f64]| {
        if let Some(m) = mask {
            for (a, b) in v.iter_mut().zip(m) {
                *a *= b;
            }
        }
    };
    let plan = ConvPlan::new(&op.rows(), h, w, Boundary::Zero);
    let normal = |v: &[f64]| {
        let mut fwd = plan.apply_all(v);
        masked(&mut fwd[0]);
        let refs: Vec<&[f64]> = fwd.iter().map(Vec::as_slice).collect();
        plan.contract_adjoint(&refs)
    };
    let mut data = u.channel(0).to_vec();
    masked(&mut data);
    let channels: Vec<&[f64]> =
        std::iter::once(data.as_slice()).chain((1..u.channels()).map(|c| u.channel(c))).collect();
    let b = plan.contract_adjoint(&channels);
    let (x, report) = cg_solve(normal, &b, x0.data().to_vec(), max_iter, tol)?;
    Ok((Image::from_raw(h, w, 1, x), report))
}

/// Conjugate gradient for `A x = b` with a symmetric positive operator.
pub(crate) fn cg_solve(
    normal: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    mut x: Vec<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, SolveReport)> {
    let bnorm = l2(b).max(f64::MIN_POSITIVE);
    let ax = normal(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let mut report = SolveReport::default();
    if rr.sqrt() <= tol * bnorm {
        report.converged = true;
        return Ok((x, report));
    }
    for _ in 0..max_iter {
        let ap = normal(&p);
        let curvature: f64 = p.iter().zip(&ap).map(|(a, c)| a * c).sum();
        if !(curvature > 0.0) {
            report.breakdown = true;
            break;
        }
        let alpha = rr / curvature;
        for ((xi, pi), (ri, api)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let rr_next: f64 = r.iter().map(|v| v * v).sum();
        let rel = rr_next.sqrt() / bnorm;
        report.iterations += 1;
        report.residual_history.push(rel);
        if !rel.is_finite() {
            return Err(DeconvError::Diverged(Box::new(report)));
        }
        if rel <= tol {
            report.converged = true;
            break;
        }
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
    }
    Ok((x, report))
}

/// Exact solution from dense operator matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub image: Image,
    /// The system was singular and a pseudo-inverse was used.
    pub singular: bool,
}

/// Least-squares minimizer of `‖M_L x − u‖` (no bank) or the solution of
/// `M_C (M_L x − u) = 0` (with bank), on grids up to 32×32.
pub fn dense_oracle(
    op: &StackedOperator,
    u: &Image,
    bank: Option<&InverseBank>,
    boundary: Boundary,
) -> Result<OracleSolution> {
    let (h, w) = (u.height(), u.width());
    check_grid(h, w)?;
    check_stack(op, u, &Image::zeros(h, w, 1))?;
    let ml = stacked_matrix(&op.rows(), h, w, boundary);
    let rhs_full = DVector::from_column_slice(u.data());
    let (lhs, rhs) = match bank {
        None => (ml.transpose() * &ml, ml.transpose() * &rhs_full),
        Some(bank) => {
            let mc = contraction_matrix(&bank.filters(), h, w, boundary);
            (&mc * &ml, mc * rhs_full)
        }
    };
    let (sol, singular) = solve_or_pinv(lhs, &rhs, bank.is_none());
    Ok(OracleSolution { image: Image::from_raw(h, w, 1, sol.iter().cloned().collect()), singular })
}

fn solve_or_pinv(lhs: DMatrix<f64>, rhs: &DVector<f64>, spd: bool) -> (DVector<f64>, bool) {
    let n = lhs.nrows();
    let scale = lhs.amax().max(f64::MIN_POSITIVE);
    if spd {
        if let Some(ch) = lhs.clone().cholesky() {
            let d = ch.l_dirty().diagonal();
            if d.iter().all(|v| v * v > 1e-13 * scale) {
                return (ch.solve(rhs), false);
            }
        }
    } else {
        let lu = lhs.clone().lu();
        let u = lu.u();
        if (0..n).all(|i| u[(i, i)].abs() > 1e-12 * scale) {
            if let Some(x) = lu.solve(rhs) {
                return (x, false);
            }
        }
    }
    let svd = lhs.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    (svd.solve(rhs, tol).expect("u and v were computed"), true)
}

//! Dense matrices of convolution operators on small grids, used as ground
//! truth for the iterative solvers and for spectral-radius estimates.

use nalgebra::DMatrix;

use crate::error::{DeconvError, Result};
use crate::image::{Boundary, Kernel};

pub const MAX_DENSE_SIDE: usize = 32;

pub(crate) fn check_grid(h: usize, w: usize) -> Result<()> {
    if h > MAX_DENSE_SIDE || w > MAX_DENSE_SIDE {
        return Err(DeconvError::GridTooLarge(h, w));
    }
    Ok(())
}

/// `N × N` matrix of same-size convolution on an `h × w` grid, `N = h·w`.
pub fn conv_matrix(ker: &Kernel, h: usize, w: usize, boundary: Boundary) -> DMatrix<f64> {
    let n = h * w;
    let mut m = DMatrix::zeros(n, n);
    let (hh, hw) = (ker.half_h() as isize, ker.half_w() as isize);
    for i in 0..h {
        for j in 0..w {
            let row = i * w + j;
            for di in -hh..=hh {
                for dj in -hw..=hw {
                    let t = ker.tap(di, dj);
                    if t == 0.0 {
                        continue;
                    }
                    let si = boundary.fetch_index(i as isize - di, h);
                    let sj = boundary.fetch_index(j as isize - dj, w);
                    if let (Some(si), Some(sj)) = (si, sj) {
                        m[(row, si * w + sj)] += t;
                    }
                }
            }
        }
    }
    m
}

/// Vertical stack `[K_0; K_1; …]` of convolution matrices.
pub fn stacked_matrix(kernels: &[Kernel], h: usize, w: usize, boundary: Boundary) -> DMatrix<f64> {
    let n = h * w;
    let mut m = DMatrix::zeros(n * kernels.len(), n);
    for (b, k) in kernels.iter().enumerate() {
        m.view_mut((b * n, 0), (n, n)).copy_from(&conv_matrix(k, h, w, boundary));
    }
    m
}

/// Horizontal stack `[K_0, K_1, …]` of convolution matrices.
pub fn contraction_matrix(kernels: &[Kernel], h: usize, w: usize, boundary: Boundary) -> DMatrix<f64> {
    let n = h * w;
    let mut m = DMatrix::zeros(n, n * kernels.len());
    for (b, k) in kernels.iter().enumerate() {
        m.view_mut((0, b * n), (n, n)).copy_from(&conv_matrix(k, h, w, boundary));
    }
    m
}

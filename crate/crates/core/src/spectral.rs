//! 2D discrete Fourier transforms, FFT-backed convolution plans, the
//! closed-form periodic least-squares solve and edge tapering.
//!
//! Sign convention: the forward transform is
//! `X(u, v) = Σ x(i, j) · exp(−2πi (u·i/h + v·j/w))`, unnormalized; the
//! inverse carries the `1/(h·w)` factor.

use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{DeconvError, Result};
use crate::image::{conv2d, padded_channel, Boundary, FilterBank, Image, Kernel};

const HERMITIAN_TOL: f64 = 1e-8;

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

/// Smallest integer ≥ `n` whose prime factors are all in {2, 3, 5, 7}.
pub(crate) fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Row/column FFT pair for a fixed `h × w` grid.
#[derive(Clone)]
pub(crate) struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(h: usize, w: usize) -> Self {
        let mut p = planner().lock().unwrap_or_else(|e| e.into_inner());
        Self {
            h,
            w,
            row_fwd: p.plan_fft_forward(w),
            row_inv: p.plan_fft_inverse(w),
            col_fwd: p.plan_fft_forward(h),
            col_inv: p.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        let (h, w) = (self.h, self.w);
        row.process(buf);
        if h > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); h * w];
            for i in 0..h {
                for j in 0..w {
                    t[j * h + i] = buf[i * w + j];
                }
            }
            col.process(&mut t);
            for j in 0..w {
                for i in 0..h {
                    buf[i * w + j] = t[j * h + i];
                }
            }
        }
    }

    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse; callers scale by `1/(h·w)`.
    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
    }
}

/// Places kernel taps on an `h × w` grid with the anchor at index (0, 0),
/// wrapping negative offsets.
pub(crate) fn embed_taps(ker: &Kernel, h: usize, w: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    let (hh, hw) = (ker.half_h() as isize, ker.half_w() as isize);
    for di in -hh..=hh {
        for dj in -hw..=hw {
            let i = di.rem_euclid(h as isize) as usize;
            let j = dj.rem_euclid(w as isize) as usize;
            buf[i * w + j] += ker.tap(di, dj);
        }
    }
    buf
}

/// Precomputed kernel spectra for repeated same-size convolutions of
/// `height × width` images under one boundary rule.
///
/// The image is extended by the largest kernel half-width according to the
/// boundary rule, circularly convolved on a grid at least that large, and
/// cropped; no wrap-around reaches the cropped window, so the result equals
/// spatial convolution up to round-off.
#[derive(Clone)]
pub struct ConvPlan {
    height: usize,
    width: usize,
    boundary: Boundary,
    pad_h: usize,
    pad_w: usize,
    grid_h: usize,
    grid_w: usize,
    fft: Fft2,
    spectra: Vec<Vec<Complex64>>,
}

impl ConvPlan {
    pub fn new(kernels: &[Kernel], height: usize, width: usize, boundary: Boundary) -> Self {
        let pad_h = kernels.iter().map(Kernel::half_h).max().unwrap_or(0);
        let pad_w = kernels.iter().map(Kernel::half_w).max().unwrap_or(0);
        let grid_h = fast_len(height + 2 * pad_h);
        let grid_w = fast_len(width + 2 * pad_w);
        let fft = Fft2::new(grid_h, grid_w);
        let spectra = kernels
            .iter()
            .map(|k| {
                let mut s = embed_taps(k, grid_h, grid_w);
                fft.forward(&mut s);
                s
            })
            .collect();
        Self { height, width, boundary, pad_h, pad_w, grid_h, grid_w, fft, spectra }
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    fn lift(&self, src: &[f64]) -> Vec<Complex64> {
        let padded = padded_channel(src, self.height, self.width, self.pad_h, self.pad_w, self.boundary);
        let pw = self.width + 2 * self.pad_w;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid_h * self.grid_w];
        for (i, row) in padded.chunks_exact(pw).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                buf[i * self.grid_w + j].re = v;
            }
        }
        self.fft.forward(&mut buf);
        buf
    }

    fn lower(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.fft.inverse(&mut buf);
        let scale = 1.0 / (self.grid_h * self.grid_w) as f64;
        let mut out = Vec::with_capacity(self.height * self.width);
        for i in 0..self.height {
            let row = (i + self.pad_h) * self.grid_w + self.pad_w;
            out.extend(buf[row..row + self.width].iter().map(|c| c.re * scale));
        }
        out
    }

    /// Convolution with kernel `idx`.
    pub fn apply(&self, idx: usize, src: &[f64]) -> Vec<f64> {
        let mut s = self.lift(src);
        for (a, b) in s.iter_mut().zip(&self.spectra[idx]) {
            *a *= b;
        }
        self.lower(s)
    }

    /// Convolution with every kernel, sharing one forward transform.
    pub fn apply_all(&self, src: &[f64]) -> Vec<Vec<f64>> {
        let s = self.lift(src);
        self.spectra.iter().map(|k| self.lower(s.iter().zip(k).map(|(a, b)| a * b).collect())).collect()
    }

    /// Correlation with every kernel (adjoint under the Zero boundary).
    pub fn correlate_all(&self, src: &[f64]) -> Vec<Vec<f64>> {
        let s = self.lift(src);
        self.spectra.iter().map(|k| self.lower(s.iter().zip(k).map(|(a, b)| a * b.conj()).collect())).collect()
    }

    /// `Σ_i k_i ⋆ r_i`, sharing one inverse transform.
    pub fn contract(&self, inputs: &[&[f64]]) -> Vec<f64> {
        self.accumulate(inputs, false)
    }

    /// `Σ_i k_i^T r_i`: sum of correlations.
    pub fn contract_adjoint(&self, inputs: &[&[f64]]) -> Vec<f64> {
        self.accumulate(inputs, true)
    }

    fn accumulate(&self, inputs: &[&[f64]], conj: bool) -> Vec<f64> {
        assert_eq!(inputs.len(), self.spectra.len(), "one input per kernel");
        let mut acc = vec![Complex64::new(0.0, 0.0); self.grid_h * self.grid_w];
        for (src, k) in inputs.iter().zip(&self.spectra) {
            let s = self.lift(src);
            for ((a, x), kk) in acc.iter_mut().zip(&s).zip(k) {
                *a += x * if conj { kk.conj() } else { *kk };
            }
        }
        self.lower(acc)
    }
}

/// Complex spectrum on an `h × w` grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, values: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(DeconvError::ShapeMismatch(format!("{} values for a {height}x{width} spectrum", values.len())));
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.values[u * self.width + v]
    }

    /// Entrywise product.
    pub fn mul(&self, other: &Spectrum) -> Result<Spectrum> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(DeconvError::ShapeMismatch("spectra differ in size".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(Spectrum { height: self.height, width: self.width, values })
    }

    /// Largest deviation from `X(−u, −v) = conj X(u, v)`, relative to the
    /// largest magnitude.
    pub fn hermitian_deviation(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let peak = self.values.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
        let mut dev: f64 = 0.0;
        for u in 0..h {
            for v in 0..w {
                let mirror = self.get((h - u) % h, (w - v) % w);
                dev = dev.max((self.get(u, v) - mirror.conj()).norm());
            }
        }
        dev / peak
    }
}

/// Forward DFT of a single-channel image.
pub fn dft2(grid: &Image) -> Result<Spectrum> {
    if grid.channels() != 1 {
        return Err(DeconvError::ShapeMismatch(format!("dft2 expects one channel, got {}", grid.channels())));
    }
    let (h, w) = (grid.height(), grid.width());
    let mut buf: Vec<Complex64> = grid.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Fft2::new(h, w).forward(&mut buf);
    Ok(Spectrum { height: h, width: w, values: buf })
}

/// Inverse DFT of a Hermitian-symmetric spectrum.
pub fn idft2(spec: &Spectrum) -> Result<Image> {
    let dev = spec.hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(DeconvError::NonHermitian(dev));
    }
    let (h, w) = (spec.height, spec.width);
    let mut buf = spec.values.clone();
    Fft2::new(h, w).inverse(&mut buf);
    let scale = 1.0 / (h * w) as f64;
    Ok(Image::from_raw(h, w, 1, buf.iter().map(|c| c.re * scale).collect()))
}

/// Spectrum of the kernel placed on an `h × w` grid with its anchor at the
/// origin, so spectral products realize circular convolution.
pub fn embed_kernel(ker: &Kernel, h: usize, w: usize) -> Result<Spectrum> {
    if ker.height() > h || ker.width() > w {
        return Err(DeconvError::KernelTooLarge { kernel_h: ker.height(), kernel_w: ker.width(), height: h, width: w });
    }
    let mut buf = embed_taps(ker, h, w);
    Fft2::new(h, w).forward(&mut buf);
    Ok(Spectrum { height: h, width: w, values: buf })
}

/// Exact minimizer of `½‖y − k⋆x‖² + (μ/2) Σ_i ‖z_i − f_i⋆x‖²` under
/// periodic boundaries:
/// `x = F⁻¹[(K̃₀*Ỹ + μ Σ K̃ᵢ*Z̃ᵢ) / (|K̃₀|² + μ Σ |K̃ᵢ|²)]`.
///
/// `z` carries one channel per prior filter; `y_pad` is the (already padded)
/// observation grid.
pub fn wiener_solve(y_pad: &Image, z: &Image, k: &Kernel, prior: &FilterBank, mu: f64) -> Result<Image> {
    if y_pad.channels() != 1 {
        return Err(DeconvError::ShapeMismatch("wiener_solve expects a single-channel y".into()));
    }
    if z.channels() != prior.len() || (z.height(), z.width()) != (y_pad.height(), y_pad.width()) {
        return Err(DeconvError::ShapeMismatch(format!(
            "z is {:?}, expected {}x{}x{}",
            z.shape(),
            y_pad.height(),
            y_pad.width(),
            prior.len()
        )));
    }
    if !(mu > 0.0) {
        return Err(DeconvError::InvalidParameter(format!("mu must be positive, got {mu}")));
    }
    let (h, w) = (y_pad.height(), y_pad.width());
    let fft = Fft2::new(h, w);
    let transform = |data: &[f64]| {
        let mut b: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut b);
        b
    };
    let kernel_spectrum = |ker: &Kernel| {
        let mut b = embed_taps(ker, h, w);
        fft.forward(&mut b);
        b
    };
    let k0 = kernel_spectrum(k);
    let y = transform(y_pad.data());
    let mut num: Vec<Complex64> = k0.iter().zip(&y).map(|(a, b)| a.conj() * b).collect();
    let mut den: Vec<f64> = k0.iter().map(|a| a.norm_sqr()).collect();
    for (i, ki) in prior.weighted_kernels().iter().enumerate() {
        let ks = kernel_spectrum(ki);
        let zs = transform(z.channel(i));
        for ((n, d), (a, b)) in num.iter_mut().zip(den.iter_mut()).zip(ks.iter().zip(&zs)) {
            *n += mu * a.conj() * b;
            *d += mu * a.norm_sqr();
        }
    }
    let floor = 1e-14 * den.iter().cloned().fold(0.0, f64::max);
    for (idx, (n, d)) in num.iter_mut().zip(&den).enumerate() {
        if !(*d > floor) {
            return Err(DeconvError::ZeroDenominator(idx / w, idx % w));
        }
        *n /= *d;
    }
    fft.inverse(&mut num);
    let scale = 1.0 / (h * w) as f64;
    Ok(Image::from_raw(h, w, 1, num.iter().map(|c| c.re * scale).collect()))
}

/// Border weights along one axis of length `n`: `1 − β`, where `β` is the
/// peak-normalized circular autocorrelation (period `n − 1`) of the kernel's
/// projection, mirrored so both ends read 0.
fn taper_weights(projection: &[f64], n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    let period = n - 1;
    let mut wrapped = vec![0.0; period];
    for (t, &p) in projection.iter().enumerate() {
        wrapped[t % period] += p;
    }
    let auto: Vec<f64> =
        (0..period).map(|d| (0..period).map(|t| wrapped[t] * wrapped[(t + d) % period]).sum()).collect();
    let peak = auto.iter().cloned().fold(0.0, f64::max);
    let mut out: Vec<f64> = auto.iter().map(|a| 1.0 - a / peak).collect();
    out.push(out[0]);
    // autocorrelation of a nonnegative profile: clamp round-off
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// Blends the image with its blurred copy near the borders:
/// `out = α·img + (1 − α)·(k ⋆ img)` with `α = a_rows ⊗ a_cols`.
pub fn edgetaper(img: &Image, ker: &Kernel) -> Result<Image> {
    ker.require_normalized()?;
    let (h, w) = (img.height(), img.width());
    let row_proj: Vec<f64> =
        (0..ker.height()).map(|i| (0..ker.width()).map(|j| ker.taps()[i * ker.width() + j]).sum()).collect();
    let col_proj: Vec<f64> =
        (0..ker.width()).map(|j| (0..ker.height()).map(|i| ker.taps()[i * ker.width() + j]).sum()).collect();
    let a_rows = taper_weights(&row_proj, h);
    let a_cols = taper_weights(&col_proj, w);
    let blurred = conv2d(img, ker, Boundary::Replicate)?;
    let mut out = img.clone();
    for c in 0..img.channels() {
        let b = blurred.channel(c);
        let o = out.channel_mut(c);
        for (i, ar) in a_rows.iter().enumerate() {
            for (j, ac) in a_cols.iter().enumerate() {
                let a = ar * ac;
                let idx = i * w + j;
                o[idx] = a * o[idx] + (1.0 - a) * b[idx];
            }
        }
    }
    Ok(out)
}

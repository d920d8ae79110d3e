//! Image and kernel containers, spatial convolution with explicit boundary
//! rules, filter banks, PSNR and noise synthesis.
//!
//! Convolution follows `out(p) = Σ_q ker(q) · img(p − q)` where `q` is the
//! tap offset from the kernel anchor (its center pixel). Pixels outside the
//! grid are fetched according to [`Boundary`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DeconvError, Result};
use crate::spectral::ConvPlan;

/// Kernels with more taps than this are convolved through the FFT path.
const DIRECT_TAP_LIMIT: usize = 121;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// A real-valued grid with one or more channels, stored channel-major and
/// row-major within each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(DeconvError::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(DeconvError::InvalidImage(format!(
                "expected {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DeconvError::InvalidImage("non-finite value".into()));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Internal constructor for buffers already known to be well-formed.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self { height, width, channels, data }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::from_raw(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::from_raw(height, width, 1, vec![value; height * width])
    }

    /// Single-channel image from a function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self::from_raw(height, width, 1, data)
    }

    /// Stacks single- or multi-channel images of equal size along channels.
    pub fn stack(parts: &[Image]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| DeconvError::InvalidImage("cannot stack zero images".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return Err(DeconvError::ShapeMismatch(format!("stacking {}x{} with {h}x{w}", p.height, p.width)));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Ok(Self::from_raw(h, w, channels, data))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copy of channel `c` as its own image.
    pub fn channel_image(&self, c: usize) -> Image {
        Self::from_raw(self.height, self.width, 1, self.channel(c).to_vec())
    }

    pub fn split_channels(&self) -> Vec<Image> {
        (0..self.channels).map(|c| self.channel_image(c)).collect()
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[c * self.pixels() + i * self.width + j]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Self::from_raw(self.height, self.width, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    fn zip_with(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_raw(self.height, self.width, self.channels, data))
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Frobenius norm over all channels.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(DeconvError::ShapeMismatch(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Sub-window of every channel.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(DeconvError::ShapeMismatch(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let ch = self.channel(c);
            for i in top..top + height {
                data.extend_from_slice(&ch[i * self.width + left..i * self.width + left + width]);
            }
        }
        Ok(Self::from_raw(height, width, self.channels, data))
    }

    /// Extends every channel by `pad_h` rows and `pad_w` columns on each side.
    pub fn pad(&self, pad_h: usize, pad_w: usize, boundary: Boundary) -> Image {
        let (ph, pw) = (self.height + 2 * pad_h, self.width + 2 * pad_w);
        let mut data = Vec::with_capacity(ph * pw * self.channels);
        for c in 0..self.channels {
            data.extend(padded_channel(self.channel(c), self.height, self.width, pad_h, pad_w, boundary));
        }
        Self::from_raw(ph, pw, self.channels, data)
    }
}

/// Rule for fetching pixels outside the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Boundary {
    /// Outside pixels are 0.
    Zero,
    /// Outside pixels take the value of the nearest edge pixel.
    #[default]
    Replicate,
    /// The grid wraps around.
    Periodic,
}

impl Boundary {
    /// Maps a possibly out-of-range coordinate to a valid index, or `None`
    /// when the pixel reads as 0.
    #[inline]
    pub fn fetch_index(self, idx: isize, len: usize) -> Option<usize> {
        let n = len as isize;
        match self {
            Boundary::Zero => (0..n).contains(&idx).then_some(idx as usize),
            Boundary::Replicate => Some(idx.clamp(0, n - 1) as usize),
            Boundary::Periodic => Some(idx.rem_euclid(n) as usize),
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = DeconvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(Boundary::Zero),
            "replicate" => Ok(Boundary::Replicate),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(DeconvError::InvalidParameter(format!("unknown boundary '{other}'"))),
        }
    }
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundary::Zero => "zero",
            Boundary::Replicate => "replicate",
            Boundary::Periodic => "periodic",
        })
    }
}

pub(crate) fn padded_channel(
    src: &[f64],
    height: usize,
    width: usize,
    pad_h: usize,
    pad_w: usize,
    boundary: Boundary,
) -> Vec<f64> {
    let pw = width + 2 * pad_w;
    let ph = height + 2 * pad_h;
    let mut out = vec![0.0; ph * pw];
    let cols: Vec<Option<usize>> = (0..pw).map(|j| boundary.fetch_index(j as isize - pad_w as isize, width)).collect();
    for i in 0..ph {
        let Some(si) = boundary.fetch_index(i as isize - pad_h as isize, height) else {
            continue;
        };
        let row = &src[si * width..(si + 1) * width];
        let dst = &mut out[i * pw..(i + 1) * pw];
        for (d, c) in dst.iter_mut().zip(&cols) {
            if let Some(sj) = c {
                *d = row[*sj];
            }
        }
    }
    out
}

/// A small 2D filter with odd side lengths, anchored at its center tap.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    height: usize,
    width: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        if height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(DeconvError::InvalidKernel(format!("sides must be odd, got {height}x{width}")));
        }
        if taps.len() != height * width {
            return Err(DeconvError::InvalidKernel(format!("expected {} taps, got {}", height * width, taps.len())));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(DeconvError::InvalidKernel("non-finite tap".into()));
        }
        Ok(Self { height, width, taps })
    }

    pub(crate) fn from_raw(height: usize, width: usize, taps: Vec<f64>) -> Self {
        debug_assert!(height % 2 == 1 && width % 2 == 1 && taps.len() == height * width);
        Self { height, width, taps }
    }

    /// Builds a kernel from taps on any support, zero-padding one trailing
    /// row/column where a side is even so the anchor lands on a tap.
    pub fn recentered(height: usize, width: usize, taps: &[f64]) -> Result<Self> {
        let (h, w) = (height | 1, width | 1);
        let mut out = vec![0.0; h * w];
        for i in 0..height {
            for j in 0..width {
                out[i * w + j] = taps[i * width + j];
            }
        }
        Self::new(h, w, out)
    }

    /// Dirac filter.
    pub fn delta() -> Self {
        Self::from_raw(1, 1, vec![1.0])
    }

    pub fn delta_sized(height: usize, width: usize) -> Result<Self> {
        Self::delta().center_pad(height, width)
    }

    /// Horizontal finite difference `[1, −1]` on a 3×3 support:
    /// `out(i, j) = x(i, j) − x(i, j − 1)`.
    pub fn derivative_x() -> Self {
        Self::from_raw(3, 3, vec![0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0])
    }

    /// Vertical finite difference, the transpose of [`Kernel::derivative_x`].
    pub fn derivative_y() -> Self {
        Self::derivative_x().transpose()
    }

    /// Normalized square box filter.
    pub fn box_filter(side: usize) -> Result<Self> {
        let n = (side * side) as f64;
        Self::new(side, side, vec![1.0 / n; side * side])
    }

    /// Normalized Gaussian truncated to a `side`×`side` support.
    pub fn gaussian(side: usize, sigma: f64) -> Result<Self> {
        let half = (side / 2) as f64;
        let mut taps = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                let (di, dj) = (i as f64 - half, j as f64 - half);
                taps.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
            }
        }
        let s: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= s);
        Self::new(side, side, taps)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn half_h(&self) -> usize {
        self.height / 2
    }

    pub fn half_w(&self) -> usize {
        self.width / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Tap at offset `(di, dj)` from the anchor; zero off-support.
    pub fn tap(&self, di: isize, dj: isize) -> f64 {
        let i = di + self.half_h() as isize;
        let j = dj + self.half_w() as isize;
        if i < 0 || j < 0 || i >= self.height as isize || j >= self.width as isize {
            0.0
        } else {
            self.taps[i as usize * self.width + j as usize]
        }
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.taps.iter().all(|&t| t >= 0.0)
    }

    /// Blur-kernel invariant: nonnegative with unit mass.
    pub fn is_normalized(&self) -> bool {
        self.is_nonnegative() && (self.sum() - 1.0).abs() <= 1e-6
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(DeconvError::InvalidKernel(format!(
                "blur kernel must be nonnegative with unit sum (sum = {})",
                self.sum()
            )))
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Kernel {
        Self::from_raw(self.height, self.width, self.taps.iter().map(|t| t * s).collect())
    }

    pub fn transpose(&self) -> Kernel {
        let mut taps = vec![0.0; self.taps.len()];
        for i in 0..self.height {
            for j in 0..self.width {
                taps[j * self.height + i] = self.taps[i * self.width + j];
            }
        }
        Self::from_raw(self.width, self.height, taps)
    }

    /// Point reflection about the anchor, turning convolution into
    /// correlation.
    pub fn flipped(&self) -> Kernel {
        let mut taps = self.taps.clone();
        taps.reverse();
        Self::from_raw(self.height, self.width, taps)
    }

    /// Embeds the kernel, centered, in a larger odd support.
    pub fn center_pad(&self, height: usize, width: usize) -> Result<Kernel> {
        if height < self.height || width < self.width || height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(DeconvError::InvalidKernel(format!(
                "cannot center a {}x{} kernel in {height}x{width}",
                self.height, self.width
            )));
        }
        let (oi, oj) = ((height - self.height) / 2, (width - self.width) / 2);
        let mut taps = vec![0.0; height * width];
        for i in 0..self.height {
            for j in 0..self.width {
                taps[(i + oi) * width + j + oj] = self.taps[i * self.width + j];
            }
        }
        Ok(Self::from_raw(height, width, taps))
    }

    /// Central window of the kernel; the inverse of [`Kernel::center_pad`].
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Kernel> {
        if height > self.height || width > self.width || height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(DeconvError::InvalidKernel(format!(
                "cannot crop a {}x{} kernel to {height}x{width}",
                self.height, self.width
            )));
        }
        let (hh, hw) = ((height / 2) as isize, (width / 2) as isize);
        let mut taps = Vec::with_capacity(height * width);
        for di in -hh..=hh {
            for dj in -hw..=hw {
                taps.push(self.tap(di, dj));
            }
        }
        Ok(Self::from_raw(height, width, taps))
    }

    /// Full convolution `self ⋆ other`, with support `h1 + h2 − 1`.
    pub fn compose(&self, other: &Kernel) -> Kernel {
        let (h, w) = (self.height + other.height - 1, self.width + other.width - 1);
        let mut taps = vec![0.0; h * w];
        for a in 0..self.height {
            for b in 0..self.width {
                let s = self.taps[a * self.width + b];
                if s == 0.0 {
                    continue;
                }
                for c in 0..other.height {
                    for d in 0..other.width {
                        taps[(a + c) * w + b + d] += s * other.taps[c * other.width + d];
                    }
                }
            }
        }
        Self::from_raw(h, w, taps)
    }

    /// Entrywise sum of two kernels on the union of their centered supports.
    pub fn plus(&self, other: &Kernel) -> Kernel {
        let (h, w) = (self.height.max(other.height), self.width.max(other.width));
        let (hh, hw) = ((h / 2) as isize, (w / 2) as isize);
        let mut taps = Vec::with_capacity(h * w);
        for di in -hh..=hh {
            for dj in -hw..=hw {
                taps.push(self.tap(di, dj) + other.tap(di, dj));
            }
        }
        Self::from_raw(h, w, taps)
    }

    /// Frobenius distance after aligning both anchors.
    pub fn distance(&self, other: &Kernel) -> f64 {
        let (h, w) = (self.height.max(other.height), self.width.max(other.width));
        let (hh, hw) = ((h / 2) as isize, (w / 2) as isize);
        let mut acc = 0.0;
        for di in -hh..=hh {
            for dj in -hw..=hw {
                let d = self.tap(di, dj) - other.tap(di, dj);
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

/// Ordered stack of weighted kernels. Applied to an image it produces one
/// output channel per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    entries: Vec<(Kernel, f64)>,
}

impl FilterBank {
    pub fn new(entries: Vec<(Kernel, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(DeconvError::InvalidBank("filter bank is empty".into()));
        }
        if let Some((_, w)) = entries.iter().find(|(_, w)| !w.is_finite() || *w <= 0.0) {
            return Err(DeconvError::InvalidBank(format!("weight {w} must be finite and positive")));
        }
        Ok(Self { entries })
    }

    /// Unit-weight bank.
    pub fn from_kernels(kernels: Vec<Kernel>) -> Result<Self> {
        Self::new(kernels.into_iter().map(|k| (k, 1.0)).collect())
    }

    /// Horizontal and vertical finite differences, the TV prior.
    pub fn gradient() -> Self {
        Self { entries: vec![(Kernel::derivative_x(), 1.0), (Kernel::derivative_y(), 1.0)] }
    }

    pub fn entries(&self) -> &[(Kernel, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries with weights folded into the taps.
    pub fn weighted_kernels(&self) -> Vec<Kernel> {
        self.entries.iter().map(|(k, w)| k.scale(*w)).collect()
    }

    /// Contraction `Σ a_i ⋆ b_i` of two banks of equal length, as one kernel.
    pub fn contract(&self, other: &FilterBank) -> Result<Kernel> {
        if self.len() != other.len() {
            return Err(DeconvError::ShapeMismatch(format!(
                "contracting banks of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        let mut acc = Kernel::delta().scale(0.0);
        for (a, b) in self.weighted_kernels().iter().zip(other.weighted_kernels().iter()) {
            acc = acc.plus(&a.compose(b));
        }
        Ok(acc)
    }
}

fn check_support(height: usize, width: usize, ker: &Kernel) -> Result<()> {
    let limit = 2 * height.min(width);
    if ker.height > limit || ker.width > limit {
        return Err(DeconvError::KernelTooLarge { kernel_h: ker.height, kernel_w: ker.width, height, width });
    }
    Ok(())
}

/// Direct spatial convolution of one channel.
pub(crate) fn conv_channel_direct(
    src: &[f64],
    height: usize,
    width: usize,
    ker: &Kernel,
    boundary: Boundary,
) -> Vec<f64> {
    let (hh, hw) = (ker.half_h(), ker.half_w());
    let padded = padded_channel(src, height, width, hh, hw, boundary);
    let pw = width + 2 * hw;
    let mut out = vec![0.0; height * width];
    // out(i, j) = Σ_{a,b} k[a][b] · P[i + 2hh − a][j + 2hw − b]
    for a in 0..ker.height {
        for b in 0..ker.width {
            let t = ker.taps[a * ker.width + b];
            if t == 0.0 {
                continue;
            }
            let (oi, oj) = (2 * hh - a, 2 * hw - b);
            for i in 0..height {
                let prow = &padded[(i + oi) * pw + oj..(i + oi) * pw + oj + width];
                let orow = &mut out[i * width..(i + 1) * width];
                for (o, p) in orow.iter_mut().zip(prow) {
                    *o += t * p;
                }
            }
        }
    }
    out
}

pub(crate) fn conv_channel(src: &[f64], height: usize, width: usize, ker: &Kernel, boundary: Boundary) -> Vec<f64> {
    if ker.len() <= DIRECT_TAP_LIMIT {
        conv_channel_direct(src, height, width, ker, boundary)
    } else {
        ConvPlan::new(std::slice::from_ref(ker), height, width, boundary).apply(0, src)
    }
}

/// Same-size convolution of every channel of `img` with `ker`.
pub fn conv2d(img: &Image, ker: &Kernel, boundary: Boundary) -> Result<Image> {
    check_support(img.height, img.width, ker)?;
    let mut data = Vec::with_capacity(img.data.len());
    for c in 0..img.channels {
        data.extend(conv_channel(img.channel(c), img.height, img.width, ker, boundary));
    }
    Ok(Image::from_raw(img.height, img.width, img.channels, data))
}

/// Same-size correlation `out(p) = Σ_q ker(q) · img(p + q)`. Under the Zero
/// boundary this is the adjoint of [`conv2d`].
pub fn correlate2d(img: &Image, ker: &Kernel, boundary: Boundary) -> Result<Image> {
    conv2d(img, &ker.flipped(), boundary)
}

/// Applies every weighted kernel in the bank to a single-channel image and
/// stacks the responses, in bank order.
pub fn bank_apply(bank: &FilterBank, img: &Image, boundary: Boundary) -> Result<Image> {
    if img.channels != 1 {
        return Err(DeconvError::ShapeMismatch(format!("bank_apply expects one channel, got {}", img.channels)));
    }
    let kernels = bank.weighted_kernels();
    for k in &kernels {
        check_support(img.height, img.width, k)?;
    }
    let mut data = Vec::with_capacity(img.pixels() * kernels.len());
    for k in &kernels {
        data.extend(conv_channel(img.data(), img.height, img.width, k, boundary));
    }
    Ok(Image::from_raw(img.height, img.width, kernels.len(), data))
}

/// Peak signal-to-noise ratio with peak 1. Identical inputs report
/// [`PSNR_CAP_DB`].
pub fn psnr(est: &Image, reference: &Image) -> Result<f64> {
    est.check_same_shape(reference)?;
    let mse = est.data.iter().zip(&reference.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / est.data.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// PSNR ignoring a `margin`-pixel band along every edge.
pub fn psnr_cropped(est: &Image, reference: &Image, margin: usize) -> Result<f64> {
    est.check_same_shape(reference)?;
    if 2 * margin >= est.height || 2 * margin >= est.width {
        return Err(DeconvError::InvalidParameter(format!(
            "margin {margin} leaves no pixels in {}x{}",
            est.height, est.width
        )));
    }
    let (h, w) = (est.height - 2 * margin, est.width - 2 * margin);
    psnr(&est.crop(margin, margin, h, w)?, &reference.crop(margin, margin, h, w)?)
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma_percent / 100`.
/// The result is not clipped, so values may leave [0, 1].
pub fn add_gaussian_noise(img: &Image, sigma_percent: f64, seed: u64) -> Result<Image> {
    if !(sigma_percent >= 0.0) || !sigma_percent.is_finite() {
        return Err(DeconvError::InvalidParameter(format!("noise level must be nonnegative, got {sigma_percent}")));
    }
    if sigma_percent == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma_percent / 100.0).map_err(|e| DeconvError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(img.map(|v| v + normal.sample(&mut rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.gen::<f64>()).map(|v| v)
    }

    fn random_kernel(side: usize, seed: u64) -> Kernel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Kernel::new(side, side, (0..side * side).map(|_| rng.gen::<f64>() - 0.3).collect()).unwrap()
    }

    /// Materializes the convolution as a dense matrix by enumerating taps
    /// against the fetch rule.
    fn dense_conv_matrix(ker: &Kernel, h: usize, w: usize, boundary: Boundary) -> Vec<Vec<f64>> {
        let n = h * w;
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..h {
            for j in 0..w {
                for di in -(ker.half_h() as isize)..=ker.half_h() as isize {
                    for dj in -(ker.half_w() as isize)..=ker.half_w() as isize {
                        let si = boundary.fetch_index(i as isize - di, h);
                        let sj = boundary.fetch_index(j as isize - dj, w);
                        if let (Some(si), Some(sj)) = (si, sj) {
                            m[i * w + j][si * w + sj] += ker.tap(di, dj);
                        }
                    }
                }
            }
        }
        m
    }

    #[test]
    fn delta_is_identity_for_every_boundary() {
        let img = random_image(7, 9, 1);
        for b in [Boundary::Zero, Boundary::Replicate, Boundary::Periodic] {
            assert_eq!(conv2d(&img, &Kernel::delta(), b).unwrap(), img);
            assert_eq!(correlate2d(&img, &Kernel::delta(), b).unwrap(), img);
        }
    }

    #[test]
    fn constant_image_is_preserved_by_normalized_kernel() {
        let img = Image::constant(10, 12, 0.37);
        let out = conv2d(&img, &Kernel::gaussian(7, 1.5).unwrap(), Boundary::Replicate).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn conv_matches_dense_matrix_product() {
        let img = random_image(8, 8, 2);
        let ker = random_kernel(3, 3);
        for b in [Boundary::Zero, Boundary::Replicate, Boundary::Periodic] {
            let m = dense_conv_matrix(&ker, 8, 8, b);
            let expect: Vec<f64> = m.iter().map(|row| row.iter().zip(img.data()).map(|(a, x)| a * x).sum()).collect();
            let out = conv2d(&img, &ker, b).unwrap();
            for (o, e) in out.data().iter().zip(&expect) {
                assert!((o - e).abs() < 1e-12, "{b}: {o} vs {e}");
            }
        }
    }

    #[test]
    fn fft_path_agrees_with_direct_path() {
        let img = random_image(20, 17, 4);
        let ker = random_kernel(13, 5);
        for b in [Boundary::Zero, Boundary::Replicate, Boundary::Periodic] {
            let direct = conv_channel_direct(img.data(), 20, 17, &ker, b);
            let fft = ConvPlan::new(std::slice::from_ref(&ker), 20, 17, b).apply(0, img.data());
            let err = direct.iter().zip(&fft).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{b}: {err}");
        }
    }

    #[test]
    fn adjoint_identity_under_zero_boundary() {
        let x = random_image(8, 8, 6);
        let y = random_image(8, 8, 7);
        let k = random_kernel(5, 8);
        let lhs = conv2d(&x, &k, Boundary::Zero).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&correlate2d(&y, &k, Boundary::Zero).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn symmetric_kernel_correlation_equals_convolution() {
        let img = random_image(9, 9, 9);
        let k = Kernel::gaussian(5, 1.0).unwrap();
        let a = conv2d(&img, &k, Boundary::Replicate).unwrap();
        let b = correlate2d(&img, &k, Boundary::Replicate).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-14);
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let img = random_image(4, 6, 1);
        let k = Kernel::box_filter(9).unwrap();
        assert!(matches!(conv2d(&img, &k, Boundary::Zero), Err(DeconvError::KernelTooLarge { .. })));
        assert!(conv2d(&img, &Kernel::box_filter(7).unwrap(), Boundary::Zero).is_ok());
    }

    #[test]
    fn kernel_validation() {
        assert!(Kernel::new(2, 3, vec![0.0; 6]).is_err());
        assert!(Kernel::new(3, 3, vec![f64::NAN; 9]).is_err());
        let k = Kernel::recentered(2, 2, &[0.25; 4]).unwrap();
        assert_eq!((k.height(), k.width()), (3, 3));
        assert!(k.is_normalized());
    }

    #[test]
    fn derivative_filters() {
        let img = Image::from_fn(4, 5, |i, j| (i * 10 + j) as f64);
        let dx = conv2d(&img, &Kernel::derivative_x(), Boundary::Zero).unwrap();
        assert_eq!(dx.get(0, 2, 3), 1.0);
        assert_eq!(dx.get(0, 2, 0), 20.0);
        let dy = conv2d(&img, &Kernel::derivative_y(), Boundary::Replicate).unwrap();
        assert_eq!(dy.get(0, 2, 3), 10.0);
        assert_eq!(dy.get(0, 0, 3), 0.0);
    }

    #[test]
    fn bank_linearity_and_order() {
        let img = random_image(6, 6, 11);
        let one = FilterBank::new(vec![(Kernel::delta(), 1.0)]).unwrap();
        assert_eq!(bank_apply(&one, &img, Boundary::Zero).unwrap(), img);
        let two = FilterBank::new(vec![(Kernel::delta(), 1.0), (Kernel::delta(), 2.0)]).unwrap();
        let out = bank_apply(&two, &img, Boundary::Zero).unwrap();
        assert_eq!(out.channels(), 2);
        assert_eq!(out.channel_image(1), img.scale(2.0));
    }

    #[test]
    fn bank_with_prior_matches_componentwise_convolution() {
        let img = random_image(16, 16, 12);
        let k = Kernel::gaussian(5, 1.2).unwrap();
        let mu: f64 = 0.008;
        let bank = FilterBank::new(vec![
            (k.clone(), 1.0),
            (Kernel::derivative_x(), mu.sqrt()),
            (Kernel::derivative_y(), mu.sqrt()),
        ])
        .unwrap();
        let out = bank_apply(&bank, &img, Boundary::Replicate).unwrap();
        let expect = [
            conv2d(&img, &k, Boundary::Replicate).unwrap(),
            conv2d(&img, &Kernel::derivative_x(), Boundary::Replicate).unwrap().scale(mu.sqrt()),
            conv2d(&img, &Kernel::derivative_y(), Boundary::Replicate).unwrap().scale(mu.sqrt()),
        ];
        for (c, e) in expect.iter().enumerate() {
            assert!(out.channel_image(c).max_abs_diff(e).unwrap() < 1e-14);
        }
    }

    #[test]
    fn bank_rejects_bad_weights() {
        assert!(FilterBank::new(vec![]).is_err());
        assert!(FilterBank::new(vec![(Kernel::delta(), 0.0)]).is_err());
        assert!(FilterBank::new(vec![(Kernel::delta(), f64::INFINITY)]).is_err());
    }

    #[test]
    fn psnr_reference_values() {
        let x = random_image(10, 10, 13);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
        let e1 = x.map(|v| v + 0.1);
        assert!((psnr(&e1, &x).unwrap() - 20.0).abs() < 1e-9);
        let e2 = x.map(|v| v - 0.01);
        assert!((psnr(&e2, &x).unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr(&x, &Image::zeros(10, 11, 1)).is_err());
        let margin = psnr_cropped(&e1, &x, 2).unwrap();
        assert!((margin - 20.0).abs() < 1e-9);
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let img = Image::constant(1000, 1000, 0.5);
        assert_eq!(add_gaussian_noise(&img, 0.0, 3).unwrap(), img);
        let a = add_gaussian_noise(&img, 2.0, 42).unwrap();
        let b = add_gaussian_noise(&img, 2.0, 42).unwrap();
        assert_eq!(a, b);
        let d = a.sub(&img).unwrap();
        let mean = d.mean();
        let std = (d.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.data().len() as f64).sqrt();
        assert!((std - 0.02).abs() < 0.02 * 0.01, "{std}");
        assert!(add_gaussian_noise(&img, -1.0, 0).is_err());
    }

    #[test]
    fn crop_and_pad() {
        let img = Image::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let p = img.pad(1, 2, Boundary::Replicate);
        assert_eq!((p.height(), p.width()), (5, 8));
        assert_eq!(p.get(0, 0, 0), 0.0);
        assert_eq!(p.get(0, 4, 7), 11.0);
        assert_eq!(p.crop(1, 2, 3, 4).unwrap(), img);
        let z = img.pad(1, 1, Boundary::Zero);
        assert_eq!(z.get(0, 0, 1), 0.0);
        let w = img.pad(1, 1, Boundary::Periodic);
        assert_eq!(w.get(0, 0, 0), 11.0);
    }

    #[test]
    fn compose_matches_sequential_application_on_interior() {
        let img = random_image(24, 24, 14);
        let a = random_kernel(5, 15);
        let b = random_kernel(3, 16);
        let seq = conv2d(&conv2d(&img, &a, Boundary::Zero).unwrap(), &b, Boundary::Zero).unwrap();
        let once = conv2d(&img, &a.compose(&b), Boundary::Zero).unwrap();
        let m = (5 + 3) / 2;
        for i in m..24 - m {
            for j in m..24 - m {
                assert!((seq.get(0, i, j) - once.get(0, i, j)).abs() < 1e-6);
            }
        }
    }
}

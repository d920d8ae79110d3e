//! Half-quadratic splitting for TV-ℓ1 deconvolution,
//! `min_x ½‖y − k⋆x‖² + λ‖F⋆x‖₁`, with three interchangeable x-update
//! solvers: CPCR ([`chqs`]), conjugate gradient ([`hqs_cg`]) and the
//! closed-form FFT solve ([`hqs_fft`]).
//!
//! Each outer iteration runs the z-update `z = soft(F⋆x, λ/μ)`, the x-update
//! against `u = [y; √μ z]` and then grows μ multiplicatively.

use std::str::FromStr;

use crate::error::{DeconvError, Result};
use crate::image::{bank_apply, conv2d, Boundary, FilterBank, Image, Kernel};
use crate::invfilter::{compute_inverse_bank, DEFAULT_RATIO, DEFAULT_RHO};
use crate::operator::StackedOperator;
use crate::solvers::{cg_normal_masked, cpcr, SolveReport};
use crate::spectral::{edgetaper, wiener_solve};

/// Observation padding applied before the FFT x-update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum FftPadding {
    /// Solve on the raw grid; the FFT treats it as periodic.
    None,
    /// Replicate-pad by half the kernel on each side.
    Replicate,
    /// Replicate-pad, then taper the padded borders.
    #[default]
    EdgeTaper,
}

impl FromStr for FftPadding {
    type Err = DeconvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(FftPadding::None),
            "replicate" => Ok(FftPadding::Replicate),
            "edgetaper" => Ok(FftPadding::EdgeTaper),
            other => Err(DeconvError::InvalidParameter(format!("unknown fft padding '{other}'"))),
        }
    }
}

impl std::fmt::Display for FftPadding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FftPadding::None => "none",
            FftPadding::Replicate => "replicate",
            FftPadding::EdgeTaper => "edgetaper",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HqsConfig {
    pub lambda: f64,
    pub mu0: f64,
    pub mu_growth: f64,
    pub outer_iters: usize,
    /// CPCR iterations per x-update.
    pub inner_iters: usize,
    pub rho: f64,
    pub ratio: f64,
    pub boundary: Boundary,
    pub fft_padding: FftPadding,
    pub cg_max_iter: usize,
    pub cg_tol: f64,
}

impl Default for HqsConfig {
    fn default() -> Self {
        Self {
            lambda: 0.003,
            mu0: 0.008,
            mu_growth: 4.0,
            outer_iters: 10,
            inner_iters: 5,
            rho: DEFAULT_RHO,
            ratio: DEFAULT_RATIO,
            boundary: Boundary::Replicate,
            fft_padding: FftPadding::EdgeTaper,
            cg_max_iter: 100,
            cg_tol: 1e-6,
        }
    }
}

impl HqsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(DeconvError::InvalidParameter(what.to_string()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.mu0 > 0.0) || !self.mu0.is_finite() {
            return bad("mu0 must be positive");
        }
        if !(self.mu_growth >= 1.0) || !self.mu_growth.is_finite() {
            return bad("mu_growth must be >= 1");
        }
        if self.outer_iters == 0 {
            return bad("outer_iters must be >= 1");
        }
        if self.inner_iters == 0 {
            return bad("inner_iters must be >= 1");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be positive");
        }
        if !(self.ratio >= 1.0) {
            return bad("ratio must be >= 1");
        }
        if self.cg_max_iter == 0 || !(self.cg_tol > 0.0) {
            return bad("cg_max_iter must be >= 1 and cg_tol positive");
        }
        Ok(())
    }

    /// `μ_t = μ0 · growth^t` for `t = 0, …, T − 1`.
    pub fn mu_schedule(&self) -> Vec<f64> {
        (0..self.outer_iters).map(|t| self.mu0 * self.mu_growth.powi(t as i32)).collect()
    }
}

/// `sign(v) · max(|v| − τ, 0)`, elementwise.
pub fn soft_threshold(v: &Image, tau: f64) -> Result<Image> {
    if !(tau >= 0.0) {
        return Err(DeconvError::InvalidParameter(format!("threshold must be >= 0, got {tau}")));
    }
    Ok(v.map(|a| a.signum() * (a.abs() - tau).max(0.0)))
}

/// Splitting energy `½‖y − k⋆x‖² + λ‖z‖₁ + (μ/2)‖z − F⋆x‖²`.
#[allow(clippy::too_many_arguments)]
pub fn splitting_energy(
    y: &Image,
    k: &Kernel,
    prior: &FilterBank,
    x: &Image,
    z: &Image,
    lambda: f64,
    mu: f64,
    boundary: Boundary,
) -> Result<f64> {
    let data = conv2d(x, k, boundary)?.sub(y)?.norm().powi(2);
    let fx = bank_apply(prior, x, boundary)?;
    let l1: f64 = z.data().iter().map(|v| v.abs()).sum();
    Ok(0.5 * data + lambda * l1 + 0.5 * mu * z.sub(&fx)?.norm().powi(2))
}

/// TV-ℓ1 objective `½‖y − k⋆x‖² + λ‖F⋆x‖₁`.
pub fn tv_objective(y: &Image, k: &Kernel, x: &Image, lambda: f64, boundary: Boundary) -> Result<f64> {
    let data = conv2d(x, k, boundary)?.sub(y)?.norm().powi(2);
    let fx = bank_apply(&FilterBank::gradient(), x, boundary)?;
    Ok(0.5 * data + lambda * fx.data().iter().map(|v| v.abs()).sum::<f64>())
}

/// Output of an HQS run.
#[derive(Clone, Debug)]
pub struct HqsRun {
    pub image: Image,
    /// Estimate after every outer iteration, on the output grid.
    pub snapshots: Vec<Image>,
    /// Inner solver report of every outer iteration (all channels in order).
    pub reports: Vec<SolveReport>,
    /// `(E before, E after)` each z-update at fixed `(x, μ)`, summed over
    /// channels.
    pub z_energy: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InnerSolver {
    Cpcr { iterations: usize },
    Cg { max_iter: usize, tol: f64 },
    Fft(FftPadding),
}

impl InnerSolver {
    fn boundary(&self, cfg: &HqsConfig) -> Boundary {
        match self {
            InnerSolver::Cpcr { .. } => cfg.boundary,
            InnerSolver::Cg { .. } => Boundary::Zero,
            InnerSolver::Fft(_) => Boundary::Periodic,
        }
    }

    fn padded(&self) -> bool {
        !matches!(self, InnerSolver::Cpcr { .. } | InnerSolver::Fft(FftPadding::None))
    }
}

struct ChannelRun {
    image: Image,
    snapshots: Vec<Image>,
    reports: Vec<SolveReport>,
    z_energy: Vec<(f64, f64)>,
}

fn run_channel(y: &Image, k: &Kernel, cfg: &HqsConfig, solver: InnerSolver) -> Result<ChannelRun> {
    let prior = FilterBank::gradient();
    let boundary = solver.boundary(cfg);
    let (ph, pw) = if solver.padded() { (k.half_h(), k.half_w()) } else { (0, 0) };
    let mut y_work = y.pad(ph, pw, Boundary::Replicate);
    if solver == InnerSolver::Fft(FftPadding::EdgeTaper) {
        y_work = edgetaper(&y_work, k)?;
    }
    let crop = |x: &Image| x.crop(ph, pw, y.height(), y.width());
    // observed window of the padded grid
    let (gh, gw) = (y_work.height(), y_work.width());
    let mask: Vec<f64> = (0..gh * gw)
        .map(|q| {
            let (i, j) = (q / gw, q % gw);
            let inside = (ph..gh - ph).contains(&i) && (pw..gw - pw).contains(&j);
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    let mut x = y_work.clone();
    let mut z_prev: Option<Image> = None;
    let mut run = ChannelRun { image: y.clone(), snapshots: vec![], reports: vec![], z_energy: vec![] };
    for mu in cfg.mu_schedule() {
        let fx = bank_apply(&prior, &x, boundary)?;
        let z = soft_threshold(&fx, cfg.lambda / mu)?;
        let before =
            splitting_energy(&y_work, k, &prior, &x, z_prev.as_ref().unwrap_or(&fx), cfg.lambda, mu, boundary)?;
        let after = splitting_energy(&y_work, k, &prior, &x, &z, cfg.lambda, mu, boundary)?;
        run.z_energy.push((before, after));

        let op = StackedOperator::new(k.clone(), Some(&prior), mu)?;
        x = match solver {
            InnerSolver::Fft(_) => wiener_solve(&y_work, &z, k, &prior, mu)?,
            _ => {
                let u = Image::stack(&[y_work.clone(), z.scale(mu.sqrt())])?;
                let (next, report) = match solver {
                    InnerSolver::Cpcr { iterations } => {
                        let bank = compute_inverse_bank(&op, cfg.rho, cfg.ratio)?;
                        cpcr(&op, &u, &bank, &x, iterations, boundary)?
                    }
                    InnerSolver::Cg { max_iter, tol } => cg_normal_masked(&op, &u, Some(&mask), &x, max_iter, tol)?,
                    InnerSolver::Fft(_) => unreachable!(),
                };
                run.reports.push(report);
                next
            }
        };
        run.snapshots.push(crop(&x)?);
        z_prev = Some(z);
    }
    run.image = crop(&x)?;
    Ok(run)
}

/// Runs the HQS outer loop with the given x-update solver, deblurring each
/// channel of `y` independently with the shared kernel.
pub fn run_hqs(y: &Image, k: &Kernel, cfg: &HqsConfig, solver: InnerSolver) -> Result<HqsRun> {
    cfg.validate()?;
    k.require_normalized()?;
    let runs = y.split_channels().iter().map(|ch| run_channel(ch, k, cfg, solver)).collect::<Result<Vec<_>>>()?;
    let images: Vec<Image> = runs.iter().map(|r| r.image.clone()).collect();
    let mut out = HqsRun { image: Image::stack(&images)?, snapshots: vec![], reports: vec![], z_energy: vec![] };
    for t in 0..cfg.outer_iters {
        let snaps: Vec<Image> = runs.iter().map(|r| r.snapshots[t].clone()).collect();
        out.snapshots.push(Image::stack(&snaps)?);
        let (b, a) = runs.iter().fold((0.0, 0.0), |acc, r| (acc.0 + r.z_energy[t].0, acc.1 + r.z_energy[t].1));
        out.z_energy.push((b, a));
    }
    for r in runs {
        out.reports.extend(r.reports);
    }
    Ok(out)
}

/// Convolutional HQS: CPCR x-updates with a freshly computed inverse bank
/// at every μ.
pub fn chqs(y: &Image, k: &Kernel, cfg: &HqsConfig) -> Result<HqsRun> {
    run_hqs(y, k, cfg, InnerSolver::Cpcr { iterations: cfg.inner_iters })
}

/// HQS with the closed-form periodic x-update on the padded grid selected by
/// `cfg.fft_padding`.
pub fn hqs_fft(y: &Image, k: &Kernel, cfg: &HqsConfig) -> Result<HqsRun> {
    run_hqs(y, k, cfg, InnerSolver::Fft(cfg.fft_padding))
}

/// HQS with conjugate-gradient x-updates: Zero boundary on the
/// replicate-padded grid, data term restricted to the observed window.
pub fn hqs_cg(y: &Image, k: &Kernel, cfg: &HqsConfig) -> Result<HqsRun> {
    run_hqs(y, k, cfg, InnerSolver::Cg { max_iter: cfg.cg_max_iter, tol: cfg.cg_tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{add_gaussian_noise, psnr};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..8)
            .map(|_| {
                (
                    rng.gen::<f64>() * h as f64,
                    rng.gen::<f64>() * w as f64,
                    3.0 + 8.0 * rng.gen::<f64>(),
                    rng.gen::<f64>(),
                )
            })
            .collect();
        Image::from_fn(h, w, |i, j| {
            let mut v = 0.15 + 0.3 * (j as f64 / w as f64);
            for (ci, cj, r, a) in &blobs {
                let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                if d2 < r * r {
                    v += 0.4 * a;
                }
            }
            v.min(1.0)
        })
    }

    fn motion_kernel() -> Kernel {
        let mut taps = vec![0.0; 81];
        for t in 0..9 {
            taps[4 * 9 + t] = if t < 7 { 1.0 } else { 0.0 };
            if t >= 5 {
                taps[(4 - (t - 4) / 2) * 9 + t] += 0.5;
            }
        }
        let s: f64 = taps.iter().sum();
        Kernel::new(9, 9, taps.into_iter().map(|t| t / s).collect()).unwrap()
    }

    #[test]
    fn soft_threshold_values() {
        let v = Image::new(1, 3, 1, vec![2.0, -0.3, -1.0]).unwrap();
        let s = soft_threshold(&v, 0.5).unwrap();
        assert_eq!(s.data(), &[1.5, 0.0, -0.5]);
        assert!(soft_threshold(&v, -1.0).is_err());
    }

    #[test]
    fn soft_threshold_beats_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lambda, mu) = (0.003, 0.008);
        let tau = lambda / mu;
        let obj = |z: f64, v: f64| 0.5 * mu * (z - v).powi(2) + lambda * z.abs();
        for _ in 0..100 {
            let v = 4.0 * rng.gen::<f64>() - 2.0;
            let z = soft_threshold(&Image::new(1, 1, 1, vec![v]).unwrap(), tau).unwrap().data()[0];
            let best = (0..=4000).map(|i| -2.0 + 1e-3 * i as f64).map(|g| obj(g, v)).fold(f64::INFINITY, f64::min);
            assert!(obj(z, v) <= best + 1e-15);
        }
    }

    #[test]
    fn config_validation_and_schedule() {
        let cfg = HqsConfig::default();
        cfg.validate().unwrap();
        let s = cfg.mu_schedule();
        assert_eq!(s.len(), 10);
        assert!((s[0] - 0.008).abs() < 1e-15 && (s[2] - 0.128).abs() < 1e-12);
        assert!(s.windows(2).all(|w| w[1] > w[0] && w[0] > 0.0));
        assert!(HqsConfig { mu_growth: 0.5, ..cfg.clone() }.validate().is_err());
        assert!(HqsConfig { outer_iters: 0, ..cfg.clone() }.validate().is_err());
        assert!(HqsConfig { mu0: 0.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn identity_blur_returns_observation() {
        let y = smooth_image(32, 32, 1);
        let cfg = HqsConfig { outer_iters: 3, lambda: 1e-7, ..HqsConfig::default() };
        let out = chqs(&y, &Kernel::delta(), &cfg).unwrap();
        assert!(out.image.max_abs_diff(&y).unwrap() < 1e-4);
        // a flat image is a fixed point even with the default λ
        let flat = Image::constant(16, 16, 0.4);
        let cfg = HqsConfig { outer_iters: 3, ..HqsConfig::default() };
        assert!(chqs(&flat, &Kernel::delta(), &cfg).unwrap().image.max_abs_diff(&flat).unwrap() < 1e-10);
    }

    #[test]
    fn identity_blur_variants_agree() {
        let y = smooth_image(32, 32, 2);
        let cfg = HqsConfig { lambda: 1e-7, ..HqsConfig::default() };
        let a = chqs(&y, &Kernel::delta(), &cfg).unwrap().image;
        for padding in [FftPadding::None, FftPadding::Replicate, FftPadding::EdgeTaper] {
            let b = hqs_fft(&y, &Kernel::delta(), &HqsConfig { fft_padding: padding, ..cfg.clone() }).unwrap().image;
            assert!(a.max_abs_diff(&b).unwrap() < 1e-4, "{padding}");
        }
        let c = hqs_cg(&y, &Kernel::delta(), &cfg).unwrap().image;
        assert!(a.max_abs_diff(&c).unwrap() < 1e-4);
    }

    #[test]
    fn chqs_improves_psnr_and_objective() {
        let x = smooth_image(64, 64, 4);
        let k = motion_kernel();
        let y = add_gaussian_noise(&conv2d(&x, &k, Boundary::Replicate).unwrap(), 2.0, 5).unwrap();
        let out = chqs(&y, &k, &HqsConfig::default()).unwrap();
        let gain = psnr(&out.image, &x).unwrap() - psnr(&y, &x).unwrap();
        assert!(gain >= 2.0, "gain {gain}");
        let cfg = HqsConfig::default();
        let before = tv_objective(&y, &k, &y, cfg.lambda, cfg.boundary).unwrap();
        let after = tv_objective(&y, &k, &out.image, cfg.lambda, cfg.boundary).unwrap();
        assert!(after < before);
        assert_eq!(out.snapshots.len(), 10);
        assert_eq!(out.reports.len(), 10);
    }

    #[test]
    fn z_update_never_increases_energy() {
        let x = smooth_image(48, 48, 6);
        let k = motion_kernel();
        let y = add_gaussian_noise(&conv2d(&x, &k, Boundary::Replicate).unwrap(), 2.0, 7).unwrap();
        for run in [chqs(&y, &k, &HqsConfig::default()).unwrap(), hqs_fft(&y, &k, &HqsConfig::default()).unwrap()] {
            for (b, a) in &run.z_energy {
                assert!(a <= b, "{a} > {b}");
            }
        }
    }

    #[test]
    fn periodic_instance_fft_matches_chqs() {
        let x = smooth_image(48, 48, 8);
        let k = motion_kernel();
        let y = add_gaussian_noise(&conv2d(&x, &k, Boundary::Periodic).unwrap(), 1.0, 9).unwrap();
        let cfg = HqsConfig { boundary: Boundary::Periodic, fft_padding: FftPadding::None, ..HqsConfig::default() };
        let a = psnr(&chqs(&y, &k, &cfg).unwrap().image, &x).unwrap();
        let b = psnr(&hqs_fft(&y, &k, &cfg).unwrap().image, &x).unwrap();
        assert!((a - b).abs() <= 0.5, "chqs {a} vs fft {b}");
    }

    #[test]
    fn natural_boundary_padding_ordering() {
        let x = smooth_image(64, 64, 10);
        let k = motion_kernel();
        let y = add_gaussian_noise(&conv2d(&x, &k, Boundary::Replicate).unwrap(), 2.0, 11).unwrap();
        let score = |p| {
            let cfg = HqsConfig { fft_padding: p, ..HqsConfig::default() };
            psnr(&hqs_fft(&y, &k, &cfg).unwrap().image, &x).unwrap()
        };
        let (none, rep, taper) = (score(FftPadding::None), score(FftPadding::Replicate), score(FftPadding::EdgeTaper));
        assert!(none < rep && rep <= taper, "{none} {rep} {taper}");
    }

    #[test]
    fn cg_tracks_chqs_and_improves_with_budget() {
        let x = smooth_image(48, 48, 12);
        let k = motion_kernel();
        let y = conv2d(&x, &k, Boundary::Replicate).unwrap();
        let cfg = HqsConfig::default();
        let c = psnr(&chqs(&y, &k, &cfg).unwrap().image, &x).unwrap();
        let g10 = psnr(&hqs_cg(&y, &k, &cfg).unwrap().image, &x).unwrap();
        let g5 = psnr(&hqs_cg(&y, &k, &HqsConfig { outer_iters: 5, ..cfg }).unwrap().image, &x).unwrap();
        assert!(g10 >= g5, "{g10} < {g5}");
        assert!((c - g10).abs() <= 0.5 || c > g10, "chqs {c} cg {g10}");
    }

    #[test]
    fn rgb_is_deblurred_channelwise() {
        let r = smooth_image(24, 24, 13);
        let g = smooth_image(24, 24, 14);
        let b = smooth_image(24, 24, 15);
        let k = Kernel::gaussian(5, 1.0).unwrap();
        let rgb = Image::stack(&[r.clone(), g, b]).unwrap();
        let y = conv2d(&rgb, &k, Boundary::Replicate).unwrap();
        let cfg = HqsConfig { outer_iters: 3, ..HqsConfig::default() };
        let out = chqs(&y, &k, &cfg).unwrap();
        assert_eq!(out.image.channels(), 3);
        let red = chqs(&y.channel_image(0), &k, &cfg).unwrap();
        assert_eq!(out.image.channel_image(0), red.image);
        assert_eq!(out.reports.len(), 9);
    }

    #[test]
    fn unnormalized_kernel_is_rejected() {
        let y = smooth_image(16, 16, 16);
        let k = Kernel::box_filter(3).unwrap().scale(2.0);
        assert!(chqs(&y, &k, &HqsConfig::default()).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let x = smooth_image(32, 32, 17);
        let k = motion_kernel();
        let y = add_gaussian_noise(&conv2d(&x, &k, Boundary::Replicate).unwrap(), 2.0, 18).unwrap();
        let cfg = HqsConfig { outer_iters: 4, ..HqsConfig::default() };
        assert_eq!(chqs(&y, &k, &cfg).unwrap().image, chqs(&y, &k, &cfg).unwrap().image);
        assert_eq!(hqs_cg(&y, &k, &cfg).unwrap().image, hqs_cg(&y, &k, &cfg).unwrap().image);
        assert_eq!(hqs_fft(&y, &k, &cfg).unwrap().image, hqs_fft(&y, &k, &cfg).unwrap().image);
    }
}

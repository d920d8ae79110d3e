//! Locally linear non-uniform blur: a dictionary of straight-line motion
//! kernels with precomputed inverse banks, per-pixel kernel fields,
//! spatially varying convolution and the matching CHQS / CG pipelines.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::corpus::splat_path;
use crate::error::{DeconvError, Result};
use crate::hqs::{soft_threshold, HqsConfig, HqsRun};
use crate::image::{bank_apply, padded_channel, Boundary, FilterBank, Image, Kernel};
use crate::invfilter::{compute_inverse_bank, InverseBank};
use crate::operator::StackedOperator;
use crate::solvers::{cg_solve, l2, SolveReport};
use crate::spectral::ConvPlan;

pub const DICT_SIDE: usize = 35;
pub const DICT_ANGLE_STEP: usize = 6;
pub const DICT_ANGLES: usize = 180 / DICT_ANGLE_STEP;
/// Odd motion lengths above one: 3, 5, …, 35.
pub const DICT_LONG_LENGTHS: usize = (DICT_SIDE - 1) / 2;
pub const DICTIONARY_SIZE: usize = 1 + DICT_LONG_LENGTHS * DICT_ANGLES;

/// Splat samples per pixel of segment length.
const SAMPLES_PER_PIXEL: usize = 16;

/// Straight motion blur of `length` pixels at `angle` degrees
/// (counter-clockwise from the +x axis, image rows growing downwards),
/// rasterized by bilinear splatting on a `side × side` grid.
pub fn line_kernel(length: f64, angle: f64, side: usize) -> Result<Kernel> {
    if side.is_multiple_of(2) || !(length >= 1.0) || length > side as f64 || !angle.is_finite() {
        return Err(DeconvError::InvalidKernel(format!("no line kernel of length {length} on side {side}")));
    }
    if length == 1.0 {
        return Kernel::delta_sized(side, side);
    }
    let half = (length - 1.0) / 2.0;
    let n = SAMPLES_PER_PIXEL * length.ceil() as usize;
    let rad = angle.to_radians();
    let (di, dj) = (-rad.sin(), rad.cos());
    // symmetric samples so θ and θ + 180° rasterize identically
    let pts: Vec<(f64, f64)> = (0..=n)
        .map(|s| {
            let t = -half + 2.0 * half * s as f64 / n as f64;
            (t * di, t * dj)
        })
        .collect();
    let taps = splat_path(&pts, side);
    let sum: f64 = taps.iter().sum();
    Kernel::new(side, side, taps.into_iter().map(|t| t / sum).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearMotionKernel {
    pub length: usize,
    pub angle: usize,
    pub kernel: Kernel,
}

/// Dictionary index of `(length, angle)`; length 1 maps to entry 0 for any
/// angle.
pub fn entry_index(length: usize, angle: usize) -> Result<usize> {
    if length == 1 {
        return Ok(0);
    }
    if length.is_multiple_of(2) || length > DICT_SIDE || !angle.is_multiple_of(DICT_ANGLE_STEP) || angle >= 180 {
        return Err(DeconvError::InvalidParameter(format!("({length}, {angle}°) is not on the dictionary grid")));
    }
    Ok(1 + (length - 3) / 2 * DICT_ANGLES + angle / DICT_ANGLE_STEP)
}

/// `(length, angle)` of dictionary entry `index`.
pub fn entry_params(index: usize) -> Result<(usize, usize)> {
    if index >= DICTIONARY_SIZE {
        return Err(DeconvError::InvalidParameter(format!("entry {index} out of range")));
    }
    if index == 0 {
        return Ok((1, 0));
    }
    let r = index - 1;
    Ok((3 + 2 * (r / DICT_ANGLES), DICT_ANGLE_STEP * (r % DICT_ANGLES)))
}

/// The 511 dictionary kernels in index order.
pub fn dictionary_entries() -> Vec<LinearMotionKernel> {
    (0..DICTIONARY_SIZE)
        .map(|i| {
            let (length, angle) = entry_params(i).expect("in range");
            let kernel = line_kernel(length as f64, angle as f64, DICT_SIDE).expect("on grid");
            LinearMotionKernel { length, angle, kernel }
        })
        .collect()
}

/// The motion dictionary with inverse banks per μ of a schedule.
#[derive(Clone, Debug)]
pub struct KernelDictionary {
    entries: Vec<LinearMotionKernel>,
    schedule: Vec<f64>,
    rho: f64,
    ratio: f64,
    /// `banks[m][e]`: inverse of entry `e` at `schedule[m]`.
    banks: Vec<Vec<InverseBank>>,
}

impl KernelDictionary {
    /// Kernels without any inverse banks, enough for lookup and blurring.
    pub fn kernels_only() -> Self {
        Self { entries: dictionary_entries(), schedule: vec![], rho: 0.0, ratio: 0.0, banks: vec![] }
    }

    /// Assembles a dictionary from stored banks.
    pub fn from_parts(schedule: Vec<f64>, rho: f64, ratio: f64, banks: Vec<Vec<InverseBank>>) -> Result<Self> {
        if banks.len() != schedule.len() || banks.iter().any(|b| b.len() != DICTIONARY_SIZE) {
            return Err(DeconvError::InvalidBank("bank table does not match schedule × 511".into()));
        }
        Ok(Self { entries: dictionary_entries(), schedule, rho, ratio, banks })
    }

    pub fn entries(&self) -> &[LinearMotionKernel] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kernel(&self, index: usize) -> &Kernel {
        &self.entries[index].kernel
    }

    pub fn schedule(&self) -> &[f64] {
        &self.schedule
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn banks(&self) -> &[Vec<InverseBank>] {
        &self.banks
    }

    /// Position of `mu` in the precomputed schedule.
    pub fn schedule_index(&self, mu: f64) -> Result<usize> {
        self.schedule
            .iter()
            .position(|&m| (m - mu).abs() <= 1e-12 * mu.abs().max(1e-300))
            .ok_or(DeconvError::ScheduleMismatch(mu))
    }

    /// Inverse banks of every entry at `mu`.
    pub fn banks_at(&self, mu: f64) -> Result<&[InverseBank]> {
        Ok(&self.banks[self.schedule_index(mu)?])
    }
}

/// Builds the 511-entry dictionary and its inverse banks for every μ in
/// `schedule`, spreading entries over the available cores.
pub fn build_dictionary(schedule: &[f64], rho: f64, ratio: f64) -> Result<KernelDictionary> {
    if schedule.is_empty() {
        return Err(DeconvError::InvalidParameter("empty μ schedule".into()));
    }
    let entries = dictionary_entries();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut banks = Vec::with_capacity(schedule.len());
    for &mu in schedule {
        let chunk = entries.len().div_ceil(workers);
        let parts: Vec<Result<Vec<InverseBank>>> = std::thread::scope(|s| {
            let handles: Vec<_> = entries
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|e| {
                                let op = StackedOperator::with_gradient_prior(e.kernel.clone(), mu)?;
                                compute_inverse_bank(&op, rho, ratio)
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("bank worker panicked")).collect()
        });
        let mut row = Vec::with_capacity(entries.len());
        for p in parts {
            row.extend(p?);
        }
        banks.push(row);
    }
    Ok(KernelDictionary { entries, schedule: schedule.to_vec(), rho, ratio, banks })
}

/// Index of the dictionary entry closest to `local` in Frobenius distance
/// (anchors aligned). Ties go to the smaller length, then smaller angle.
pub fn nearest_kernel(local: &Kernel, dict: &KernelDictionary) -> Result<usize> {
    local.require_normalized()?;
    if local.height() > DICT_SIDE || local.width() > DICT_SIDE {
        return Err(DeconvError::InvalidKernel(format!(
            "local kernel {}×{} exceeds {DICT_SIDE}×{DICT_SIDE}",
            local.height(),
            local.width()
        )));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, e) in dict.entries().iter().enumerate() {
        let d = local.distance(&e.kernel);
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best.1)
}

/// Per-pixel dictionary assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotionField {
    height: usize,
    width: usize,
    index: Vec<usize>,
}

impl MotionField {
    pub fn new(height: usize, width: usize, index: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 || index.len() != height * width {
            return Err(DeconvError::ShapeMismatch(format!("{} indices for a {height}×{width} field", index.len())));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= DICTIONARY_SIZE) {
            return Err(DeconvError::InvalidParameter(format!("dictionary index {bad} out of range")));
        }
        Ok(Self { height, width, index })
    }

    pub fn constant(height: usize, width: usize, entry: usize) -> Result<Self> {
        Self::new(height, width, vec![entry; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> usize) -> Result<Self> {
        let index = (0..height * width).map(|p| f(p / width, p % width)).collect();
        Self::new(height, width, index)
    }

    /// A smoothly varying field: motion length and angle follow low-frequency
    /// random waves, snapped to the dictionary grid.
    pub fn smooth_random(height: usize, width: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut wave = || {
            let (fi, fj, p) = (rng.gen::<f64>() * 1.5, rng.gen::<f64>() * 1.5, rng.gen::<f64>() * TAU);
            move |i: f64, j: f64| (TAU * (fi * i + fj * j) + p).sin()
        };
        let (lw, aw) = (wave(), wave());
        let lo = 3 + 2 * rng.gen_range(0..4usize);
        let span = 4 + 2 * rng.gen_range(0..4usize);
        let a0 = rng.gen::<f64>() * 180.0;
        Self::from_fn(height, width, |i, j| {
            let (u, v) = (i as f64 / height as f64, j as f64 / width as f64);
            let len = lo as f64 + span as f64 * 0.5 * (1.0 + lw(u, v));
            let len = (2.0 * ((len - 1.0) / 2.0).round() + 1.0).min(DICT_SIDE as f64) as usize;
            let ang = (a0 + 40.0 * aw(u, v)).rem_euclid(180.0);
            let ang = (DICT_ANGLE_STEP * ((ang / DICT_ANGLE_STEP as f64).round() as usize)) % 180;
            entry_index(len, ang).expect("snapped to grid")
        })
        .expect("indices in range")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn indices(&self) -> &[usize] {
        &self.index
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.index[i * self.width + j]
    }

    /// Pixel lists keyed by entry, in entry order.
    pub fn groups(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (p, &e) in self.index.iter().enumerate() {
            g.entry(e).or_default().push(p);
        }
        g
    }

    /// Most frequent entry, ties to the smaller index.
    pub fn dominant(&self) -> usize {
        let mut best = (0, 0);
        for (e, px) in self.groups() {
            if px.len() > best.1 {
                best = (e, px.len());
            }
        }
        best.0
    }

    /// Replicate-extends the field by `ph` rows and `pw` columns per side.
    pub fn pad(&self, ph: usize, pw: usize) -> MotionField {
        let (h, w) = (self.height + 2 * ph, self.width + 2 * pw);
        let index = (0..h * w)
            .map(|p| {
                let i = (p / w).saturating_sub(ph).min(self.height - 1);
                let j = (p % w).saturating_sub(pw).min(self.width - 1);
                self.get(i, j)
            })
            .collect();
        MotionField { height: h, width: w, index }
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if (img.height(), img.width()) != (self.height, self.width) {
            return Err(DeconvError::ShapeMismatch(format!(
                "field is {}×{}, image is {}×{}",
                self.height,
                self.width,
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }
}

fn sparse_taps(k: &Kernel) -> Vec<(isize, isize, f64)> {
    let (hh, hw) = (k.half_h() as isize, k.half_w() as isize);
    let mut out = Vec::new();
    for di in -hh..=hh {
        for dj in -hw..=hw {
            let t = k.tap(di, dj);
            if t != 0.0 {
                out.push((di, dj, t));
            }
        }
    }
    out
}

enum Route {
    Gather(Vec<(isize, isize, f64)>),
    Plan(usize),
}

/// A spatially varying convolution prepared for repeated application: each
/// pixel `p` is filtered with `kernels[field(p)]`. Sparse kernels are
/// gathered per pixel; dense kernels covering many pixels are convolved over
/// the whole grid by FFT and sampled.
pub(crate) struct VaryingConv {
    height: usize,
    width: usize,
    boundary: Boundary,
    pad_h: usize,
    pad_w: usize,
    groups: Vec<(Vec<usize>, Route)>,
    plan: Option<ConvPlan>,
}

impl VaryingConv {
    pub(crate) fn new(field: &MotionField, kernels: &[&Kernel], boundary: Boundary) -> Self {
        let (h, w) = (field.height, field.width);
        let mut pad_h = 0;
        let mut pad_w = 0;
        let mut dense = Vec::new();
        let mut groups = Vec::new();
        for (e, px) in field.groups() {
            let k = kernels[e];
            let taps = sparse_taps(k);
            let padded = (h + k.height()) * (w + k.width());
            if taps.len() * px.len() > 64 * padded {
                groups.push((px, Route::Plan(dense.len())));
                dense.push(k.clone());
            } else {
                pad_h = pad_h.max(k.half_h());
                pad_w = pad_w.max(k.half_w());
                groups.push((px, Route::Gather(taps)));
            }
        }
        let plan = (!dense.is_empty()).then(|| ConvPlan::new(&dense, h, w, boundary));
        Self { height: h, width: w, boundary, pad_h, pad_w, groups, plan }
    }

    pub(crate) fn apply(&self, src: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let mut out = vec![0.0; h * w];
        let planned = self.plan.as_ref().map(|p| p.apply_all(src));
        let padded = padded_channel(src, h, w, self.pad_h, self.pad_w, self.boundary);
        let pw = w + 2 * self.pad_w;
        for (px, route) in &self.groups {
            match route {
                Route::Plan(idx) => {
                    let full = &planned.as_ref().expect("plan exists")[*idx];
                    for &p in px {
                        out[p] = full[p];
                    }
                }
                Route::Gather(taps) => {
                    for &p in px {
                        let (i, j) = ((p / w + self.pad_h) as isize, (p % w + self.pad_w) as isize);
                        out[p] = taps
                            .iter()
                            .map(|&(di, dj, t)| t * padded[(i - di) as usize * pw + (j - dj) as usize])
                            .sum();
                    }
                }
            }
        }
        out
    }
}

/// Exact adjoint of the Zero-boundary varying convolution: every pixel `p`
/// scatters `k_{field(p)}(q)·r(p)` to `p − q`.
fn varying_adjoint_zero(field: &MotionField, taps: &BTreeMap<usize, Vec<(isize, isize, f64)>>, r: &[f64]) -> Vec<f64> {
    let (h, w) = (field.height as isize, field.width as isize);
    let mut out = vec![0.0; r.len()];
    for (p, &e) in field.index.iter().enumerate() {
        let (i, j) = ((p as isize) / w, (p as isize) % w);
        for &(di, dj, t) in &taps[&e] {
            let (si, sj) = (i - di, j - dj);
            if si >= 0 && si < h && sj >= 0 && sj < w {
                out[(si * w + sj) as usize] += t * r[p];
            }
        }
    }
    out
}

/// `out(p) = Σ_q k_{field(p)}(q)·img(p − q)` with Replicate boundary,
/// channelwise.
pub fn varying_conv(img: &Image, field: &MotionField, dict: &KernelDictionary) -> Result<Image> {
    let kernels: Vec<&Kernel> = dict.entries().iter().map(|e| &e.kernel).collect();
    varying_conv_with(img, field, &kernels, Boundary::Replicate)
}

/// [`varying_conv`] with an explicit kernel table and boundary.
pub fn varying_conv_with(img: &Image, field: &MotionField, kernels: &[&Kernel], boundary: Boundary) -> Result<Image> {
    field.check_image(img)?;
    if kernels.len() < DICTIONARY_SIZE {
        return Err(DeconvError::InvalidParameter(format!("{} kernels for {DICTIONARY_SIZE} entries", kernels.len())));
    }
    let op = VaryingConv::new(field, kernels, boundary);
    let parts: Vec<Image> = img
        .split_channels()
        .iter()
        .map(|c| Image::from_raw(img.height(), img.width(), 1, op.apply(c.data())))
        .collect();
    Image::stack(&parts)
}

fn check_dictionary(dict: &KernelDictionary, cfg: &HqsConfig) -> Result<Vec<usize>> {
    if (dict.rho() - cfg.rho).abs() > 1e-12 || (dict.ratio() - cfg.ratio).abs() > 1e-12 {
        return Err(DeconvError::InvalidParameter(format!(
            "dictionary built for rho={} ratio={}, config asks rho={} ratio={}",
            dict.rho(),
            dict.ratio(),
            cfg.rho,
            cfg.ratio
        )));
    }
    cfg.mu_schedule().iter().map(|&mu| dict.schedule_index(mu)).collect()
}

#[allow(clippy::too_many_arguments)]
fn varying_energy(
    blur: &VaryingConv,
    y: &[f64],
    x: &Image,
    z: &Image,
    prior: &FilterBank,
    lambda: f64,
    mu: f64,
    boundary: Boundary,
) -> Result<f64> {
    let kx = blur.apply(x.data());
    let data: f64 = kx.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    let fx = bank_apply(prior, x, boundary)?;
    let l1: f64 = z.data().iter().map(|v| v.abs()).sum();
    Ok(0.5 * data + lambda * l1 + 0.5 * mu * z.sub(&fx)?.norm().powi(2))
}

struct ChannelRun {
    image: Image,
    snapshots: Vec<Image>,
    reports: Vec<SolveReport>,
    z_energy: Vec<(f64, f64)>,
}

fn merge(runs: Vec<ChannelRun>, outer: usize) -> Result<HqsRun> {
    let images: Vec<Image> = runs.iter().map(|r| r.image.clone()).collect();
    let mut out = HqsRun { image: Image::stack(&images)?, snapshots: vec![], reports: vec![], z_energy: vec![] };
    for t in 0..outer {
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

/// Derivative inverses shared by every pixel: the entries' `c_1, c_2`
/// averaged with weights proportional to their pixel counts. A constant
/// field gets exactly its own bank.
fn shared_prior_inverses(field: &MotionField, banks: &[InverseBank]) -> Vec<Kernel> {
    let total = (field.height() * field.width()) as f64;
    let mut acc: Option<Vec<Kernel>> = None;
    for (entry, pixels) in field.groups() {
        let wgt = pixels.len() as f64 / total;
        let part: Vec<Kernel> = banks[entry].c_rest().iter().map(|c| c.scale(wgt)).collect();
        acc = Some(match acc {
            None => part,
            Some(a) => a.iter().zip(&part).map(|(x, y)| x.plus(y)).collect(),
        });
    }
    acc.expect("field is nonempty")
}

/// CHQS under a non-uniform blur. The data term and `c_0` vary per pixel
/// through `field`; the derivative inverses are uniform, see
/// [`shared_prior_inverses`]. Every μ of the schedule must be precomputed
/// in `dict`.
pub fn nonuniform_chqs(y: &Image, field: &MotionField, dict: &KernelDictionary, cfg: &HqsConfig) -> Result<HqsRun> {
    cfg.validate()?;
    field.check_image(y)?;
    let slots = check_dictionary(dict, cfg)?;
    let prior = FilterBank::gradient();
    let boundary = cfg.boundary;
    let (h, w) = (y.height(), y.width());
    let kernels: Vec<&Kernel> = dict.entries().iter().map(|e| &e.kernel).collect();
    let blur = VaryingConv::new(field, &kernels, boundary);
    let schedule = cfg.mu_schedule();

    // per-μ operators, shared by all channels
    let mut stages = Vec::with_capacity(schedule.len());
    for (&mu, &slot) in schedule.iter().zip(&slots) {
        let banks = &dict.banks()[slot];
        let c0s: Vec<&Kernel> = banks.iter().map(InverseBank::c0).collect();
        let rows: Vec<Kernel> = prior.weighted_kernels().iter().map(|k| k.scale(mu.sqrt())).collect();
        stages.push((
            VaryingConv::new(field, &c0s, boundary),
            ConvPlan::new(&rows, h, w, boundary),
            ConvPlan::new(&shared_prior_inverses(field, banks), h, w, boundary),
        ));
    }

    let mut runs = Vec::with_capacity(y.channels());
    for ch in y.split_channels() {
        let yd = ch.data();
        let mut x = ch.clone();
        let mut z_prev: Option<Image> = None;
        let mut run = ChannelRun { image: ch.clone(), snapshots: vec![], reports: vec![], z_energy: vec![] };
        for (&mu, (precond0, rows, precond_rest)) in schedule.iter().zip(&stages) {
            let fx = bank_apply(&prior, &x, boundary)?;
            let z = soft_threshold(&fx, cfg.lambda / mu)?;
            let before =
                varying_energy(&blur, yd, &x, z_prev.as_ref().unwrap_or(&fx), &prior, cfg.lambda, mu, boundary)?;
            let after = varying_energy(&blur, yd, &x, &z, &prior, cfg.lambda, mu, boundary)?;
            run.z_energy.push((before, after));

            let sz: Vec<Vec<f64>> =
                (0..z.channels()).map(|c| z.channel(c).iter().map(|v| mu.sqrt() * v).collect()).collect();
            let mut xd = x.data().to_vec();
            let mut report = SolveReport::default();
            for _ in 0..cfg.inner_iters {
                let r0: Vec<f64> = blur.apply(&xd).iter().zip(yd).map(|(a, b)| a - b).collect();
                let mut rest = rows.apply_all(&xd);
                for (r, s) in rest.iter_mut().zip(&sz) {
                    for (a, b) in r.iter_mut().zip(s) {
                        *a -= b;
                    }
                }
                let refs: Vec<&[f64]> = rest.iter().map(Vec::as_slice).collect();
                let mut step = precond_rest.contract(&refs);
                for (s, a) in step.iter_mut().zip(precond0.apply(&r0)) {
                    *s += a;
                }
                let norm = l2(&step);
                report.iterations += 1;
                report.residual_history.push(norm);
                if !norm.is_finite() {
                    return Err(DeconvError::Diverged(Box::new(report)));
                }
                for (a, s) in xd.iter_mut().zip(&step) {
                    *a -= s;
                }
            }
            x = Image::new(h, w, 1, xd).map_err(|_| DeconvError::Diverged(Box::new(report.clone())))?;
            run.reports.push(report);
            run.snapshots.push(x.clone());
            z_prev = Some(z);
        }
        run.image = x;
        runs.push(run);
    }
    merge(runs, schedule.len())
}

/// HQS with CG x-updates under a non-uniform blur: Zero boundary on the
/// replicate-padded observation and field, data term restricted to the
/// observed window, exact varying adjoint.
pub fn nonuniform_hqs_cg(y: &Image, field: &MotionField, dict: &KernelDictionary, cfg: &HqsConfig) -> Result<HqsRun> {
    cfg.validate()?;
    field.check_image(y)?;
    let prior = FilterBank::gradient();
    let (ph, pw) = (DICT_SIDE / 2, DICT_SIDE / 2);
    let pfield = field.pad(ph, pw);
    let (h, w) = (pfield.height, pfield.width);
    let kernels: Vec<&Kernel> = dict.entries().iter().map(|e| &e.kernel).collect();
    let blur = VaryingConv::new(&pfield, &kernels, Boundary::Zero);
    let taps: BTreeMap<usize, Vec<(isize, isize, f64)>> =
        pfield.groups().keys().map(|&e| (e, sparse_taps(kernels[e]))).collect();
    let schedule = cfg.mu_schedule();
    let inside = |q: usize| (ph..h - ph).contains(&(q / w)) && (pw..w - pw).contains(&(q % w));
    let masked = |v: &mut [f64]| v.iter_mut().enumerate().filter(|(q, _)| !inside(*q)).for_each(|(_, a)| *a = 0.0);

    let mut runs = Vec::with_capacity(y.channels());
    for ch in y.split_channels() {
        let yp = ch.pad(ph, pw, Boundary::Replicate);
        let mut ym = yp.data().to_vec();
        masked(&mut ym);
        let aty = varying_adjoint_zero(&pfield, &taps, &ym);
        let mut x = yp.clone();
        let mut z_prev: Option<Image> = None;
        let mut run = ChannelRun { image: ch.clone(), snapshots: vec![], reports: vec![], z_energy: vec![] };
        for &mu in &schedule {
            let fx = bank_apply(&prior, &x, Boundary::Zero)?;
            let z = soft_threshold(&fx, cfg.lambda / mu)?;
            let before = varying_energy(
                &blur,
                yp.data(),
                &x,
                z_prev.as_ref().unwrap_or(&fx),
                &prior,
                cfg.lambda,
                mu,
                Boundary::Zero,
            )?;
            let after = varying_energy(&blur, yp.data(), &x, &z, &prior, cfg.lambda, mu, Boundary::Zero)?;
            run.z_energy.push((before, after));

            let rows: Vec<Kernel> = prior.weighted_kernels().iter().map(|k| k.scale(mu.sqrt())).collect();
            let plan = ConvPlan::new(&rows, h, w, Boundary::Zero);
            let sz: Vec<Vec<f64>> =
                (0..z.channels()).map(|c| z.channel(c).iter().map(|v| mu.sqrt() * v).collect()).collect();
            let refs: Vec<&[f64]> = sz.iter().map(Vec::as_slice).collect();
            let mut b = plan.contract_adjoint(&refs);
            for (a, c) in b.iter_mut().zip(&aty) {
                *a += c;
            }
            let normal = |v: &[f64]| {
                let mut kv = blur.apply(v);
                masked(&mut kv);
                let mut out = varying_adjoint_zero(&pfield, &taps, &kv);
                let fwd = plan.apply_all(v);
                let refs: Vec<&[f64]> = fwd.iter().map(Vec::as_slice).collect();
                for (o, a) in out.iter_mut().zip(plan.contract_adjoint(&refs)) {
                    *o += a;
                }
                out
            };
            let (xd, report) = cg_solve(normal, &b, x.data().to_vec(), cfg.cg_max_iter, cfg.cg_tol)?;
            x = Image::new(h, w, 1, xd).map_err(|_| DeconvError::Diverged(Box::new(report.clone())))?;
            run.reports.push(report);
            run.snapshots.push(x.crop(ph, pw, ch.height(), ch.width())?);
            z_prev = Some(z);
        }
        run.image = x.crop(ph, pw, ch.height(), ch.width())?;
        runs.push(run);
    }
    merge(runs, schedule.len())
}

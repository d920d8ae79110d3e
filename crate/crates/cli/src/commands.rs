use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use deconv_core::corpus::{corpus_image, motion_kernels, CORPUS_IMAGES, CORPUS_SIDE, MOTION_SIDES};
use deconv_core::invfilter::spectral_radius_estimate;
use deconv_core::nonuniform::{nonuniform_chqs, nonuniform_hqs_cg, varying_conv, KernelDictionary, MotionField};
use deconv_core::{
    add_gaussian_noise, compute_inverse_bank, conv2d, nearest_kernel, psnr, Boundary, HqsRun, Image, Kernel,
    StackedOperator,
};

use crate::bench::{aggregate_mean, curves_csv, detail_csv, restore, run_bench, summarize, summary_csv, BenchInput};
use crate::cache::{cache_root, load_or_build};
use crate::config::{Method, Padding, Settings};
use crate::error::{CliError, CliResult};
use crate::formats::{
    format_field, format_pairs, read_field, read_kernel, read_png, write_kernel, write_png, write_text,
};

/// Blur source for synthesis and restoration.
pub enum Blur {
    Uniform(Kernel),
    Field(MotionField),
}

pub fn load_blur(kernel: Option<&Path>, field: Option<&Path>) -> CliResult<Blur> {
    match (kernel, field) {
        (Some(k), None) => Ok(Blur::Uniform(read_kernel(k)?)),
        (None, Some(f)) => Ok(Blur::Field(read_field(f)?)),
        _ => Err(CliError::Config("give exactly one of --kernel or --field".into())),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Blurs `input`, adds noise and writes the result plus a `.meta` sidecar.
pub fn cmd_blur(
    input: &Path,
    kernel: Option<&Path>,
    field: Option<&Path>,
    noise_percent: f64,
    seed: u64,
    output: &Path,
) -> CliResult<String> {
    let x = read_png(input)?;
    let blur = load_blur(kernel, field)?;
    let blurred = match &blur {
        Blur::Uniform(k) => {
            k.require_normalized()?;
            conv2d(&x, k, Boundary::Replicate)?
        }
        Blur::Field(f) => varying_conv(&x, f, &KernelDictionary::kernels_only())?,
    };
    let y = add_gaussian_noise(&blurred, noise_percent, seed)?;
    write_png(output, &y)?;
    let source = match (kernel, field) {
        (Some(k), _) => ("kernel", k.display().to_string()),
        (_, Some(f)) => ("field", f.display().to_string()),
        _ => unreachable!(),
    };
    let meta = format_pairs(&[
        ("ground_truth", input.display().to_string()),
        source,
        ("noise_percent", noise_percent.to_string()),
        ("seed", seed.to_string()),
        ("boundary", Boundary::Replicate.to_string()),
    ]);
    write_text(&sidecar(output), &meta)?;
    Ok(format!("wrote {}\n", output.display()))
}

/// Per-outer-iteration trace: `iteration,mu,inner_iterations,residual,psnr_db`.
fn run_report(run: &HqsRun, schedule: &[f64], truth: Option<&Image>) -> CliResult<String> {
    let mut s = String::from("iteration,mu,inner_iterations,residual,psnr_db\n");
    for (t, (mu, snap)) in schedule.iter().zip(&run.snapshots).enumerate() {
        // reports are channel-major; the FFT pipeline has none
        let (mut iters, mut resid) = (0, 0.0f64);
        for c in 0..run.image.channels() {
            if let Some(r) = run.reports.get(c * schedule.len() + t) {
                iters += r.iterations;
                resid = resid.max(r.residual_history.last().copied().unwrap_or(0.0));
            }
        }
        let p = truth.map(|x| psnr(snap, x)).transpose()?;
        let _ =
            writeln!(s, "{},{},{},{:e},{}", t + 1, mu, iters, resid, p.map(|v| format!("{v:.6}")).unwrap_or_default());
    }
    Ok(s)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_deblur(
    input: &Path,
    kernel: Option<&Path>,
    field: Option<&Path>,
    method: Method,
    settings: &Settings,
    truth: Option<&Path>,
    output: &Path,
    report: Option<&Path>,
    cache: Option<&Path>,
) -> CliResult<String> {
    let y = read_png(input)?;
    let (method, cfg) = settings.resolve(method)?;
    let run = match load_blur(kernel, field)? {
        Blur::Uniform(k) => restore(method, &y, &k, &cfg)?,
        Blur::Field(f) => match method {
            Method::Chqs => {
                let dict = load_or_build(&cache_root(cache), &cfg.mu_schedule(), cfg.rho, cfg.ratio)?.dict;
                nonuniform_chqs(&y, &f, &dict, &cfg)?
            }
            Method::HqsCg => nonuniform_hqs_cg(&y, &f, &KernelDictionary::kernels_only(), &cfg)?,
            Method::HqsFft(_) => return Err(CliError::Config("hqs-fft does not support motion fields".into())),
        },
    };
    write_png(output, &run.image)?;
    let truth = truth.map(read_png).transpose()?;
    let mut msg = format!("wrote {}\n", output.display());
    if let Some(x) = &truth {
        let _ = writeln!(msg, "psnr_in={:.4} psnr_out={:.4}", psnr(&y, x)?, psnr(&run.image, x)?);
    }
    if let Some(path) = report {
        write_text(path, &run_report(&run, &cfg.mu_schedule(), truth.as_ref())?)?;
    }
    Ok(msg)
}

fn sorted_files(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub struct BenchArgs<'a> {
    pub corpus: Option<&'a Path>,
    pub kernels: Option<&'a Path>,
    pub images: Option<usize>,
    pub methods: Vec<Method>,
    pub noise: Vec<f64>,
    pub seed: u64,
    pub workers: usize,
    pub out: &'a Path,
    pub assert_ordering: bool,
}

pub fn cmd_bench(args: &BenchArgs, settings: &Settings) -> CliResult<String> {
    let mut images: Vec<(String, Image)> = match args.corpus {
        Some(dir) => sorted_files(dir, "png")?.iter().map(|p| Ok((stem(p), read_png(p)?))).collect::<CliResult<_>>()?,
        None => (0..CORPUS_IMAGES).map(|i| (format!("img{i:02}"), corpus_image(i, CORPUS_SIDE))).collect(),
    };
    if let Some(n) = args.images {
        images.truncate(n);
    }
    let kernels: Vec<(String, Kernel)> = match args.kernels {
        Some(dir) => {
            sorted_files(dir, "txt")?.iter().map(|p| Ok((stem(p), read_kernel(p)?))).collect::<CliResult<_>>()?
        }
        None => motion_kernels().into_iter().enumerate().map(|(i, k)| (format!("ker{}", i + 1), k)).collect(),
    };
    if images.is_empty() || kernels.is_empty() || args.methods.is_empty() || args.noise.is_empty() {
        return Err(CliError::Config("bench needs at least one image, kernel, method and noise level".into()));
    }
    for m in &args.methods {
        settings.resolve(*m)?;
    }
    let input = BenchInput {
        images,
        kernels,
        methods: args.methods.clone(),
        noise: args.noise.clone(),
        seed: args.seed,
        workers: args.workers,
    };
    let rows = run_bench(&input, settings);
    let summary = summarize(&rows);
    write_text(&args.out.join("detail.csv"), &detail_csv(&rows))?;
    write_text(&args.out.join("summary.csv"), &summary_csv(&summary))?;
    write_text(&args.out.join("curves.csv"), &curves_csv(&rows))?;
    let mut msg = String::new();
    for r in summary.iter().filter(|r| r.kernel_id == "all") {
        let _ = writeln!(
            msg,
            "{:20} noise={}% mean_psnr={} mean_ms={:.1} ok={}",
            r.method.name(),
            r.noise_percent,
            r.mean_psnr_db.map(|v| format!("{v:.3}")).unwrap_or("-".into()),
            r.mean_wall_ms,
            r.count
        );
    }
    let failed = rows.iter().filter(|r| r.psnr_db.is_none()).count();
    if failed > 0 {
        let _ = writeln!(msg, "{failed} task(s) failed, see detail.csv");
    }
    if args.assert_ordering {
        let c = aggregate_mean(&summary, Method::Chqs);
        let f = aggregate_mean(&summary, Method::HqsFft(Padding::None));
        match (c, f) {
            (Some(c), Some(f)) if c >= f => {}
            (Some(c), Some(f)) => {
                return Err(CliError::Ordering(format!("chqs mean {c:.3} dB < hqs-fft-none mean {f:.3} dB\n{msg}")))
            }
            _ => return Err(CliError::Config("ordering check needs chqs and hqs-fft-none results".into())),
        }
    }
    Ok(msg)
}

pub fn cmd_invkernel(kernel: &Path, mu: f64, rho: f64, ratio: f64, out: &Path) -> CliResult<String> {
    let k = read_kernel(kernel)?;
    let op = StackedOperator::with_gradient_prior(k, mu)?;
    let bank = compute_inverse_bank(&op, rho, ratio)?;
    let radius = spectral_radius_estimate(&op, &bank, 16)?;
    for (i, c) in bank.filters().iter().enumerate() {
        write_kernel(&out.join(format!("c{i}.txt")), c)?;
    }
    let manifest = format_pairs(&[
        ("kernel", kernel.display().to_string()),
        ("rho", rho.to_string()),
        ("mu", mu.to_string()),
        ("ratio", ratio.to_string()),
        ("c0_side", bank.c0().height().to_string()),
        ("dirac_residual", format!("{:e}", bank.dirac_residual())),
        ("spectral_radius", radius.radius.to_string()),
    ]);
    write_text(&out.join("manifest.txt"), &manifest)?;
    Ok(format!(
        "dirac_residual={:e}\nspectral_radius={:.6}{}\n",
        bank.dirac_residual(),
        radius.radius,
        if radius.approximate { " (approximate)" } else { "" }
    ))
}

pub fn cmd_dict_build(settings: &Settings, cache: Option<&Path>) -> CliResult<String> {
    let cfg = &settings.hqs;
    let root = cache_root(cache);
    let outcome = load_or_build(&root, &cfg.mu_schedule(), cfg.rho, cfg.ratio)?;
    Ok(format!(
        "{} dictionary at {}\nentries={}\nmanifest={}\n",
        if outcome.reused { "reused" } else { "built" },
        outcome.dir.display(),
        outcome.dict.len(),
        outcome.key
    ))
}

pub fn cmd_dict_lookup(kernel: &Path) -> CliResult<String> {
    let k = read_kernel(kernel)?;
    let dict = KernelDictionary::kernels_only();
    let idx = nearest_kernel(&k, &dict)?;
    let e = &dict.entries()[idx];
    Ok(format!("{idx}\nlength={} angle={}\n", e.length, e.angle))
}

/// Writes the bundled images and motion kernels.
pub fn cmd_corpus(out: &Path, side: usize) -> CliResult<String> {
    for i in 0..CORPUS_IMAGES {
        write_png(&out.join("images").join(format!("img{i:02}.png")), &corpus_image(i, side))?;
    }
    for (i, k) in motion_kernels().iter().enumerate() {
        write_kernel(&out.join("kernels").join(format!("ker{}.txt", i + 1)), k)?;
    }
    Ok(format!("wrote {CORPUS_IMAGES} images and {} kernels to {}\n", MOTION_SIDES.len(), out.display()))
}

pub fn cmd_field(height: usize, width: usize, seed: u64, constant: Option<usize>, out: &Path) -> CliResult<String> {
    let field = match constant {
        Some(e) => MotionField::constant(height, width, e)?,
        None => MotionField::smooth_random(height, width, seed),
    };
    write_text(out, &format_field(&field))?;
    Ok(format!("wrote {}\n", out.display()))
}

//! Benchmark harness: every (image, kernel, noise, method) task is blurred,
//! restored and scored; results go to three CSV files.
//!
//! * `detail.csv`: `method,image_id,kernel_id,noise_percent,psnr_db,wall_ms,iterations,status`
//! * `summary.csv`: `method,kernel_id,noise_percent,count,mean_psnr_db,mean_wall_ms`,
//!   one row per (method, kernel, noise) and an aggregate row per
//!   (method, noise) with `kernel_id=all`
//! * `curves.csv`: `method,image_id,kernel_id,noise_percent,iteration,psnr_db`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use deconv_core::{
    add_gaussian_noise, chqs, conv2d, hqs_cg, hqs_fft, psnr, Boundary, HqsConfig, HqsRun, Image, Kernel,
};

use crate::config::{Method, Settings};
use crate::error::CliResult;

/// One scored restoration.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub method: Method,
    pub image_id: String,
    pub kernel_id: String,
    pub noise_percent: f64,
    /// `None` when the run failed; see `status`.
    pub psnr_db: Option<f64>,
    pub wall_ms: f64,
    /// Total inner iterations over all outer steps.
    pub iterations: usize,
    pub status: String,
    /// PSNR after each outer iteration.
    pub curve: Vec<f64>,
}

pub struct BenchInput {
    pub images: Vec<(String, Image)>,
    pub kernels: Vec<(String, Kernel)>,
    pub methods: Vec<Method>,
    pub noise: Vec<f64>,
    pub seed: u64,
    pub workers: usize,
}

/// Noise seed of one (image, kernel, noise level) instance.
pub fn instance_seed(seed: u64, image: usize, kernel: usize, noise: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((image as u64) << 40) ^ ((kernel as u64) << 20) ^ noise as u64
}

/// Runs one pipeline.
pub fn restore(method: Method, y: &Image, k: &Kernel, cfg: &HqsConfig) -> deconv_core::Result<HqsRun> {
    match method {
        Method::Chqs => chqs(y, k, cfg),
        Method::HqsCg => hqs_cg(y, k, cfg),
        Method::HqsFft(_) => hqs_fft(y, k, cfg),
    }
}

struct Task {
    image: usize,
    kernel: usize,
    noise: usize,
    method: Method,
}

fn run_task(input: &BenchInput, settings: &Settings, task: &Task) -> BenchResult {
    let (image_id, x) = &input.images[task.image];
    let (kernel_id, k) = &input.kernels[task.kernel];
    let sigma = input.noise[task.noise];
    let mut result = BenchResult {
        method: task.method,
        image_id: image_id.clone(),
        kernel_id: kernel_id.clone(),
        noise_percent: sigma,
        psnr_db: None,
        wall_ms: 0.0,
        iterations: 0,
        status: "ok".into(),
        curve: vec![],
    };
    let outcome = (|| -> CliResult<()> {
        let (_, cfg) = settings.resolve(task.method)?;
        let blurred = conv2d(x, k, Boundary::Replicate)?;
        let y = add_gaussian_noise(&blurred, sigma, instance_seed(input.seed, task.image, task.kernel, task.noise))?;
        let start = Instant::now();
        let run = restore(task.method, &y, k, &cfg)?;
        result.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        result.iterations = run.reports.iter().map(|r| r.iterations).sum();
        result.curve = run.snapshots.iter().map(|s| psnr(s, x)).collect::<deconv_core::Result<_>>()?;
        result.psnr_db = Some(psnr(&run.image, x)?);
        Ok(())
    })();
    if let Err(e) = outcome {
        result.status = format!("error: {e}");
    }
    result
}

/// Runs every task on a pool of `input.workers` threads. Results come back
/// in task order regardless of scheduling.
pub fn run_bench(input: &BenchInput, settings: &Settings) -> Vec<BenchResult> {
    let mut tasks = Vec::new();
    for image in 0..input.images.len() {
        for kernel in 0..input.kernels.len() {
            for noise in 0..input.noise.len() {
                for &method in &input.methods {
                    tasks.push(Task { image, kernel, noise, method });
                }
            }
        }
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<BenchResult>>> = Mutex::new(vec![None; tasks.len()]);
    std::thread::scope(|s| {
        for _ in 0..input.workers.max(1).min(tasks.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let r = run_task(input, settings, task);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every task ran")).collect()
}

fn num(v: Option<f64>) -> String {
    v.map(|p| format!("{p:.6}")).unwrap_or_default()
}

pub fn detail_csv(rows: &[BenchResult]) -> String {
    let mut s = String::from("method,image_id,kernel_id,noise_percent,psnr_db,wall_ms,iterations,status\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3},{},{}",
            r.method,
            r.image_id,
            r.kernel_id,
            r.noise_percent,
            num(r.psnr_db),
            r.wall_ms,
            r.iterations,
            r.status.replace(',', ";")
        );
    }
    s
}

/// Mean PSNR (successful rows) and mean wall time per group.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub kernel_id: String,
    pub noise_percent: f64,
    pub count: usize,
    pub mean_psnr_db: Option<f64>,
    pub mean_wall_ms: f64,
}

pub fn summarize(rows: &[BenchResult]) -> Vec<SummaryRow> {
    // method, noise bits, kernel (None = aggregate)
    let mut groups: BTreeMap<(Method, u64, Option<String>), Vec<&BenchResult>> = BTreeMap::new();
    let mut kernel_order: Vec<String> = Vec::new();
    for r in rows {
        if !kernel_order.contains(&r.kernel_id) {
            kernel_order.push(r.kernel_id.clone());
        }
        let noise = r.noise_percent.to_bits();
        groups.entry((r.method, noise, Some(r.kernel_id.clone()))).or_default().push(r);
        groups.entry((r.method, noise, None)).or_default().push(r);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((method, noise, kernel), members)| {
            let ok: Vec<f64> = members.iter().filter_map(|r| r.psnr_db).collect();
            SummaryRow {
                method,
                kernel_id: kernel.unwrap_or_else(|| "all".into()),
                noise_percent: f64::from_bits(noise),
                count: ok.len(),
                mean_psnr_db: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                mean_wall_ms: members.iter().map(|r| r.wall_ms).sum::<f64>() / members.len() as f64,
            }
        })
        .collect();
    let rank = |k: &str| kernel_order.iter().position(|x| x == k).unwrap_or(usize::MAX);
    out.sort_by(|a, b| {
        (a.method, a.noise_percent.to_bits(), rank(&a.kernel_id)).cmp(&(
            b.method,
            b.noise_percent.to_bits(),
            rank(&b.kernel_id),
        ))
    });
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("method,kernel_id,noise_percent,count,mean_psnr_db,mean_wall_ms\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3}",
            r.method,
            r.kernel_id,
            r.noise_percent,
            r.count,
            num(r.mean_psnr_db),
            r.mean_wall_ms
        );
    }
    s
}

pub fn curves_csv(rows: &[BenchResult]) -> String {
    let mut s = String::from("method,image_id,kernel_id,noise_percent,iteration,psnr_db\n");
    for r in rows {
        for (t, p) in r.curve.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{},{:.6}", r.method, r.image_id, r.kernel_id, r.noise_percent, t + 1, p);
        }
    }
    s
}

/// Aggregate mean PSNR of `method`, any noise level.
pub fn aggregate_mean(summary: &[SummaryRow], method: Method) -> Option<f64> {
    let rows: Vec<f64> =
        summary.iter().filter(|r| r.method == method && r.kernel_id == "all").filter_map(|r| r.mean_psnr_db).collect();
    (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
}

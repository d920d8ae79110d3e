use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deconv_cli::commands::{self, BenchArgs};
use deconv_cli::config::{Method, Padding, Settings};
use deconv_cli::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "deconv", version, about = "Non-blind deblurring with convolutional inner solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SolverOpts {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides, e.g. `--set T=5 --set lambda=0.01`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl SolverOpts {
    fn settings(&self) -> CliResult<Settings> {
        let overrides = self
            .set
            .iter()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| CliError::Config(format!("override '{kv}' is not key=value")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Settings::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Blur an image and add Gaussian noise
    Blur {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, conflicts_with = "field")]
        kernel: Option<PathBuf>,
        /// Motion field CSV of dictionary indices
        #[arg(long)]
        field: Option<PathBuf>,
        /// Noise std as a percentage of the [0, 1] range
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Restore a blurred image
    Deblur {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, conflicts_with = "field")]
        kernel: Option<PathBuf>,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long, default_value = "chqs")]
        method: String,
        /// Sharp reference for PSNR reporting
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Per-iteration CSV trace
        #[arg(long)]
        report: Option<PathBuf>,
        /// Dictionary cache root (default $DECONV_CACHE_DIR)
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverOpts,
    },
    /// Run the benchmark grid
    Bench {
        /// Directory of PNGs; the built-in corpus when omitted
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory of kernel .txt files; the built-in set when omitted
        #[arg(long)]
        kernels: Option<PathBuf>,
        /// Use only the first N images
        #[arg(long)]
        images: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "chqs,hqs-cg,hqs-fft")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        noise: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
        /// Exit 5 unless chqs beats hqs-fft-none on mean PSNR
        #[arg(long)]
        assert_ordering: bool,
        #[command(flatten)]
        solver: SolverOpts,
    },
    /// Compute the inverse filter bank of one kernel
    Invkernel {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        mu: f64,
        #[arg(long, default_value_t = deconv_core::invfilter::DEFAULT_RHO)]
        rho: f64,
        #[arg(long, default_value_t = deconv_core::invfilter::DEFAULT_RATIO)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Motion-kernel dictionary
    Dict {
        #[command(subcommand)]
        action: DictAction,
    },
    /// Export the built-in images and kernels
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = deconv_core::corpus::CORPUS_SIDE)]
        side: usize,
    },
    /// Write a motion field CSV
    Field {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use this entry everywhere instead of a random field
        #[arg(long)]
        constant: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DictAction {
    /// Build (or reuse) the cached dictionary for the current config
    Build {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverOpts,
    },
    /// Print the index of the entry nearest to a kernel
    Lookup {
        #[arg(long)]
        kernel: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Blur { input, kernel, field, noise, seed, output } => {
            commands::cmd_blur(&input, kernel.as_deref(), field.as_deref(), noise, seed, &output)
        }
        Command::Deblur { input, kernel, field, method, truth, output, report, cache, solver } => commands::cmd_deblur(
            &input,
            kernel.as_deref(),
            field.as_deref(),
            method.parse()?,
            &solver.settings()?,
            truth.as_deref(),
            &output,
            report.as_deref(),
            cache.as_deref(),
        ),
        Command::Bench { corpus, kernels, images, methods, noise, seed, workers, out, assert_ordering, solver } => {
            let settings = solver.settings()?;
            let mut methods = methods.iter().map(|m| m.parse()).collect::<CliResult<Vec<Method>>>()?;
            if assert_ordering && !methods.contains(&Method::HqsFft(Padding::None)) {
                methods.push(Method::HqsFft(Padding::None));
            }
            if assert_ordering && !methods.contains(&Method::Chqs) {
                methods.insert(0, Method::Chqs);
            }
            let args = BenchArgs {
                corpus: corpus.as_deref(),
                kernels: kernels.as_deref(),
                images,
                methods,
                noise,
                seed,
                workers,
                out: &out,
                assert_ordering,
            };
            commands::cmd_bench(&args, &settings)
        }
        Command::Invkernel { kernel, mu, rho, ratio, out } => commands::cmd_invkernel(&kernel, mu, rho, ratio, &out),
        Command::Dict { action: DictAction::Build { cache, solver } } => {
            commands::cmd_dict_build(&solver.settings()?, cache.as_deref())
        }
        Command::Dict { action: DictAction::Lookup { kernel } } => commands::cmd_dict_lookup(&kernel),
        Command::Corpus { out, side } => commands::cmd_corpus(&out, side),
        Command::Field { height, width, seed, constant, out } => {
            commands::cmd_field(height, width, seed, constant, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("deconv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

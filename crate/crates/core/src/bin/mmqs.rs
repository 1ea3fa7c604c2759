//! Command-line front end for the patch-manifold reconstruction tasks.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use mmqs::config::{split_pairs, Task, TaskConfig};
use mmqs::error::{Error, Result};
use mmqs::image::Image;
use mmqs::observe::ObservationOp;
use mmqs::task;

#[derive(Parser)]
#[command(
    name = "mmqs",
    about = "Self-supervised image reconstruction with a rotation-flip-canonical patch auto-encoder",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill in missing pixels given an observation and its mask.
    Inpaint(RunArgs),
    /// Undo a known Gaussian blur.
    Deblur(RunArgs),
    /// Upscale an image degraded by block-average downsampling.
    Sr(RunArgs),
    /// Remove additive Gaussian noise of known level.
    Denoise(RunArgs),
    /// Synthesize a degraded observation from a clean reference.
    Degrade(DegradeArgs),
    /// Export bottleneck codes and canonical patches from a finished run.
    ExportCodes(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (flat key = value); command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observed (corrupted) image.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Clean reference for metric reporting only.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Mask image for inpainting (0 = missing, 255 = observed).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Continue from a state.bin written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    patch_side: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Comma-separated interior layer widths, e.g. 81,81,10,81,81.
    #[arg(long)]
    hidden: Option<String>,
    /// Auto-encoder input noise level.
    #[arg(long)]
    sigma: Option<f64>,
    /// Restrict actions to the identity (plain patch auto-encoder baseline).
    #[arg(long)]
    mmes: bool,
    #[arg(long)]
    missing_rate: Option<f64>,
    #[arg(long)]
    blur_width: Option<usize>,
    #[arg(long)]
    blur_std: Option<f64>,
    /// Super-resolution upscale factor.
    #[arg(long)]
    factor: Option<usize>,
    /// Observation noise level (denoising).
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct DegradeArgs {
    /// Which degradation to synthesize.
    #[arg(long)]
    task: String,
    /// Clean reference image.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    missing_rate: Option<f64>,
    #[arg(long)]
    blur_width: Option<usize>,
    #[arg(long)]
    blur_std: Option<f64>,
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory of a finished run (needs config.cfg and state.bin).
    #[arg(long)]
    run_dir: PathBuf,
    /// Where to write codes.csv and patches.png (defaults to run_dir).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self, task: Task) -> Result<TaskConfig> {
        let mut cfg = TaskConfig::preset(task);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            let pairs = split_pairs(&text)?;
            cfg.apply_pairs(&pairs)?;
            if cfg.task != task {
                return Err(Error::InvalidConfig(format!(
                    "config file sets task '{}' but the '{}' subcommand was used",
                    cfg.task.as_str(),
                    task.as_str()
                )));
            }
        }
        if let Some(v) = &self.input {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = &self.reference {
            cfg.reference = Some(v.clone());
        }
        if let Some(v) = &self.mask {
            cfg.mask = Some(v.clone());
        }
        if let Some(v) = &self.resume {
            cfg.resume = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.iters {
            cfg.iters = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.patch_side {
            cfg.patch_side = v;
        }
        if let Some(v) = self.stride {
            cfg.stride = v;
        }
        if let Some(v) = &self.hidden {
            cfg.apply("hidden", v)?;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if self.mmes {
            cfg.mmes = true;
        }
        if let Some(v) = self.missing_rate {
            cfg.missing_rate = v;
        }
        if let Some(v) = self.blur_width {
            cfg.blur_width = v;
        }
        if let Some(v) = self.blur_std {
            cfg.blur_std = Some(v);
        }
        if let Some(v) = self.factor {
            cfg.sr_factor = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        Ok(cfg)
    }
}

fn run(task: Task, args: &RunArgs) -> Result<()> {
    let cfg = args.resolve(task)?;
    let outputs = task::run_task(&cfg)?;
    println!(
        "{}: {} iterations, artifacts in {}",
        cfg.task.as_str(),
        outputs.metrics.iterations,
        outputs.out_dir.display()
    );
    if let (Some(p), Some(s)) = (outputs.metrics.psnr, outputs.metrics.ssim) {
        println!("psnr {p:.2} dB, ssim {s:.4}");
    }
    Ok(())
}

fn degrade(args: &DegradeArgs) -> Result<()> {
    let task = Task::parse(&args.task)?;
    let mut cfg = TaskConfig::preset(task);
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.missing_rate {
        cfg.missing_rate = v;
    }
    if let Some(v) = args.blur_width {
        cfg.blur_width = v;
    }
    if let Some(v) = args.blur_std {
        cfg.blur_std = Some(v);
    }
    if let Some(v) = args.factor {
        cfg.sr_factor = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    let reference = Image::load(&args.input)?;
    let (observed, op) = task::synthesize_degradation(&reference, &cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;
    observed.save(args.out_dir.join("observed.png"))?;
    match &op {
        ObservationOp::Mask { mask } => mask.save(args.out_dir.join("mask.png"))?,
        ObservationOp::Blur { .. } => op.write_kernel_csv(args.out_dir.join("kernel.csv"))?,
        _ => {}
    }
    cfg.input = Some(args.out_dir.join("observed.png"));
    cfg.reference = Some(args.input.clone());
    if matches!(op, ObservationOp::Mask { .. }) {
        cfg.mask = Some(args.out_dir.join("mask.png"));
    }
    std::fs::write(args.out_dir.join("task.cfg"), cfg.serialize())?;
    println!(
        "degraded '{}' -> {}",
        args.input.display(),
        args.out_dir.join("observed.png").display()
    );
    Ok(())
}

fn export_codes(args: &ExportArgs) -> Result<()> {
    let cfg_text = std::fs::read_to_string(args.run_dir.join("config.cfg"))?;
    let cfg = TaskConfig::parse(&cfg_text)?;
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("run config lacks an input path".into()))?;
    let observed = Image::load(input)?;
    let mut solver = task::build_solver(&cfg, observed)?;
    solver.load_state(args.run_dir.join("state.bin"))?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.run_dir.clone());
    task::export_codes(&solver.problem, &out_dir)?;
    println!("codes written to {}", out_dir.join("codes.csv").display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Inpaint(args) => run(Task::Inpaint, args),
        Command::Deblur(args) => run(Task::Deblur, args),
        Command::Sr(args) => run(Task::Sr, args),
        Command::Denoise(args) => run(Task::Denoise, args),
        Command::Degrade(args) => degrade(args),
        Command::ExportCodes(args) => export_codes(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

//! End-to-end task runs: build the problem from a config, optimize, and
//! write the output artifacts (reconstruction, trace, metrics, label map,
//! solver state). Also hosts degradation synthesis for experiments and the
//! bottleneck-code export.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::action::{build_actions, identity_only};
use crate::config::{Task, TaskConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics;
use crate::mlp::Mlp;
use crate::noise::GaussianSampler;
use crate::observe::ObservationOp;
use crate::patch;
use crate::recon::{ReconstructionProblem, Solver};

/// Seed offsets so the independent random streams of one run never collide.
const SEED_NET: u64 = 1;
const SEED_CAE_NOISE: u64 = 2;
const SEED_DEGRADE: u64 = 3;

/// Metric summary written as `metrics.json`.
#[derive(Debug, Clone, Serialize)]
pub struct TaskMetrics {
    pub task: String,
    pub seed: u64,
    pub iterations: usize,
    pub loss_rec: f64,
    pub loss_cae: f64,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_observed: Option<f64>,
}

/// Artifacts of a finished run.
#[derive(Debug)]
pub struct TaskOutputs {
    pub reconstructed: Image,
    pub metrics: TaskMetrics,
    pub out_dir: PathBuf,
}

/// Build the observation operator a task works through.
fn build_op(cfg: &TaskConfig, observed: &Image) -> Result<ObservationOp> {
    match cfg.task {
        Task::Denoise => Ok(ObservationOp::identity()),
        Task::Deblur => ObservationOp::blur(cfg.blur_width, cfg.blur_std),
        Task::Sr => ObservationOp::downsample(cfg.sr_factor),
        Task::Inpaint => {
            let path = cfg.mask.as_ref().ok_or_else(|| {
                Error::InvalidConfig("inpaint requires a mask file".into())
            })?;
            let mask = Image::load(path)?.to_luma();
            if (mask.height(), mask.width()) != (observed.height(), observed.width()) {
                return Err(Error::shape(
                    "inpaint mask",
                    format!("{}x{}", observed.height(), observed.width()),
                    format!("{}x{}", mask.height(), mask.width()),
                ));
            }
            ObservationOp::mask(&mask)
        }
    }
}

/// Assemble the solver for a loaded observation, building the operator
/// from the config (mask path, blur parameters, or scale factor).
pub fn build_solver(cfg: &TaskConfig, observed: Image) -> Result<Solver> {
    let op = build_op(cfg, &observed)?;
    build_solver_with(cfg, observed, op)
}

/// Assemble the solver around a caller-supplied observation operator.
pub fn build_solver_with(cfg: &TaskConfig, observed: Image, op: ObservationOp) -> Result<Solver> {
    cfg.validate()?;
    let dims = cfg.layer_dims(observed.channels());
    let net = Mlp::new(&dims, cfg.slope, cfg.seed.wrapping_add(SEED_NET))?;
    let actions = if cfg.mmes {
        identity_only(cfg.patch_side)
    } else {
        build_actions(cfg.patch_side)
    };
    let mut train = cfg.train_config();
    if cfg.task == Task::Denoise && cfg.early_stop {
        // Expected residual energy of the known observation noise.
        train.noise_energy =
            Some(cfg.noise_sigma * cfg.noise_sigma * observed.len() as f64);
    }
    let problem = ReconstructionProblem::new(
        observed,
        op,
        cfg.patch_side,
        cfg.stride,
        net,
        actions,
        cfg.sigma,
        cfg.lambda_init,
        cfg.seed.wrapping_add(SEED_CAE_NOISE),
    )?;
    Solver::new(problem, train)
}

/// Run one task end to end and write every artifact into `out_dir`:
/// `reconstructed.png`, `trace.csv`, `metrics.json`, `labels.pgm`,
/// `state.bin`, and the resolved `config.cfg`.
pub fn run_task(cfg: &TaskConfig) -> Result<TaskOutputs> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no input image given".into()))?;
    let observed = Image::load(input)?;
    let reference = match &cfg.reference {
        Some(p) => Some(Image::load(p)?),
        None => None,
    };
    let mut solver = build_solver(cfg, observed.clone())?;
    if let Some(state) = &cfg.resume {
        solver.load_state(state)?;
    }
    let reconstructed = solver.run(reference.as_ref())?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    reconstructed.save(cfg.out_dir.join("reconstructed.png"))?;
    solver.trace().write_csv(cfg.out_dir.join("trace.csv"))?;
    solver
        .problem
        .assignment
        .write_pgm(&solver.problem.grid, cfg.out_dir.join("labels.pgm"))?;
    solver.save_state(cfg.out_dir.join("state.bin"))?;
    std::fs::write(cfg.out_dir.join("config.cfg"), cfg.serialize())?;

    let last = solver.trace().last();
    let (psnr, ssim) = match &reference {
        Some(r) if r.shape() == reconstructed.shape() => (
            Some(metrics::psnr(r, &reconstructed)?),
            Some(metrics::ssim(r, &reconstructed)?),
        ),
        _ => (None, None),
    };
    let psnr_observed = match &reference {
        Some(r) if r.shape() == observed.shape() => Some(metrics::psnr(r, &observed)?),
        _ => None,
    };
    let metrics = TaskMetrics {
        task: cfg.task.as_str().to_string(),
        seed: cfg.seed,
        iterations: solver.iteration(),
        loss_rec: last.map(|r| r.loss_rec).unwrap_or(f64::NAN),
        loss_cae: last.map(|r| r.loss_cae).unwrap_or(f64::NAN),
        lambda: solver.problem.lambda,
        psnr,
        ssim,
        psnr_observed,
    };
    let json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| Error::BadFormat(e.to_string()))?;
    std::fs::write(cfg.out_dir.join("metrics.json"), json)?;

    Ok(TaskOutputs {
        reconstructed,
        metrics,
        out_dir: cfg.out_dir.clone(),
    })
}

/// Synthesize a degraded observation (and the matching operator) from a
/// clean reference, deterministically from the config seed.
///
/// Inpainting removes exactly `floor(rate * pixels)` pixels; denoising adds
/// Gaussian noise at `noise_sigma` without clamping (clamping happens only
/// on file write).
pub fn synthesize_degradation(
    reference: &Image,
    cfg: &TaskConfig,
) -> Result<(Image, ObservationOp)> {
    match cfg.task {
        Task::Inpaint => {
            if !(0.0..=1.0).contains(&cfg.missing_rate) {
                return Err(Error::InvalidConfig(format!(
                    "missing_rate must lie in [0,1], got {}",
                    cfg.missing_rate
                )));
            }
            let mask = random_mask(
                reference.height(),
                reference.width(),
                cfg.missing_rate,
                cfg.seed.wrapping_add(SEED_DEGRADE),
            );
            let op = ObservationOp::mask(&mask)?;
            Ok((op.forward(reference)?, op))
        }
        Task::Deblur => {
            let op = ObservationOp::blur(cfg.blur_width, cfg.blur_std)?;
            Ok((op.forward(reference)?, op))
        }
        Task::Sr => {
            let op = ObservationOp::downsample(cfg.sr_factor)?;
            Ok((op.forward(reference)?, op))
        }
        Task::Denoise => {
            let mut sampler =
                GaussianSampler::new(cfg.seed.wrapping_add(SEED_DEGRADE), cfg.noise_sigma);
            let observed = crate::noise::add_gaussian_noise(reference, &mut sampler);
            Ok((observed, ObservationOp::identity()))
        }
    }
}

/// Binary mask with exactly `floor(rate * h * w)` missing pixels, chosen by
/// a seeded partial shuffle.
pub fn random_mask(h: usize, w: usize, rate: f64, seed: u64) -> Image {
    let n = h * w;
    let missing = (rate * n as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..missing.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut mask = Image::constant(h, w, 1, 1.0);
    for &i in idx.iter().take(missing) {
        mask.data_mut()[i] = 0.0;
    }
    mask
}

/// Write `codes.csv` (patch index, action label, bottleneck coordinates)
/// plus a `patches.png` contact sheet of the canonical patches, laid out on
/// the patch-origin grid.
pub fn export_codes(problem: &ReconstructionProblem, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let m = patch::extract(&problem.estimate, &problem.grid)?;
    let canon = if problem.bypass_canon {
        m
    } else {
        crate::canon::canonicalize(&m, &problem.assignment, &problem.actions)?
    };
    let codes = problem.net.encode(&canon)?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("codes.csv"))?);
    let header: Vec<String> = (0..codes.nrows()).map(|i| format!("code_{i}")).collect();
    writeln!(f, "patch,label,{}", header.join(","))?;
    for t in 0..codes.ncols() {
        let row: Vec<String> = (0..codes.nrows())
            .map(|i| codes[[i, t]].to_string())
            .collect();
        writeln!(
            f,
            "{},{},{}",
            t,
            problem.assignment.labels()[t],
            row.join(",")
        )?;
    }
    drop(f);

    write_patch_sheet(&canon, problem, out_dir.join("patches.png"))?;
    Ok(())
}

/// Contact sheet of canonical patches with one-pixel separators.
fn write_patch_sheet(
    canon: &patch::PatchMatrix,
    problem: &ReconstructionProblem,
    path: PathBuf,
) -> Result<()> {
    let grid = &problem.grid;
    let s = grid.patch_side();
    let area = s * s;
    let channels = grid.channels();
    let (rows, cols) = (grid.origin_rows(), grid.origin_cols());
    let sheet_h = rows * (s + 1) - 1;
    let sheet_w = cols * (s + 1) - 1;
    let mut sheet = Image::zeros(sheet_h, sheet_w, channels);
    for t in 0..canon.ncols() {
        let (gr, gc) = (t / cols, t % cols);
        for ch in 0..channels {
            for i in 0..s {
                for j in 0..s {
                    sheet.set(
                        gr * (s + 1) + i,
                        gc * (s + 1) + j,
                        ch,
                        canon[[ch * area + i * s + j, t]],
                    );
                }
            }
        }
    }
    sheet.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_missing_rate_keeps_the_reference() {
        let reference = Image::from_data(4, 4, 1, (0..16).map(|v| v as f64 / 16.0).collect())
            .unwrap();
        let mut cfg = TaskConfig::preset(Task::Inpaint);
        cfg.missing_rate = 0.0;
        let (obs, _) = synthesize_degradation(&reference, &cfg).unwrap();
        assert_eq!(obs.data(), reference.data());
    }

    #[test]
    fn missing_rate_removes_exactly_floor_of_n() {
        let reference = Image::constant(20, 20, 1, 1.0);
        let mut cfg = TaskConfig::preset(Task::Inpaint);
        cfg.missing_rate = 0.9;
        cfg.seed = 7;
        let (obs, op) = synthesize_degradation(&reference, &cfg).unwrap();
        let zeros = obs.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 360);
        // Reproducible: same seed, same mask.
        let (obs2, _) = synthesize_degradation(&reference, &cfg).unwrap();
        assert_eq!(obs.data(), obs2.data());
        let ObservationOp::Mask { mask } = &op else {
            panic!("expected mask op")
        };
        assert_eq!(mask.data().iter().filter(|&&v| v == 0.0).count(), 360);
    }

    #[test]
    fn denoise_degradation_matches_requested_sigma() {
        let reference = Image::constant(256, 256, 1, 0.5);
        let mut cfg = TaskConfig::preset(Task::Denoise);
        cfg.noise_sigma = 40.0 / 255.0;
        cfg.seed = 3;
        let (obs, _) = synthesize_degradation(&reference, &cfg).unwrap();
        let n = obs.len() as f64;
        let mean: f64 = obs
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / n;
        let var: f64 = obs
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (a - b - mean) * (a - b - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        let want = 40.0 / 255.0;
        assert!(
            (std - want).abs() / want < 0.02,
            "sample std {std} deviates more than 2% from {want}"
        );
    }

    #[test]
    fn invalid_missing_rate_is_rejected() {
        let reference = Image::zeros(4, 4, 1);
        let mut cfg = TaskConfig::preset(Task::Inpaint);
        cfg.missing_rate = 1.5;
        assert!(synthesize_degradation(&reference, &cfg).is_err());
        cfg.missing_rate = -0.1;
        assert!(synthesize_degradation(&reference, &cfg).is_err());
    }

    #[test]
    fn sr_degradation_shrinks_by_factor() {
        let reference = Image::constant(64, 64, 3, 0.25);
        let mut cfg = TaskConfig::preset(Task::Sr);
        cfg.sr_factor = 4;
        let (obs, _) = synthesize_degradation(&reference, &cfg).unwrap();
        assert_eq!(obs.shape(), (16, 16, 3));
    }
}

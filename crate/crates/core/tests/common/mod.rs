//! Shared fixtures for the integration and acceptance suites.
#![allow(dead_code)]

use mmqs::action::build_actions;
use mmqs::image::Image;
use mmqs::mlp::Mlp;
use mmqs::noise::GaussianSampler;
use mmqs::observe::ObservationOp;
use mmqs::recon::{
    gradients_with_noise, losses_with_noise, ReconstructionProblem, Solver, TrainConfig,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 64x64 grayscale image built from one asymmetric 8x8 texture tile placed
/// on an aligned grid under seeded random rotations/flips.
pub fn tiled_texture_image(seed: u64) -> Image {
    let side = 8usize;
    let tiles = 8usize;
    let mut tile = vec![0.0; side * side];
    for i in 0..side {
        for j in 0..side {
            let phase = (2 * i + j) as f64 * std::f64::consts::PI / 4.0;
            let ramp = i as f64 / (side - 1) as f64;
            tile[i * side + j] = 0.5 + 0.32 * phase.sin() + 0.12 * (ramp - 0.5);
        }
    }
    let actions = build_actions(side);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::zeros(side * tiles, side * tiles, 1);
    for by in 0..tiles {
        for bx in 0..tiles {
            let k = rng.random_range(0..actions.len());
            let placed = actions[k].apply(&tile).unwrap();
            for i in 0..side {
                for j in 0..side {
                    img.set(by * side + i, bx * side + j, 0, placed[i * side + j]);
                }
            }
        }
    }
    img
}

/// 64x64 piecewise-smooth grayscale stand-in for a natural crop: a soft
/// gradient, a bright disc, a dark blob, and a straight edge.
pub fn natural_crop(seed: u64) -> Image {
    let n = 64usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = 20.0 + rng.random::<f64>() * 8.0;
    let cy = 22.0 + rng.random::<f64>() * 8.0;
    let bx = 44.0 + rng.random::<f64>() * 6.0;
    let by = 40.0 + rng.random::<f64>() * 6.0;
    let mut img = Image::zeros(n, n, 1);
    for y in 0..n {
        for x in 0..n {
            let fx = x as f64;
            let fy = y as f64;
            let mut v = 0.35 + 0.25 * (fx + fy) / (2.0 * n as f64);
            let d1 = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();
            v += 0.30 * (-(d1 * d1) / 90.0).exp();
            let d2 = ((fx - bx).powi(2) + (fy - by).powi(2)).sqrt();
            v -= 0.25 * (-(d2 * d2) / 140.0).exp();
            if fy > 1.35 * fx - 28.0 {
                v += 0.08;
            }
            img.set(y, x, 0, v.clamp(0.02, 0.98));
        }
    }
    img
}

/// Knobs of one desk-scale run.
#[derive(Debug, Clone)]
pub struct DeskRun {
    pub patch_side: usize,
    pub stride: usize,
    pub hidden: Vec<usize>,
    pub sigma: f64,
    pub lambda_init: f64,
    pub iters: usize,
    pub lr_x: f64,
    pub lr_theta: f64,
    pub lambda_target: f64,
    pub lambda_rate: f64,
    pub mmes: bool,
    pub early_stop: bool,
    pub noise_energy: Option<f64>,
    pub seed: u64,
}

impl Default for DeskRun {
    fn default() -> Self {
        Self {
            patch_side: 8,
            stride: 2,
            hidden: vec![64, 6, 64],
            sigma: 0.05,
            lambda_init: 1.0,
            iters: 600,
            lr_x: 0.01,
            lr_theta: 0.01,
            lambda_target: 0.9,
            lambda_rate: 0.2,
            mmes: false,
            early_stop: false,
            noise_energy: None,
            seed: 0,
        }
    }
}

/// Build and run one reconstruction; returns the output and the solver.
pub fn desk_run(observed: &Image, op: ObservationOp, knobs: &DeskRun) -> (Image, Solver) {
    let d = knobs.patch_side * knobs.patch_side * observed.channels();
    let mut dims = vec![d];
    dims.extend_from_slice(&knobs.hidden);
    dims.push(d);
    let net = Mlp::new(&dims, mmqs::mlp::DEFAULT_SLOPE, knobs.seed.wrapping_add(1)).unwrap();
    let actions = if knobs.mmes {
        mmqs::action::identity_only(knobs.patch_side)
    } else {
        build_actions(knobs.patch_side)
    };
    let problem = ReconstructionProblem::new(
        observed.clone(),
        op,
        knobs.patch_side,
        knobs.stride,
        net,
        actions,
        knobs.sigma,
        knobs.lambda_init,
        knobs.seed.wrapping_add(2),
    )
    .unwrap();
    let config = TrainConfig {
        max_iters: knobs.iters,
        lr_x: knobs.lr_x,
        lr_theta: knobs.lr_theta,
        lambda_target: knobs.lambda_target,
        lambda_rate: knobs.lambda_rate,
        early_stop: knobs.early_stop,
        noise_energy: knobs.noise_energy,
        ..TrainConfig::default()
    };
    let mut solver = Solver::new(problem, config).unwrap();
    let out = solver.run(None).unwrap();
    (out, solver)
}

/// Half the pixels removed, seeded.
pub fn half_mask(h: usize, w: usize, seed: u64) -> Image {
    mmqs::task::random_mask(h, w, 0.5, seed)
}

/// Observation with additive Gaussian noise (not clamped).
pub fn noisy_observation(reference: &Image, sigma: f64, seed: u64) -> Image {
    let mut sampler = GaussianSampler::new(seed, sigma);
    mmqs::noise::add_gaussian_noise(reference, &mut sampler)
}

pub fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Max relative error between the analytic joint gradient of
/// `L_rec + lambda * L_cae` and central finite differences over randomly
/// sampled coordinates of the image and the weights.
pub fn fd_joint_gradient_error(
    problem: &ReconstructionProblem,
    noise: &Array2<f64>,
    coords: usize,
    seed: u64,
) -> f64 {
    let jg = gradients_with_noise(problem, noise).unwrap();
    let loss_of = |p: &ReconstructionProblem| -> f64 {
        let (lr, lc) = losses_with_noise(p, noise).unwrap();
        lr + p.lambda * lc
    };
    let h = 1e-6;
    let rel = |a: f64, f: f64| (a - f).abs() / f64::max(1e-6, a.abs().max(f.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..coords {
        if rng.random::<bool>() {
            let i = rng.random_range(0..problem.estimate.len());
            let mut plus = problem.clone();
            plus.estimate.data_mut()[i] += h;
            let mut minus = problem.clone();
            minus.estimate.data_mut()[i] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            worst = worst.max(rel(jg.grad_x.data()[i], fd));
        } else {
            let l = rng.random_range(0..problem.net.num_layers());
            let (rows, cols) = problem.net.weights()[l].dim();
            let (i, j) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let mut plus = problem.clone();
            plus.net.weights_mut()[l][[i, j]] += h;
            let mut minus = problem.clone();
            minus.net.weights_mut()[l][[i, j]] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            worst = worst.max(rel(jg.grad_theta.d_weights[l][[i, j]], fd));
        }
    }
    worst
}

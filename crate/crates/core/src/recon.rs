//! Joint self-supervised reconstruction.
//!
//! Minimizes `L = || Y - F(pipeline(X)) ||^2 + lambda * L_cae` over the
//! image `X` and the auto-encoder parameters simultaneously, where
//! `pipeline = aggregate . decanonicalize . net . canonicalize . extract`
//! and `L_cae` is the denoising auto-encoding error of the canonical
//! patches. Per-patch action labels are refreshed every few iterations
//! (the discrete half of the alternating scheme); `lambda` is steered so
//! that neither loss term dominates.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::action::Action;
use crate::canon::{self, ActionAssignment};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics;
use crate::mlp::{
    adam_step, read_f64, read_u64, AdamParams, AdamState, Gradients, Mlp, VecAdam,
};
use crate::noise::GaussianSampler;
use crate::observe::ObservationOp;
use crate::patch::{self, PatchGrid, PatchMatrix};

/// Schedule and controller settings for one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_iters: usize,
    /// Adam learning rate for the image variable.
    pub lr_x: f64,
    /// Adam learning rate for the network parameters.
    pub lr_theta: f64,
    /// Refresh the action assignment every this many iterations.
    pub assign_period: usize,
    /// Target share of the auto-encoding term in the raw loss mix.
    pub lambda_target: f64,
    /// Multiplicative rate of the lambda controller.
    pub lambda_rate: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Stop once the data-fit loss stays at or below `noise_energy` for
    /// `patience` consecutive iterations (denoising).
    pub early_stop: bool,
    pub patience: usize,
    /// Known noise energy `||n||^2` of the observation, if any.
    pub noise_energy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            lr_x: 0.01,
            lr_theta: 0.01,
            assign_period: 10,
            lambda_target: 0.5,
            lambda_rate: 0.05,
            lambda_min: 1e-4,
            lambda_max: 1e4,
            early_stop: false,
            patience: 30,
            noise_energy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_x < 0.0 || self.lr_theta < 0.0 {
            return Err(Error::InvalidConfig("learning rates must be >= 0".into()));
        }
        if self.assign_period == 0 {
            return Err(Error::InvalidConfig("assign_period must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_target) {
            return Err(Error::InvalidConfig("lambda_target must lie in [0,1]".into()));
        }
        if self.lambda_min <= 0.0 || self.lambda_max < self.lambda_min {
            return Err(Error::InvalidConfig(
                "need 0 < lambda_min <= lambda_max".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub loss_rec: f64,
    pub loss_cae: f64,
    pub lambda: f64,
    /// PSNR of the current pipeline output against a reference, when one
    /// was supplied for evaluation.
    pub psnr: Option<f64>,
}

/// Per-iteration loss history of a run.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Export as CSV with columns `iter,loss_rec,loss_cae,lambda,psnr`
    /// (the psnr field is empty when no reference was given).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iter,loss_rec,loss_cae,lambda,psnr")?;
        for r in &self.records {
            let psnr = r.psnr.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{}",
                r.iter, r.loss_rec, r.loss_cae, r.lambda, psnr
            )?;
        }
        Ok(())
    }
}

/// The full state of one reconstruction problem instance.
#[derive(Debug, Clone)]
pub struct ReconstructionProblem {
    /// The corrupted observation `Y`.
    pub observed: Image,
    /// The known degradation `F`.
    pub op: ObservationOp,
    /// Patch geometry of the estimate.
    pub grid: PatchGrid,
    /// Candidate actions (all eight, or just the identity).
    pub actions: Vec<Action>,
    /// Skip the canonicalization layers entirely (plain patch auto-encoder).
    pub bypass_canon: bool,
    pub net: Mlp,
    /// The optimization variable `X`.
    pub estimate: Image,
    pub assignment: ActionAssignment,
    /// Noise level injected into the auto-encoder input.
    pub sigma: f64,
    /// Balance weight between data fit and the auto-encoding penalty.
    pub lambda: f64,
    pub sampler: GaussianSampler,
    counts: Image,
}

impl ReconstructionProblem {
    /// Build a problem with `X` initialized from the observation through
    /// the operator's crude right-inverse and an all-identity assignment.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        observed: Image,
        op: ObservationOp,
        patch_side: usize,
        stride: usize,
        net: Mlp,
        actions: Vec<Action>,
        sigma: f64,
        lambda: f64,
        noise_seed: u64,
    ) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        if sigma < 0.0 {
            return Err(Error::InvalidConfig("sigma must be >= 0".into()));
        }
        if actions.is_empty() {
            return Err(Error::InvalidConfig("need at least one action".into()));
        }
        if actions[0].patch_side() != patch_side {
            return Err(Error::InvalidConfig(format!(
                "action patch side {} does not match patch_side {}",
                actions[0].patch_side(),
                patch_side
            )));
        }
        let estimate = op.pseudo_init(&observed);
        let grid = PatchGrid::for_image(&estimate, patch_side, stride)?;
        if net.input_dim() != grid.patch_dim() {
            return Err(Error::shape(
                "ReconstructionProblem: net input",
                grid.patch_dim(),
                net.input_dim(),
            ));
        }
        let produced = op.output_shape(estimate.shape())?;
        if produced != observed.shape() {
            return Err(Error::shape(
                "ReconstructionProblem: observation",
                format!("{:?}", observed.shape()),
                format!("{produced:?}"),
            ));
        }
        let counts = patch::overlap_counts(&grid)?;
        let assignment = ActionAssignment::identity(grid.patch_count());
        let sampler = GaussianSampler::new(noise_seed, sigma);
        Ok(Self {
            observed,
            op,
            grid,
            actions,
            bypass_canon: false,
            net,
            estimate,
            assignment,
            sigma,
            lambda,
            sampler,
            counts,
        })
    }

    /// Draw a fresh patch-shaped noise matrix at the problem's sigma.
    /// Samples are laid out patch-by-patch (column-major).
    pub fn draw_noise(&mut self) -> Array2<f64> {
        let (rows, cols) = (self.grid.patch_dim(), self.grid.patch_count());
        let mut flat = vec![0.0; rows * cols];
        self.sampler.fill(&mut flat);
        // Column-major fill: one contiguous run per patch.
        let mut out = Array2::zeros((rows, cols));
        for t in 0..cols {
            for r in 0..rows {
                out[[r, t]] = flat[t * rows + r];
            }
        }
        out
    }

    /// Canonical patches of the current estimate.
    fn canonical_patches(&self) -> Result<PatchMatrix> {
        let m = patch::extract(&self.estimate, &self.grid)?;
        if self.bypass_canon {
            return Ok(m);
        }
        canon::canonicalize(&m, &self.assignment, &self.actions)
    }

    fn decanonicalize(&self, m: &PatchMatrix) -> Result<PatchMatrix> {
        if self.bypass_canon {
            return Ok(m.clone());
        }
        canon::decanonicalize(m, &self.assignment, &self.actions)
    }

    /// Refresh the per-patch action labels (no-op in bypass mode).
    pub fn refresh_assignment(&mut self) -> Result<()> {
        if self.bypass_canon {
            return Ok(());
        }
        let m = patch::extract(&self.estimate, &self.grid)?;
        self.assignment = canon::update_assignment(&self.net, &m, &self.actions)?;
        Ok(())
    }
}

/// The model's image output for the current state:
/// aggregate(decanonicalize(net(canonicalize(extract(X))))).
pub fn reconstruct(problem: &ReconstructionProblem) -> Result<Image> {
    let c = problem.canonical_patches()?;
    let out = problem.net.forward(&c)?;
    let dec = problem.decanonicalize(&out)?;
    patch::aggregate(&dec, &problem.grid)
}

/// Data-fit loss `|| Y - F(pipeline(X)) ||_F^2` (no noise injection).
pub fn loss_rec(problem: &ReconstructionProblem) -> Result<f64> {
    let z = reconstruct(problem)?;
    let fz = problem.op.forward(&z)?;
    Ok(problem
        .observed
        .data()
        .iter()
        .zip(fz.data())
        .map(|(y, v)| (y - v) * (y - v))
        .sum())
}

/// Auto-encoding penalty with fresh noise drawn from the problem sampler:
/// canonical patches are the targets, their noisy copies the inputs.
pub fn loss_cae(problem: &mut ReconstructionProblem) -> Result<f64> {
    let noise = problem.draw_noise();
    loss_cae_with_noise(problem, &noise)
}

/// Auto-encoding penalty under a caller-supplied noise realization.
pub fn loss_cae_with_noise(problem: &ReconstructionProblem, noise: &Array2<f64>) -> Result<f64> {
    let c = problem.canonical_patches()?;
    if noise.dim() != c.dim() {
        return Err(Error::shape(
            "loss_cae noise",
            format!("{:?}", c.dim()),
            format!("{:?}", noise.dim()),
        ));
    }
    let noisy = &c + noise;
    let out = problem.net.forward(&noisy)?;
    Ok((&c - &out).iter().map(|v| v * v).sum())
}

/// Both loss terms under a fixed noise realization.
pub fn losses_with_noise(
    problem: &ReconstructionProblem,
    noise: &Array2<f64>,
) -> Result<(f64, f64)> {
    Ok((loss_rec(problem)?, loss_cae_with_noise(problem, noise)?))
}

/// Everything one gradient step needs.
#[derive(Debug, Clone)]
pub struct JointGradients {
    pub loss_rec: f64,
    pub loss_cae: f64,
    /// d(L_rec + lambda L_cae)/dX, shaped like the estimate.
    pub grad_x: Image,
    /// d(L_rec + lambda L_cae)/dTheta (the `d_input` field is unused).
    pub grad_theta: Gradients,
    /// The pipeline output computed along the way.
    pub recon: Image,
}

/// Exact joint gradient of `L_rec + lambda * L_cae` with respect to the
/// image and all network parameters, under a fixed assignment and noise
/// realization.
pub fn gradients_with_noise(
    problem: &ReconstructionProblem,
    noise: &Array2<f64>,
) -> Result<JointGradients> {
    let grid = &problem.grid;
    let net = &problem.net;
    let lambda = problem.lambda;

    // Data-fit term: Y <- F(aggregate(decanon(A(canon(extract(X)))))).
    let c = problem.canonical_patches()?;
    let acts_rec = net.forward_trace(&c)?;
    let ae_out = &acts_rec[acts_rec.len() - 1];
    let dec = problem.decanonicalize(ae_out)?;
    let recon = patch::aggregate(&dec, grid)?;
    let f_recon = problem.op.forward(&recon)?;

    let mut residual = problem.observed.clone();
    for (r, v) in residual.data_mut().iter_mut().zip(f_recon.data()) {
        *r -= v;
    }
    let lrec: f64 = residual.data().iter().map(|v| v * v).sum();

    // dL/d(recon) = -2 F^T(residual); through the averaging aggregation the
    // upstream divides by the overlap counts before re-extraction.
    let mut g_recon = problem.op.adjoint(&residual, problem.estimate.shape())?;
    for (g, d) in g_recon.data_mut().iter_mut().zip(problem.counts.data()) {
        *g *= -2.0 / d;
    }
    let g_dec = patch::extract(&g_recon, grid)?;
    let g_ae_out = if problem.bypass_canon {
        g_dec
    } else {
        // decanonicalize applies P^T per column; its adjoint applies P.
        canon::canonicalize(&g_dec, &problem.assignment, &problem.actions)?
    };
    let grads_rec = net.backward_from(&acts_rec, &g_ae_out);
    let g_c_rec = &grads_rec.d_input;

    // Auto-encoding term: targets c, inputs c + noise.
    let noisy = &c + noise;
    let acts_cae = net.forward_trace(&noisy)?;
    let cae_out = &acts_cae[acts_cae.len() - 1];
    let s = &c - cae_out;
    let lcae: f64 = s.iter().map(|v| v * v).sum();
    let grads_cae = net.backward_from(&acts_cae, &(&s * -2.0));
    // c appears both as target (direct 2s) and through the noisy input.
    let g_c_cae = &(&s * 2.0) + &grads_cae.d_input;

    // Back through canonicalization and extraction to the image.
    let g_c_total = g_c_rec + &(&g_c_cae * lambda);
    let g_m = problem.decanonicalize(&g_c_total)?;
    let grad_x = patch::extract_adjoint(&g_m, grid)?;

    let mut grad_theta = grads_rec;
    grad_theta.add_scaled(&grads_cae, lambda);

    Ok(JointGradients {
        loss_rec: lrec,
        loss_cae: lcae,
        grad_x,
        grad_theta,
        recon,
    })
}

/// Multiplicative lambda controller steering the raw loss mix toward the
/// target ratio.
///
/// With `ratio = L_cae / (L_rec + L_cae)`, the weight is scaled by
/// `exp(rate * (ratio - target))` and clipped to the configured bounds: an
/// over-target auto-encoding share raises lambda (pressing that term down),
/// an under-target share lowers it. Holding a ratio fixed on one side of
/// the target therefore walks lambda geometrically to the matching bound.
pub fn adjust_lambda(lambda: f64, loss_rec: f64, loss_cae: f64, config: &TrainConfig) -> f64 {
    let total = loss_rec + loss_cae;
    if !total.is_finite() || total <= 0.0 {
        return lambda;
    }
    let ratio = loss_cae / total;
    let next = lambda * (config.lambda_rate * (ratio - config.lambda_target)).exp();
    next.clamp(config.lambda_min, config.lambda_max)
}

/// Drives a [`ReconstructionProblem`] through the alternating scheme,
/// keeping the two Adam optimizers and the trace.
#[derive(Debug, Clone)]
pub struct Solver {
    pub problem: ReconstructionProblem,
    pub config: TrainConfig,
    theta_opt: AdamState,
    x_opt: VecAdam,
    iter: usize,
    plateau: usize,
    trace: TrainTrace,
}

impl Solver {
    pub fn new(problem: ReconstructionProblem, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let theta_opt = AdamState::new(&problem.net, AdamParams::with_lr(config.lr_theta));
        let x_opt = VecAdam::new(problem.estimate.len(), AdamParams::with_lr(config.lr_x));
        Ok(Self {
            problem,
            config,
            theta_opt,
            x_opt,
            iter: 0,
            plateau: 0,
            trace: TrainTrace::default(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    /// One simultaneous Adam step on (X, Theta) against
    /// `L_rec + lambda * L_cae`. The assignment is held fixed; fresh noise
    /// is drawn for the auto-encoding term. Returns the trace record of the
    /// state the gradients were evaluated at.
    pub fn step(&mut self, reference: Option<&Image>) -> Result<TraceRecord> {
        let noise = self.problem.draw_noise();
        let jg = gradients_with_noise(&self.problem, &noise)?;
        if !jg.loss_rec.is_finite() || !jg.loss_cae.is_finite() {
            return Err(Error::NonFinite(format!(
                "iteration {}: loss_rec={} loss_cae={}",
                self.iter, jg.loss_rec, jg.loss_cae
            )));
        }
        let psnr = match reference {
            Some(r) => Some(metrics::psnr(r, &jg.recon)?),
            None => None,
        };
        self.x_opt
            .step(self.problem.estimate.data_mut(), jg.grad_x.data());
        adam_step(&mut self.problem.net, &mut self.theta_opt, &jg.grad_theta);
        let record = TraceRecord {
            iter: self.iter,
            loss_rec: jg.loss_rec,
            loss_cae: jg.loss_cae,
            lambda: self.problem.lambda,
            psnr,
        };
        self.trace.records.push(record.clone());
        self.iter += 1;
        Ok(record)
    }

    /// Full alternating loop: refresh labels every `assign_period`
    /// iterations (starting at iteration 0), gradient-step, steer lambda,
    /// and optionally early-stop once the data fit reaches the known noise
    /// energy. Returns the composed pipeline output of the final state.
    pub fn run(&mut self, reference: Option<&Image>) -> Result<Image> {
        for _ in 0..self.config.max_iters {
            if self.iter.is_multiple_of(self.config.assign_period) {
                self.problem.refresh_assignment()?;
            }
            let record = self.step(reference)?;
            self.problem.lambda = adjust_lambda(
                self.problem.lambda,
                record.loss_rec,
                record.loss_cae,
                &self.config,
            );
            if self.config.early_stop {
                if let Some(energy) = self.config.noise_energy {
                    if record.loss_rec <= energy {
                        self.plateau += 1;
                    } else {
                        self.plateau = 0;
                    }
                    if self.plateau >= self.config.patience {
                        break;
                    }
                }
            }
        }
        reconstruct(&self.problem)
    }

    /// Serialize the complete run state (estimate, weights, labels, lambda,
    /// optimizer moments, noise stream position) so a run can resume
    /// bit-exactly.
    pub fn save_state(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(b"MMQSSLV1")?;
        let (h, wd, c) = self.problem.estimate.shape();
        for v in [h as u64, wd as u64, c as u64, self.iter as u64, self.plateau as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.problem.lambda.to_le_bytes())?;
        for v in self.problem.estimate.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        self.problem.net.write_to(&mut w)?;
        w.write_all(&(self.problem.assignment.len() as u64).to_le_bytes())?;
        w.write_all(self.problem.assignment.labels())?;
        let (m, v, step) = self.x_opt.raw_state();
        w.write_all(&step.to_le_bytes())?;
        for val in m.iter().chain(v.iter()) {
            w.write_all(&val.to_le_bytes())?;
        }
        self.theta_opt.write_to(&mut w)?;
        self.problem.sampler.write_to(&mut w)?;
        Ok(())
    }

    /// Restore the state written by [`Solver::save_state`] into a solver
    /// built over the same observation, operator, and geometry.
    pub fn load_state(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"MMQSSLV1" {
            return Err(Error::BadFormat("not a solver checkpoint".into()));
        }
        let h = read_u64(&mut r)? as usize;
        let wd = read_u64(&mut r)? as usize;
        let c = read_u64(&mut r)? as usize;
        if (h, wd, c) != self.problem.estimate.shape() {
            return Err(Error::shape(
                "Solver::load_state",
                format!("{:?}", self.problem.estimate.shape()),
                format!("{:?}", (h, wd, c)),
            ));
        }
        self.iter = read_u64(&mut r)? as usize;
        self.plateau = read_u64(&mut r)? as usize;
        self.problem.lambda = read_f64(&mut r)?;
        for v in self.problem.estimate.data_mut() {
            *v = read_f64(&mut r)?;
        }
        self.problem.net = Mlp::read_from(&mut r)?;
        let n_labels = read_u64(&mut r)? as usize;
        if n_labels != self.problem.grid.patch_count() {
            return Err(Error::BadFormat("label count mismatch".into()));
        }
        let mut labels = vec![0u8; n_labels];
        r.read_exact(&mut labels)?;
        self.problem.assignment =
            ActionAssignment::from_labels(labels, self.problem.actions.len())?;
        let step = read_u64(&mut r)?;
        let len = self.problem.estimate.len();
        let mut m = vec![0.0; len];
        let mut v = vec![0.0; len];
        for val in m.iter_mut() {
            *val = read_f64(&mut r)?;
        }
        for val in v.iter_mut() {
            *val = read_f64(&mut r)?;
        }
        self.x_opt = VecAdam::from_raw(AdamParams::with_lr(self.config.lr_x), m, v, step);
        self.theta_opt = AdamState::read_from(&mut r, &self.problem.net, self.config.lr_theta)?;
        self.problem.sampler = GaussianSampler::read_from(&mut r)?;
        Ok(())
    }
}

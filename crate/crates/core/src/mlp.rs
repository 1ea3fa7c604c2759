//! Multilayer-perceptron auto-encoder: forward pass, exact reverse-mode
//! gradients, and the Adam optimizer.
//!
//! The network is a fixed chain of dense layers with a leaky-ReLU after
//! every layer except the last (the output layer is linear so
//! reconstructions may leave `[0, 1]` during optimization). Batches are
//! matrices with one column per patch, matching [`crate::patch::PatchMatrix`].

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Default negative slope of the leaky ReLU.
pub const DEFAULT_SLOPE: f64 = 0.2;

/// Fully-connected auto-encoder with tied input/output width.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    slope: f64,
}

/// Parameter gradients (and the gradient with respect to the batch input)
/// produced by a backward pass. Shapes mirror [`Mlp`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Array2<f64>>,
    pub d_biases: Vec<Array1<f64>>,
    pub d_input: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp, batch_cols: usize) -> Self {
        Self {
            d_weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            d_biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            d_input: Array2::zeros((net.input_dim(), batch_cols)),
        }
    }

    /// `self += scale * other` over all parameter gradients and the input
    /// gradient.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            a.scaled_add(scale, b);
        }
        self.d_input.scaled_add(scale, &other.d_input);
    }
}

impl Mlp {
    /// He-style uniform initialization with a fixed seed; biases start at
    /// zero. `dims` is the full width chain and must begin and end with the
    /// same value (the patch dimension).
    pub fn new(dims: &[usize], slope: f64, seed: u64) -> Result<Self> {
        Self::validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                (rng.random::<f64>() * 2.0 - 1.0) * limit
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            slope,
        })
    }

    /// All-zero parameters (tests and fixtures).
    pub fn zeros(dims: &[usize], slope: f64) -> Result<Self> {
        let mut net = Self::new(dims, slope, 0)?;
        for w in &mut net.weights {
            w.fill(0.0);
        }
        Ok(net)
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "mlp needs at least one layer (two dims)".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("mlp layer width cannot be 0".into()));
        }
        if dims[0] != dims[dims.len() - 1] {
            return Err(Error::InvalidConfig(format!(
                "auto-encoder output dim {} must equal input dim {}",
                dims[dims.len() - 1],
                dims[0]
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    /// Width of the narrowest interior layer (the manifold dimension).
    pub fn bottleneck_dim(&self) -> usize {
        self.dims[self.bottleneck_layer()]
    }

    /// Index into `dims` of the first narrowest interior layer.
    fn bottleneck_layer(&self) -> usize {
        let interior = &self.dims[1..self.dims.len() - 1];
        match interior.iter().enumerate().min_by_key(|(_, &d)| d) {
            Some((i, _)) => i + 1,
            None => 0,
        }
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    fn check_batch(&self, batch: &Array2<f64>, context: &'static str) -> Result<()> {
        if batch.nrows() != self.input_dim() {
            return Err(Error::shape(context, self.input_dim(), batch.nrows()));
        }
        Ok(())
    }

    fn lrelu(&self, z: &mut Array2<f64>) {
        let s = self.slope;
        z.mapv_inplace(|v| if v > 0.0 { v } else { s * v });
    }

    /// Column-wise application of the network.
    pub fn forward(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_batch(batch, "Mlp::forward")?;
        let mut a = batch.to_owned();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let mut z = self.weights[l].dot(&a);
            z += &self.biases[l].view().insert_axis(Axis(1));
            if l != last {
                self.lrelu(&mut z);
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that keeps every post-activation (the input is entry 0),
    /// for use by [`Mlp::backward_from`].
    pub fn forward_trace(&self, batch: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_batch(batch, "Mlp::forward_trace")?;
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(batch.to_owned());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let mut z = self.weights[l].dot(&acts[l]);
            z += &self.biases[l].view().insert_axis(Axis(1));
            if l != last {
                self.lrelu(&mut z);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Reverse pass from an arbitrary upstream gradient at the output.
    ///
    /// `acts` must come from [`Mlp::forward_trace`] on the same batch.
    /// Returns exact gradients for every weight, bias, and the input.
    pub fn backward_from(&self, acts: &[Array2<f64>], out_grad: &Array2<f64>) -> Gradients {
        let layers = self.num_layers();
        debug_assert_eq!(acts.len(), layers + 1);
        let slope = self.slope;
        let mut d_weights = vec![Array2::zeros((0, 0)); layers];
        let mut d_biases = vec![Array1::zeros(0); layers];
        let mut g = out_grad.to_owned();
        for l in (0..layers).rev() {
            if l != layers - 1 {
                // Hidden activations preserve sign, so the leaky-ReLU
                // derivative can be read off the stored activation.
                g.zip_mut_with(&acts[l + 1], |gv, &av| {
                    if av <= 0.0 {
                        *gv *= slope;
                    }
                });
            }
            d_weights[l] = g.dot(&acts[l].t());
            d_biases[l] = g.sum_axis(Axis(1));
            g = self.weights[l].t().dot(&g);
        }
        Gradients {
            d_weights,
            d_biases,
            d_input: g,
        }
    }

    /// Squared-error reconstruction loss and its exact gradients.
    ///
    /// `loss = sum_t || target_t - forward(in)_t ||^2`.
    pub fn backward(
        &self,
        batch_in: &Array2<f64>,
        batch_target: &Array2<f64>,
    ) -> Result<(f64, Gradients)> {
        self.check_batch(batch_in, "Mlp::backward")?;
        if batch_target.dim() != batch_in.dim() {
            return Err(Error::shape(
                "Mlp::backward target",
                format!("{:?}", batch_in.dim()),
                format!("{:?}", batch_target.dim()),
            ));
        }
        let acts = self.forward_trace(batch_in)?;
        let out = &acts[acts.len() - 1];
        let diff = out - batch_target;
        let loss = diff.iter().map(|v| v * v).sum();
        let out_grad = &diff * 2.0;
        Ok((loss, self.backward_from(&acts, &out_grad)))
    }

    /// Activations at the bottleneck layer, one column per input column.
    pub fn encode(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_batch(batch, "Mlp::encode")?;
        let stop = self.bottleneck_layer();
        let mut a = batch.to_owned();
        let last = self.num_layers() - 1;
        for l in 0..stop {
            let mut z = self.weights[l].dot(&a);
            z += &self.biases[l].view().insert_axis(Axis(1));
            if l != last {
                self.lrelu(&mut z);
            }
            a = z;
        }
        Ok(a)
    }

    /// Write parameters in the flat checkpoint format: a magic tag, the
    /// width chain, the activation slope, then row-major weight and bias
    /// dumps per layer, all little-endian f64.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
    }

    pub(crate) fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"MMQSMLP1")?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&self.slope.to_le_bytes())?;
        for l in 0..self.num_layers() {
            for v in self.weights[l].iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in self.biases[l].iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        Self::read_from(&mut r)
    }

    pub(crate) fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"MMQSMLP1" {
            return Err(Error::BadFormat("not a weight checkpoint".into()));
        }
        let n = read_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::BadFormat(format!("implausible layer count {n}")));
        }
        let mut dims = Vec::with_capacity(n);
        for _ in 0..n {
            dims.push(read_u64(r)? as usize);
        }
        Self::validate_dims(&dims)?;
        let slope = read_f64(r)?;
        let mut weights = Vec::with_capacity(n - 1);
        let mut biases = Vec::with_capacity(n - 1);
        for l in 0..n - 1 {
            let (rows, cols) = (dims[l + 1], dims[l]);
            let mut wv = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                wv.push(read_f64(r)?);
            }
            let w = Array2::from_shape_vec((rows, cols), wv)
                .map_err(|e| Error::BadFormat(e.to_string()))?;
            let mut bv = Vec::with_capacity(rows);
            for _ in 0..rows {
                bv.push(read_f64(r)?);
            }
            weights.push(w);
            biases.push(Array1::from_vec(bv));
        }
        Ok(Self {
            dims,
            weights,
            biases,
            slope,
        })
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

#[inline]
fn adam_update(params: AdamParams, t: u64, p: &mut f64, g: f64, m: &mut f64, v: &mut f64) {
    *m = params.beta1 * *m + (1.0 - params.beta1) * g;
    *v = params.beta2 * *v + (1.0 - params.beta2) * g * g;
    let m_hat = *m / (1.0 - params.beta1.powi(t as i32));
    let v_hat = *v / (1.0 - params.beta2.powi(t as i32));
    *p -= params.lr * m_hat / (v_hat.sqrt() + params.eps);
}

/// Adam moments for every parameter of an [`Mlp`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub params: AdamParams,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, params: AdamParams) -> Self {
        Self {
            params,
            m_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.step.to_le_bytes())?;
        for arr in self.m_w.iter().chain(self.v_w.iter()) {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for arr in self.m_b.iter().chain(self.v_b.iter()) {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub(crate) fn read_from(r: &mut impl Read, net: &Mlp, lr: f64) -> Result<Self> {
        let mut state = Self::new(net, AdamParams::with_lr(lr));
        state.step = read_u64(r)?;
        for l in 0..net.weights.len() {
            for v in state.m_w[l].iter_mut() {
                *v = read_f64(r)?;
            }
        }
        for l in 0..net.weights.len() {
            for v in state.v_w[l].iter_mut() {
                *v = read_f64(r)?;
            }
        }
        for l in 0..net.biases.len() {
            for v in state.m_b[l].iter_mut() {
                *v = read_f64(r)?;
            }
        }
        for l in 0..net.biases.len() {
            for v in state.v_b[l].iter_mut() {
                *v = read_f64(r)?;
            }
        }
        Ok(state)
    }
}

/// One Adam update of the network parameters (bias-corrected moments,
/// step counter incremented).
pub fn adam_step(net: &mut Mlp, state: &mut AdamState, grads: &Gradients) {
    state.step += 1;
    let (t, p) = (state.step, state.params);
    for l in 0..net.weights.len() {
        for (((w, &g), m), v) in net.weights[l]
            .iter_mut()
            .zip(grads.d_weights[l].iter())
            .zip(state.m_w[l].iter_mut())
            .zip(state.v_w[l].iter_mut())
        {
            adam_update(p, t, w, g, m, v);
        }
        for (((b, &g), m), v) in net.biases[l]
            .iter_mut()
            .zip(grads.d_biases[l].iter())
            .zip(state.m_b[l].iter_mut())
            .zip(state.v_b[l].iter_mut())
        {
            adam_update(p, t, b, g, m, v);
        }
    }
}

/// Adam over a flat parameter vector (used for the image variable).
#[derive(Debug, Clone)]
pub struct VecAdam {
    pub params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl VecAdam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Self {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, values: &mut [f64], grads: &[f64]) {
        assert_eq!(values.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let (t, p) = (self.step, self.params);
        for ((val, &g), (m, v)) in values
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            adam_update(p, t, val, g, m, v);
        }
    }

    pub(crate) fn raw_state(&self) -> (&[f64], &[f64], u64) {
        (&self.m, &self.v, self.step)
    }

    pub(crate) fn from_raw(params: AdamParams, m: Vec<f64>, v: Vec<f64>, step: u64) -> Self {
        Self { params, m, v, step }
    }
}

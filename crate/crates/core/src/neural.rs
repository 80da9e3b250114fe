//! Per-node noise predictor: a small fully connected network over a flat
//! parameter vector, trained with Adam.
//!
//! Hidden layers use SiLU (`z * sigmoid(z)`); the output layer is linear.
//! Weights and biases are initialised uniformly in `±1/sqrt(fan_in)` from a
//! seeded stream. A node model's input row is
//! `[noised value, conditioning values..., t / T]`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng as _;
use thiserror::Error;

use crate::diffusion::NoiseSchedule;
use crate::rng;

pub const DEFAULT_HIDDEN: [usize; 3] = [128, 256, 256];
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

const MODEL_MAGIC: &[u8; 8] = b"BDCMNODE";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer sizes must be positive")]
    EmptyLayer,
    #[error("non-finite input")]
    NonFinite,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("time step {t} outside 1..={steps}")]
    TimeStep { t: usize, steps: usize },
    #[error("node {0} cannot condition on itself")]
    SelfConditioning(usize),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub init_seed: u64,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: &[usize], init_seed: u64) -> Result<Self, NeuralError> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(NeuralError::EmptyLayer);
        }
        Ok(NetSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim: 1,
            init_seed,
        })
    }

    /// `(fan_in, fan_out)` per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Multilayer perceptron; layer `l` stores a row-major `fan_in x fan_out`
/// weight block followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetSpec,
    params: Vec<f64>,
}

impl Mlp {
    pub fn new(spec: NetSpec) -> Self {
        let mut rng = rng::stream(spec.init_seed, &[rng::TAG_INIT]);
        let mut params = Vec::with_capacity(spec.param_count());
        for (fan_in, fan_out) in spec.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Mlp { spec, params }
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self, NeuralError> {
        if params.len() != spec.param_count() {
            return Err(NeuralError::DimensionMismatch {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroes the output layer so the network computes the zero map.
    pub fn zero_output_layer(&mut self) {
        let (fan_in, fan_out) = *self.spec.layer_dims().last().unwrap();
        let len = self.params.len();
        self.params[len - fan_in * fan_out - fan_out..].fill(0.0);
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        let mut off = 0;
        self.spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let start = off;
                off += i * o + o;
                (start, i, o)
            })
            .collect()
    }

    fn weights(&self, start: usize, fan_in: usize, fan_out: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let w = ArrayView2::from_shape((fan_in, fan_out), &self.params[start..start + fan_in * fan_out])
            .expect("layer shape");
        let b = ArrayView1::from(&self.params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out]);
        (w, b)
    }

    /// Forward pass over a batch of input rows, keeping pre-activations for
    /// backprop. Returns (pre-activations per layer, activations per layer
    /// including the input).
    fn forward_trace(&self, inputs: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let offsets = self.layer_offsets();
        let last = offsets.len() - 1;
        let mut pre = Vec::with_capacity(offsets.len());
        let mut acts = vec![inputs.to_owned()];
        for (l, &(start, fan_in, fan_out)) in offsets.iter().enumerate() {
            let (w, b) = self.weights(start, fan_in, fan_out);
            let mut z = acts[l].dot(&w);
            z += &b;
            let a = if l == last { z.clone() } else { z.mapv(silu) };
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }

    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>, NeuralError> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(NeuralError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: inputs.ncols(),
            });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite);
        }
        let offsets = self.layer_offsets();
        let last = offsets.len() - 1;
        let mut a = inputs.to_owned();
        for (l, &(start, fan_in, fan_out)) in offsets.iter().enumerate() {
            let (w, b) = self.weights(start, fan_in, fan_out);
            let mut z = a.dot(&w);
            z += &b;
            if l != last {
                z.mapv_inplace(silu);
            }
            a = z;
        }
        Ok(a)
    }

    /// Mean squared error over all outputs and its exact parameter gradient.
    pub fn mse_and_gradient(
        &self,
        inputs: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
    ) -> Result<(f64, Vec<f64>), NeuralError> {
        if inputs.nrows() == 0 {
            return Err(NeuralError::EmptyBatch);
        }
        if inputs.ncols() != self.spec.input_dim {
            return Err(NeuralError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: inputs.ncols(),
            });
        }
        if targets.dim() != (inputs.nrows(), self.spec.output_dim) {
            return Err(NeuralError::DimensionMismatch {
                expected: inputs.nrows() * self.spec.output_dim,
                got: targets.len(),
            });
        }
        let (pre, acts) = self.forward_trace(inputs);
        let out = acts.last().unwrap();
        let count = out.len() as f64;
        let resid = out - &targets;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / count;

        let mut grad = vec![0.0; self.params.len()];
        let offsets = self.layer_offsets();
        let mut delta = resid * (2.0 / count);
        for l in (0..offsets.len()).rev() {
            let (start, fan_in, fan_out) = offsets[l];
            let (gw, gb) = grad[start..start + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let mut gw = ArrayViewMut2::from_shape((fan_in, fan_out), gw).expect("layer shape");
            general_mat_mul(1.0, &acts[l].t(), &delta, 0.0, &mut gw);
            for (slot, v) in gb.iter_mut().zip(delta.sum_axis(Axis(0))) {
                *slot = v;
            }
            if l > 0 {
                let (w, _) = self.weights(start, fan_in, fan_out);
                let mut back = delta.dot(&w.t());
                back.zip_mut_with(&pre[l - 1], |d, &z| *d *= silu_grad(z));
                delta = back;
            }
        }
        Ok((loss, grad))
    }
}

/// One training example for a node's noise predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x0: f64,
    pub conditioning: Vec<f64>,
    pub t: usize,
    pub noise: f64,
}

/// The noise predictor for one node: the network plus which nodes feed its
/// conditioning inputs, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    node: usize,
    conditioning: Vec<usize>,
    steps: usize,
    net: Mlp,
}

impl NodeModel {
    pub fn new(
        node: usize,
        conditioning: Vec<usize>,
        hidden: &[usize],
        steps: usize,
        init_seed: u64,
    ) -> Result<Self, NeuralError> {
        let spec = NetSpec::new(conditioning.len() + 2, hidden, init_seed)?;
        Self::from_net(node, conditioning, steps, Mlp::new(spec))
    }

    pub fn from_net(node: usize, conditioning: Vec<usize>, steps: usize, net: Mlp) -> Result<Self, NeuralError> {
        if conditioning.contains(&node) {
            return Err(NeuralError::SelfConditioning(node));
        }
        if net.spec().input_dim != conditioning.len() + 2 {
            return Err(NeuralError::DimensionMismatch {
                expected: conditioning.len() + 2,
                got: net.spec().input_dim,
            });
        }
        Ok(NodeModel {
            node,
            conditioning,
            steps,
            net,
        })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn conditioning(&self) -> &[usize] {
        &self.conditioning
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn time_feature(&self, t: usize) -> f64 {
        t as f64 / self.steps as f64
    }

    fn check_step(&self, t: usize) -> Result<(), NeuralError> {
        if t == 0 || t > self.steps {
            Err(NeuralError::TimeStep { t, steps: self.steps })
        } else {
            Ok(())
        }
    }

    fn input_rows(
        &self,
        noised: &[f64],
        conditioning: ArrayView2<'_, f64>,
        t: impl Fn(usize) -> usize,
    ) -> Result<Array2<f64>, NeuralError> {
        let k = self.conditioning.len();
        if conditioning.dim() != (noised.len(), k) {
            return Err(NeuralError::DimensionMismatch {
                expected: noised.len() * k,
                got: conditioning.len(),
            });
        }
        let mut rows = Array2::zeros((noised.len(), k + 2));
        for (r, mut row) in rows.axis_iter_mut(Axis(0)).enumerate() {
            let step = t(r);
            self.check_step(step)?;
            row[0] = noised[r];
            for c in 0..k {
                row[c + 1] = conditioning[(r, c)];
            }
            row[k + 1] = self.time_feature(step);
        }
        Ok(rows)
    }

    /// Predicted noise for one input.
    pub fn forward(&self, noised: f64, conditioning: &[f64], t: usize) -> Result<f64, NeuralError> {
        let cond = ArrayView2::from_shape((1, conditioning.len()), conditioning).map_err(|_| {
            NeuralError::DimensionMismatch {
                expected: self.conditioning.len(),
                got: conditioning.len(),
            }
        })?;
        Ok(self.predict_batch(&[noised], cond, t)?[0])
    }

    /// Predicted noise for a batch of rows sharing the step `t`.
    pub fn predict_batch(
        &self,
        noised: &[f64],
        conditioning: ArrayView2<'_, f64>,
        t: usize,
    ) -> Result<Vec<f64>, NeuralError> {
        let rows = self.input_rows(noised, conditioning, |_| t)?;
        Ok(self.net.forward_batch(rows.view())?.column(0).to_vec())
    }

    /// Denoising loss `mean (noise - eps(sqrt(a_t) x0 + sqrt(1 - a_t) noise, cond, t))^2`
    /// and its gradient, for column-wise batch data.
    pub fn loss_and_gradient_columns(
        &self,
        x0: &[f64],
        conditioning: ArrayView2<'_, f64>,
        steps: &[usize],
        noise: &[f64],
        schedule: &NoiseSchedule,
    ) -> Result<(f64, Vec<f64>), NeuralError> {
        if x0.is_empty() {
            return Err(NeuralError::EmptyBatch);
        }
        if steps.len() != x0.len() || noise.len() != x0.len() {
            return Err(NeuralError::DimensionMismatch {
                expected: x0.len(),
                got: steps.len().min(noise.len()),
            });
        }
        let mut noised = Vec::with_capacity(x0.len());
        for ((&x, &t), &e) in x0.iter().zip(steps).zip(noise) {
            self.check_step(t)?;
            noised.push(
                schedule
                    .noise(x, t, e)
                    .map_err(|_| NeuralError::TimeStep { t, steps: schedule.steps() })?,
            );
        }
        let rows = self.input_rows(&noised, conditioning, |r| steps[r])?;
        let targets = ArrayView2::from_shape((noise.len(), 1), noise).expect("column");
        self.net.mse_and_gradient(rows.view(), targets)
    }

    pub fn loss_and_gradient(
        &self,
        batch: &[TrainingExample],
        schedule: &NoiseSchedule,
    ) -> Result<(f64, Vec<f64>), NeuralError> {
        if batch.is_empty() {
            return Err(NeuralError::EmptyBatch);
        }
        let k = self.conditioning.len();
        let mut cond = Array2::zeros((batch.len(), k));
        for (r, ex) in batch.iter().enumerate() {
            if ex.conditioning.len() != k {
                return Err(NeuralError::DimensionMismatch {
                    expected: k,
                    got: ex.conditioning.len(),
                });
            }
            for (c, v) in ex.conditioning.iter().enumerate() {
                cond[(r, c)] = *v;
            }
        }
        let x0: Vec<f64> = batch.iter().map(|e| e.x0).collect();
        let steps: Vec<usize> = batch.iter().map(|e| e.t).collect();
        let noise: Vec<f64> = batch.iter().map(|e| e.noise).collect();
        self.loss_and_gradient_columns(&x0, cond.view(), &steps, &noise, schedule)
    }

    /// Binary layout, all little-endian:
    ///
    /// ```text
    /// magic "BDCMNODE" | u32 version | u32 node | u32 input_dim | u32 output_dim
    /// | u32 hidden_len | u32 hidden[..] | u32 steps | u32 cond_len | u32 cond[..]
    /// | u64 init_seed | u64 param_count | f64 params[..]
    /// ```
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        let spec = self.net.spec();
        let put = |w: &mut W, v: u32| w.write_all(&v.to_le_bytes());
        w.write_all(MODEL_MAGIC)?;
        put(&mut w, MODEL_VERSION)?;
        put(&mut w, self.node as u32)?;
        put(&mut w, spec.input_dim as u32)?;
        put(&mut w, spec.output_dim as u32)?;
        put(&mut w, spec.hidden.len() as u32)?;
        for &h in &spec.hidden {
            put(&mut w, h as u32)?;
        }
        put(&mut w, self.steps as u32)?;
        put(&mut w, self.conditioning.len() as u32)?;
        for &c in &self.conditioning {
            put(&mut w, c as u32)?;
        }
        w.write_all(&spec.init_seed.to_le_bytes())?;
        w.write_all(&(self.net.params().len() as u64).to_le_bytes())?;
        for p in self.net.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, NeuralError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(NeuralError::Format("bad magic".into()));
        }
        let u32s = |r: &mut R| -> io::Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = u32s(&mut r)?;
        if version != MODEL_VERSION as usize {
            return Err(NeuralError::Format(format!("unsupported version {version}")));
        }
        let node = u32s(&mut r)?;
        let input_dim = u32s(&mut r)?;
        let output_dim = u32s(&mut r)?;
        let hidden_len = u32s(&mut r)?;
        let hidden = (0..hidden_len).map(|_| u32s(&mut r)).collect::<io::Result<Vec<_>>>()?;
        let steps = u32s(&mut r)?;
        let cond_len = u32s(&mut r)?;
        let conditioning = (0..cond_len).map(|_| u32s(&mut r)).collect::<io::Result<Vec<_>>>()?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let init_seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut spec = NetSpec::new(input_dim, &hidden, init_seed)?;
        spec.output_dim = output_dim;
        if count != spec.param_count() {
            return Err(NeuralError::Format(format!(
                "header implies {} parameters, file declares {count}",
                spec.param_count()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            params.push(f64::from_le_bytes(b8));
        }
        Self::from_net(node, conditioning, steps, Mlp::from_params(spec, params)?)
    }

    /// Plain-text `key = value` description of the model.
    pub fn metadata(&self) -> String {
        let spec = self.net.spec();
        let list = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        format!(
            "node = {}\nconditioning = {}\ninput_dim = {}\nhidden = {}\noutput_dim = {}\n\
             activation = silu\ntime_encoding = t/T\nsteps = {}\ninit_seed = {}\nparam_count = {}\n",
            self.node,
            list(&self.conditioning),
            spec.input_dim,
            list(&spec.hidden),
            spec.output_dim,
            self.steps,
            spec.init_seed,
            spec.param_count(),
        )
    }

    /// Writes `<path>` (binary) and `<path>.txt` (metadata sidecar).
    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        std::fs::write(sidecar_path(path), self.metadata())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".txt");
    name.into()
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NeuralError> {
        let n = self.first_moment.len();
        if params.len() != n || grad.len() != n {
            return Err(NeuralError::DimensionMismatch {
                expected: n,
                got: if params.len() != n { params.len() } else { grad.len() },
            });
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..n {
            let g = grad[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Fits `net` to `(inputs, targets)` by minibatch Adam on squared error,
/// reshuffling rows each epoch. Returns the mean loss of each epoch.
pub fn fit_regression(
    net: &mut Mlp,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<Vec<f64>, NeuralError> {
    use rand::seq::SliceRandom;
    let n = inputs.nrows();
    let mut adam = Adam::new(net.params().len(), learning_rate);
    let mut rng = rng::stream(seed, &[rng::TAG_TRAIN]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let y = targets.select(Axis(0), chunk);
            let (loss, grad) = net.mse_and_gradient(x.view(), y.view())?;
            adam.step(net.params_mut(), &grad)?;
            total += loss * chunk.len() as f64;
        }
        history.push(total / n as f64);
    }
    Ok(history)
}

/// Input rows, for convenience in callers holding plain vectors.
pub fn rows_to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let width = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), width), |(r, c)| rows[r][c])
}

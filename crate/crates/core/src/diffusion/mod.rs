//! Noise schedule, deterministic DDIM decoding, and the two causal samplers
//! built on it (parent-conditioned DCM and backdoor-adjusted BDCM).

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::graph::GraphError;
use crate::neural::{NeuralError, NodeModel};
use crate::scm::ScmError;

mod bundle;
mod causal;

pub use causal::{
    sample_bdcm, sample_bdcm_at, sample_dcm, train_bdcm, train_dcm, NodeRole, SamplerMode,
    TrainConfig, TrainedCausalModel,
};

pub const DEFAULT_STEPS: usize = 100;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("time step {t} outside 1..={steps}")]
    TimeStep { t: usize, steps: usize },
    #[error("decoding produced a non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("no observed adjustment set exists for cause {cause} and node {node}")]
    NoAdjustmentSet { cause: usize, node: usize },
    #[error("node {0} is unobserved and cannot be intervened on or conditioned on")]
    Unobserved(usize),
    #[error("model was trained as {trained}, not {requested}")]
    WrongMode {
        trained: &'static str,
        requested: &'static str,
    },
    #[error("model was trained for an intervention on node {trained}, not {requested}")]
    QueryMismatch { trained: usize, requested: usize },
    #[error("training config asks for {config} steps but the schedule has {schedule}")]
    ScheduleMismatch { config: usize, schedule: usize },
    #[error("data has {data} columns but the graph has {graph} nodes")]
    Width { data: usize, graph: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("malformed model bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Linear `beta` schedule from `1e-4` to `0.1` and its cumulative products
/// `alpha_t = prod_{i<=t} (1 - beta_i)`, with `alpha_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
}

pub fn make_schedule(steps: usize) -> Result<NoiseSchedule, DiffusionError> {
    if steps < 2 {
        return Err(DiffusionError::TooFewSteps(steps));
    }
    let beta: Vec<f64> = (1..=steps)
        .map(|t| (BETA_END - BETA_START) * (t - 1) as f64 / (steps - 1) as f64 + BETA_START)
        .collect();
    let mut alpha = Vec::with_capacity(steps + 1);
    alpha.push(1.0);
    for b in &beta {
        alpha.push(alpha.last().unwrap() * (1.0 - b));
    }
    Ok(NoiseSchedule { beta, alpha })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `alpha_t` for `t` in `0..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// `sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps`.
    pub fn noise(&self, x0: f64, t: usize, eps: f64) -> Result<f64, DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::TimeStep { t, steps: self.steps() });
        }
        let a = self.alpha[t];
        Ok(a.sqrt() * x0 + (1.0 - a).sqrt() * eps)
    }
}

pub fn forward_noise(x0: f64, t: usize, eps: f64, schedule: &NoiseSchedule) -> Result<f64, DiffusionError> {
    schedule.noise(x0, t, eps)
}

/// Anything that predicts the added noise for a batch of noised values.
pub trait NoisePredictor {
    fn conditioning_width(&self) -> usize;

    fn predict(
        &self,
        noised: &[f64],
        conditioning: ArrayView2<'_, f64>,
        t: usize,
    ) -> Result<Vec<f64>, NeuralError>;
}

impl NoisePredictor for NodeModel {
    fn conditioning_width(&self) -> usize {
        self.conditioning().len()
    }

    fn predict(
        &self,
        noised: &[f64],
        conditioning: ArrayView2<'_, f64>,
        t: usize,
    ) -> Result<Vec<f64>, NeuralError> {
        self.predict_batch(noised, conditioning, t)
    }
}

/// Runs the DDIM update from `t = T` down to `t = 1` for a batch of
/// starting points `z`, returning the decoded values.
pub fn decode_batch<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: &[f64],
    conditioning: ArrayView2<'_, f64>,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    let mut x = z.to_vec();
    for t in (1..=schedule.steps()).rev() {
        let eps = predictor.predict(&x, conditioning, t)?;
        let (a_t, a_prev) = (schedule.alpha(t), schedule.alpha(t - 1));
        let keep = (a_prev / a_t).sqrt();
        let eps_coef = (a_prev * (1.0 - a_t) / a_t).sqrt() - (1.0 - a_prev).sqrt();
        for (xi, e) in x.iter_mut().zip(eps) {
            *xi = keep * *xi - e * eps_coef;
            if !xi.is_finite() {
                return Err(DiffusionError::NonFinite { step: t });
            }
        }
    }
    Ok(x)
}

/// Decodes a single value.
pub fn decode<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: f64,
    conditioning: &[f64],
    schedule: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    let cond = Array2::from_shape_vec((1, conditioning.len()), conditioning.to_vec()).map_err(|_| {
        NeuralError::DimensionMismatch {
            expected: predictor.conditioning_width(),
            got: conditioning.len(),
        }
    })?;
    Ok(decode_batch(predictor, &[z], cond.view(), schedule)?[0])
}

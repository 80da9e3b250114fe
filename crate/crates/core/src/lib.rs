//! Diffusion-based interventional sampling on structural causal models.
//!
//! Two samplers are provided. The parent-conditioned diffusion causal model
//! (DCM) trains one DDIM noise predictor per node, conditioned on the node's
//! observed parents. The backdoor variant (BDCM) instead conditions each
//! decoder on a backdoor adjustment set for the intervened node, which keeps
//! interventional samples unbiased when confounders are unobserved.
//!
//! Modules:
//! - [`graph`]: DAGs, paths, blocking, backdoor criterion, adjustment sets.
//! - [`scm`]: structural causal models, do-surgery and ground-truth sampling.
//! - [`neural`]: the per-node MLP noise predictor and its Adam optimizer.
//! - [`diffusion`]: noise schedule, DDIM decoding, DCM/BDCM training and sampling.
//! - [`metrics`]: kernel maximum mean discrepancy.
//! - [`harness`]: the synthetic benchmark runner behind the CLI.

pub mod diffusion;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod scm;

mod rng;

pub use diffusion::{
    NoiseSchedule, SamplerMode, TrainConfig, TrainedCausalModel,
};
pub use graph::{Dag, NodeSet, Path, Step, TopologicalOrder};
pub use metrics::{mmd, Bandwidth, KernelSpec};
pub use neural::{NetSpec, NodeModel};
pub use scm::{BuiltinScm, Intervention, SampleMatrix, Scm};

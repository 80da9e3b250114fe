//! Structural causal models: observational sampling, do-surgery, the
//! ground-truth interventional oracle and the built-in benchmark models.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::graph::{Dag, GraphError, TopologicalOrder};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScmError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("expected {expected} equations or noise specs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("sample count must be positive")]
    NoSamples,
    #[error("target node {0} is the intervened node")]
    TargetIsIntervened(usize),
    #[error("column {0} is unobserved")]
    MaskedColumn(usize),
    #[error("unknown SCM {0:?}; expected one of m1_simple, m1_complex, m2_simple, m2_complex")]
    UnknownScm(String),
}

/// A structural function `f_i(parents, u_i)`. Parent values arrive in
/// ascending parent-label order.
pub type StructuralFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Equation {
    Structural(StructuralFn),
    Constant(f64),
}

impl fmt::Debug for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Equation::Structural(_) => f.write_str("Structural(..)"),
            Equation::Constant(v) => write!(f, "Constant({v})"),
        }
    }
}

/// Exogenous noise for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    StandardNormal,
    /// Degenerate noise fixed at a value; used for hand-checkable oracles.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intervention {
    pub node: usize,
    pub value: f64,
}

impl Intervention {
    pub fn new(node: usize, value: f64) -> Self {
        Intervention { node, value }
    }
}

#[derive(Debug, Clone)]
pub struct Scm {
    dag: Dag,
    order: TopologicalOrder,
    equations: Vec<Equation>,
    noise: Vec<NoiseSpec>,
}

impl Scm {
    /// Builds an SCM with standard normal noise on every node.
    pub fn new(dag: Dag, equations: Vec<StructuralFn>) -> Result<Self, ScmError> {
        if equations.len() != dag.node_count() {
            return Err(ScmError::Arity {
                expected: dag.node_count(),
                got: equations.len(),
            });
        }
        let noise = vec![NoiseSpec::StandardNormal; dag.node_count()];
        Ok(Scm {
            order: dag.topological_order(),
            dag,
            equations: equations.into_iter().map(Equation::Structural).collect(),
            noise,
        })
    }

    pub fn with_noise(mut self, noise: Vec<NoiseSpec>) -> Result<Self, ScmError> {
        if noise.len() != self.dag.node_count() {
            return Err(ScmError::Arity {
                expected: self.dag.node_count(),
                got: noise.len(),
            });
        }
        self.noise = noise;
        Ok(self)
    }

    /// Degenerate noise fixed at `values[i]` for node `i + 1`.
    pub fn with_fixed_noise(self, values: &[f64]) -> Result<Self, ScmError> {
        self.with_noise(values.iter().map(|&v| NoiseSpec::Constant(v)).collect())
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn node_count(&self) -> usize {
        self.dag.node_count()
    }

    pub fn equation(&self, node: usize) -> &Equation {
        &self.equations[node - 1]
    }

    /// Evaluates `f_node(parent_values, u)` directly.
    pub fn evaluate(&self, node: usize, parent_values: &[f64], u: f64) -> f64 {
        match &self.equations[node - 1] {
            Equation::Structural(f) => f(parent_values, u),
            Equation::Constant(v) => *v,
        }
    }

    /// Fills one row given its exogenous draws.
    pub fn solve(&self, noise: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.node_count()];
        let mut pa = Vec::new();
        for node in self.order.iter() {
            pa.clear();
            pa.extend(self.dag.parents(node).iter().map(|&p| x[p - 1]));
            x[node - 1] = self.evaluate(node, &pa, noise[node - 1]);
        }
        x
    }

    fn draw_noise(&self, rng: &mut rng::Rng, out: &mut [f64]) {
        for (slot, spec) in out.iter_mut().zip(&self.noise) {
            // always consume a draw so equal seeds share noise across surgeries
            let z: f64 = rng.sample(StandardNormal);
            *slot = match spec {
                NoiseSpec::StandardNormal => z,
                NoiseSpec::Constant(v) => *v,
            };
        }
    }

    fn simulate(&self, n: usize, seed: u64) -> Result<Array2<f64>, ScmError> {
        if n == 0 {
            return Err(ScmError::NoSamples);
        }
        let d = self.node_count();
        let mut rng = rng::stream(seed, &[]);
        let mut data = Array2::zeros((n, d));
        let mut u = vec![0.0; d];
        for mut row in data.axis_iter_mut(Axis(0)) {
            self.draw_noise(&mut rng, &mut u);
            for (slot, v) in row.iter_mut().zip(self.solve(&u)) {
                *slot = v;
            }
        }
        Ok(data)
    }
}

/// Draws `n` i.i.d. rows; the observability mask comes from the DAG.
pub fn sample_observational(scm: &Scm, n: usize, seed: u64) -> Result<SampleMatrix, ScmError> {
    let data = scm.simulate(n, seed)?;
    Ok(SampleMatrix::new(data, scm.dag.observed_mask().to_vec()))
}

/// Graph surgery: removes the edges into `iv.node` and clamps its equation.
pub fn apply_do(scm: &Scm, iv: Intervention) -> Result<Scm, ScmError> {
    scm.dag.check_node(iv.node)?;
    let mut out = scm.clone();
    out.dag = scm.dag.without_incoming(iv.node);
    out.order = out.dag.topological_order();
    out.equations[iv.node - 1] = Equation::Constant(iv.value);
    Ok(out)
}

/// Ground-truth draws of `target` under `do(iv)`.
pub fn sample_interventional(
    scm: &Scm,
    iv: Intervention,
    target: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, ScmError> {
    scm.dag.check_node(target)?;
    if target == iv.node {
        return Err(ScmError::TargetIsIntervened(target));
    }
    let data = apply_do(scm, iv)?.simulate(n, seed)?;
    Ok(data.column(target - 1).to_vec())
}

/// Monte-Carlo `E[X_outcome | do(cause = x)] - E[X_outcome | do(cause = 0)]`
/// with common random numbers across both arms.
pub fn ate(
    scm: &Scm,
    cause: usize,
    outcome: usize,
    x_value: f64,
    n: usize,
    seed: u64,
) -> Result<f64, ScmError> {
    if cause == outcome {
        return Err(ScmError::TargetIsIntervened(outcome));
    }
    let treated = sample_interventional(scm, Intervention::new(cause, x_value), outcome, n, seed)?;
    let control = sample_interventional(scm, Intervention::new(cause, 0.0), outcome, n, seed)?;
    Ok(mean(&treated) - mean(&control))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub(crate) fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// z-score transform of one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnTransform {
    pub mean: f64,
    pub std: f64,
}

impl ColumnTransform {
    pub fn fit(xs: &[f64]) -> Self {
        let std = std_dev(xs);
        ColumnTransform {
            mean: mean(xs),
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-column read counters; reads of masked columns are refused and
/// tallied separately.
#[derive(Debug, Default)]
pub struct AccessLog {
    reads: Vec<AtomicUsize>,
    refused: AtomicUsize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessCounts {
    /// Successful reads per column (index `node - 1`).
    pub reads: Vec<usize>,
    /// Attempted reads of masked columns.
    pub refused: usize,
}

/// An `n x d` sample matrix with an observability mask. Consumers read
/// columns through [`SampleMatrix::column`], which refuses masked columns.
#[derive(Debug)]
pub struct SampleMatrix {
    data: Array2<f64>,
    observed: Vec<bool>,
    normalization: Vec<Option<ColumnTransform>>,
    log: Arc<AccessLog>,
}

impl Clone for SampleMatrix {
    fn clone(&self) -> Self {
        SampleMatrix::new(self.data.clone(), self.observed.clone())
            .with_normalization(self.normalization.clone())
    }
}

impl SampleMatrix {
    pub fn new(data: Array2<f64>, observed: Vec<bool>) -> Self {
        assert_eq!(data.ncols(), observed.len(), "mask width must match data");
        let d = observed.len();
        SampleMatrix {
            data,
            normalization: vec![None; d],
            log: Arc::new(AccessLog {
                reads: (0..d).map(|_| AtomicUsize::new(0)).collect(),
                refused: AtomicUsize::new(0),
            }),
            observed,
        }
    }

    pub(crate) fn with_normalization(mut self, normalization: Vec<Option<ColumnTransform>>) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn is_observed(&self, node: usize) -> bool {
        self.observed.get(node.wrapping_sub(1)).copied().unwrap_or(false)
    }

    pub fn normalization(&self) -> &[Option<ColumnTransform>] {
        &self.normalization
    }

    /// Column for `node` (1-based). Masked columns are an error.
    pub fn column(&self, node: usize) -> Result<ArrayView1<'_, f64>, ScmError> {
        if node == 0 || node > self.ncols() {
            return Err(ScmError::Graph(GraphError::NodeOutOfRange {
                node,
                node_count: self.ncols(),
            }));
        }
        if !self.observed[node - 1] {
            self.log.refused.fetch_add(1, Ordering::Relaxed);
            return Err(ScmError::MaskedColumn(node));
        }
        self.log.reads[node - 1].fetch_add(1, Ordering::Relaxed);
        Ok(self.data.column(node - 1))
    }

    /// Hides additional columns.
    pub fn mask(mut self, nodes: &[usize]) -> Self {
        for &n in nodes {
            self.observed[n - 1] = false;
        }
        self
    }

    /// z-scores every observed column and records the transforms. Masked
    /// columns are not carried over (they become NaN).
    pub fn normalize(&self) -> Result<SampleMatrix, ScmError> {
        let mut data = Array2::from_elem(self.data.dim(), f64::NAN);
        let mut transforms = vec![None; self.ncols()];
        for node in 1..=self.ncols() {
            if !self.observed[node - 1] {
                continue;
            }
            let col = self.column(node)?;
            let xs = col.to_vec();
            let tr = ColumnTransform::fit(&xs);
            for (slot, x) in data.column_mut(node - 1).iter_mut().zip(xs) {
                *slot = tr.apply(x);
            }
            transforms[node - 1] = Some(tr);
        }
        Ok(SampleMatrix::new(data, self.observed.clone()).with_normalization(transforms))
    }

    pub fn access_counts(&self) -> AccessCounts {
        AccessCounts {
            reads: self.log.reads.iter().map(|r| r.load(Ordering::Relaxed)).collect(),
            refused: self.log.refused.load(Ordering::Relaxed),
        }
    }

    /// Total reads of columns that are masked in this matrix, including
    /// refused attempts.
    pub fn masked_reads(&self) -> usize {
        let counts = self.access_counts();
        counts.refused
            + counts
                .reads
                .iter()
                .zip(&self.observed)
                .filter(|(_, &obs)| !obs)
                .map(|(r, _)| r)
                .sum::<usize>()
    }

    /// Writes comma-separated values: an `# unobserved:` comment line, a
    /// header `X1,...,Xd`, then one row per sample. Masked cells are `NA`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let hidden: Vec<String> = (1..=self.ncols())
            .filter(|&n| !self.observed[n - 1])
            .map(|n| n.to_string())
            .collect();
        writeln!(out, "# unobserved: {}", hidden.join(" "))?;
        let header: Vec<String> = (1..=self.ncols()).map(|n| format!("X{n}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in self.data.axis_iter(Axis(0)) {
            let cells: Vec<String> = row
                .iter()
                .zip(&self.observed)
                .map(|(v, &obs)| if obs { v.to_string() } else { "NA".into() })
                .collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// The four benchmark models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinScm {
    M1Simple,
    M1Complex,
    M2Simple,
    M2Complex,
}

impl BuiltinScm {
    pub const ALL: [BuiltinScm; 4] = [
        BuiltinScm::M1Simple,
        BuiltinScm::M1Complex,
        BuiltinScm::M2Simple,
        BuiltinScm::M2Complex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinScm::M1Simple => "m1_simple",
            BuiltinScm::M1Complex => "m1_complex",
            BuiltinScm::M2Simple => "m2_simple",
            BuiltinScm::M2Complex => "m2_complex",
        }
    }

    /// `(cause, outcome)` of the benchmark query.
    pub fn query(self) -> (usize, usize) {
        match self {
            BuiltinScm::M1Simple | BuiltinScm::M1Complex => (2, 5),
            BuiltinScm::M2Simple | BuiltinScm::M2Complex => (4, 6),
        }
    }

    pub fn dag(self) -> Dag {
        match self {
            BuiltinScm::M1Simple | BuiltinScm::M1Complex => {
                Dag::new(5, [(1, 2), (1, 3), (3, 4), (2, 5), (4, 5)])
                    .and_then(|d| d.with_unobserved([1, 4]))
            }
            BuiltinScm::M2Simple | BuiltinScm::M2Complex => {
                Dag::new(6, [(1, 2), (2, 3), (3, 4), (3, 5), (2, 6), (4, 6), (5, 6)])
                    .and_then(|d| d.with_unobserved([2]))
            }
        }
        .expect("built-in DAGs are valid")
    }

    pub fn scm(self) -> Scm {
        let eqs = match self {
            BuiltinScm::M1Simple => m1_simple(),
            BuiltinScm::M1Complex => m1_complex(),
            BuiltinScm::M2Simple => m2_simple(),
            BuiltinScm::M2Complex => m2_complex(),
        };
        Scm::new(self.dag(), eqs).expect("built-in SCMs are valid")
    }
}

impl fmt::Display for BuiltinScm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinScm {
    type Err = ScmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuiltinScm::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| ScmError::UnknownScm(s.to_string()))
    }
}

pub fn builtin_scm(name: &str) -> Result<Scm, ScmError> {
    Ok(name.parse::<BuiltinScm>()?.scm())
}

fn eq(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> StructuralFn {
    Arc::new(f)
}

fn root() -> StructuralFn {
    eq(|_, u| u)
}

// sqrt|x|(|u| + 0.1)/2 + |x| + u/5, shared by both complex models
fn folded_confounder(x: f64, u: f64) -> f64 {
    x.abs().sqrt() * (u.abs() + 0.1) / 2.0 + x.abs() + u / 5.0
}

fn noisy_sigmoid(x: f64, u: f64) -> f64 {
    1.0 / (1.0 + (u.abs() + 0.1) * (-x).exp())
}

fn m1_simple() -> Vec<StructuralFn> {
    vec![
        root(),
        eq(|p, u| p[0] * p[0] + u),
        eq(|p, u| 2.0 * p[0] + u),
        eq(|p, u| p[0] + u),
        eq(|p, u| p[0] + 2.0 * p[1] + u),
    ]
}

fn m1_complex() -> Vec<StructuralFn> {
    vec![
        root(),
        eq(|p, u| folded_confounder(p[0], u)),
        // X_3's only parent is X_1
        eq(|p, u| noisy_sigmoid(p[0], u)),
        eq(|p, u| p[0] + p[0] * u + u),
        eq(|p, u| p[0] + p[1] + p[0] * p[1] * u + u),
    ]
}

fn m2_simple() -> Vec<StructuralFn> {
    vec![
        root(),
        eq(|p, u| p[0] * p[0] + u),
        eq(|p, u| p[0] + u),
        eq(|p, u| p[0].powi(3) + p[0] + u),
        eq(|p, u| p[0] * p[0] + 0.1 + u),
        eq(|p, u| p[0] * p[1] + p[0] * p[2] + p[1] * p[2] + u),
    ]
}

fn m2_complex() -> Vec<StructuralFn> {
    vec![
        root(),
        eq(|p, u| folded_confounder(p[0], u)),
        eq(|p, u| noisy_sigmoid(p[0], u)),
        eq(|p, u| u * (p[0].abs() + 0.3) / 5.0 + u),
        eq(|p, u| 1.0 / ((u * p[0]).abs().sqrt() + 0.1) + u),
        // parents (X_2, X_4, X_5); the X_4 X_5 interaction stands in for the
        // self-referential term
        eq(|p, u| p[0] * p[0] * p[1] + p[0] * p[2] + p[1] * p[2] + p[0] * u),
    ]
}

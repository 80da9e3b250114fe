use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{decode_batch, DiffusionError, NoiseSchedule};
use crate::graph::{find_adjustment_set, Dag, NodeSet};
use crate::neural::{Adam, NodeModel, DEFAULT_HIDDEN, DEFAULT_LEARNING_RATE};
use crate::rng;
use crate::scm::{ColumnTransform, Intervention, SampleMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Per-node adjustment sets that replace the searched ones (BDCM only).
    pub adjustment_overrides: BTreeMap<usize, NodeSet>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            learning_rate: DEFAULT_LEARNING_RATE,
            steps: super::DEFAULT_STEPS,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
            adjustment_overrides: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    fn validate(&self, schedule: &NoiseSchedule) -> Result<(), DiffusionError> {
        if self.steps != schedule.steps() {
            return Err(DiffusionError::ScheduleMismatch {
                config: self.steps,
                schedule: schedule.steps(),
            });
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DiffusionError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(DiffusionError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerMode {
    Dcm,
    /// Trained for interventions on `cause`; `value` is the default query.
    Bdcm { cause: usize, value: f64 },
}

impl SamplerMode {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerMode::Dcm => "dcm",
            SamplerMode::Bdcm { .. } => "bdcm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeRole {
    /// Unobserved; never read or generated.
    Hidden,
    /// No observed inputs; resampled from its training column.
    Root { store: Vec<f64> },
    /// The BDCM intervention target.
    Intervened,
    Decoder(NodeModel),
}

/// A trained sampler: one role per node plus the order to generate them in.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedCausalModel {
    pub(super) dag: Dag,
    pub(super) order: Vec<usize>,
    pub(super) roles: Vec<NodeRole>,
    pub(super) mode: SamplerMode,
    pub(super) adjustment: BTreeMap<usize, NodeSet>,
    pub(super) normalization: Vec<Option<ColumnTransform>>,
    pub(super) schedule: NoiseSchedule,
    pub(super) loss_history: BTreeMap<usize, Vec<f64>>,
}

impl TrainedCausalModel {
    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    /// Generation order; a topological order of the graph that also places
    /// every conditioning node before the node it feeds.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn role(&self, node: usize) -> &NodeRole {
        &self.roles[node - 1]
    }

    pub fn model(&self, node: usize) -> Option<&NodeModel> {
        match self.role(node) {
            NodeRole::Decoder(m) => Some(m),
            _ => None,
        }
    }

    /// Conditioning inputs of `node`'s decoder, if it has one.
    pub fn conditioning(&self, node: usize) -> Option<&[usize]> {
        self.model(node).map(NodeModel::conditioning)
    }

    /// BDCM adjustment set recorded for each decoder node.
    pub fn adjustment_sets(&self) -> &BTreeMap<usize, NodeSet> {
        &self.adjustment
    }

    pub fn normalization(&self) -> &[Option<ColumnTransform>] {
        &self.normalization
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Mean training loss per epoch for each decoder node.
    pub fn loss_history(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.loss_history
    }
}

struct NodePlan {
    node: usize,
    conditioning: Vec<usize>,
}

fn check_width(data: &SampleMatrix, dag: &Dag) -> Result<(), DiffusionError> {
    if data.ncols() != dag.node_count() {
        return Err(DiffusionError::Width {
            data: data.ncols(),
            graph: dag.node_count(),
        });
    }
    Ok(())
}

/// Trains the parent-conditioned sampler: every observed node with at least
/// one observed parent gets a noise predictor conditioned on its observed
/// parents; other observed nodes are resampled from their training column.
pub fn train_dcm(
    data: &SampleMatrix,
    dag: &Dag,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<TrainedCausalModel, DiffusionError> {
    config.validate(schedule)?;
    check_width(data, dag)?;
    let plans: Vec<NodePlan> = dag
        .nodes()
        .filter(|&n| dag.is_observed(n))
        .map(|node| NodePlan {
            node,
            conditioning: dag.observed_parents(node),
        })
        .collect();
    let order = dag.topological_order().as_slice().to_vec();
    assemble(data, dag, schedule, config, plans, order, SamplerMode::Dcm, BTreeMap::new())
}

/// Trains the backdoor-adjusted sampler for interventions on `iv.node`.
///
/// Nodes downstream of the cause are conditioned on an observed backdoor
/// adjustment set for (cause, node), plus the cause itself when it is a
/// parent or when nothing in the set carries its effect. Other nodes keep
/// their observed parents, since the intervention leaves their distribution
/// unchanged.
pub fn train_bdcm(
    data: &SampleMatrix,
    dag: &Dag,
    iv: Intervention,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<TrainedCausalModel, DiffusionError> {
    config.validate(schedule)?;
    check_width(data, dag)?;
    let cause = iv.node;
    dag.check_node(cause)?;
    if !dag.is_observed(cause) {
        return Err(DiffusionError::Unobserved(cause));
    }
    let downstream = dag.descendants(cause)?;
    let mut plans = Vec::new();
    let mut adjustment = BTreeMap::new();
    let mut extra_edges = Vec::new();
    for node in dag.nodes().filter(|&n| n != cause && dag.is_observed(n)) {
        let set = match config.adjustment_overrides.get(&node) {
            Some(set) => {
                if let Some(&bad) = set.iter().find(|&&b| !dag.is_observed(b) || b == node) {
                    return Err(DiffusionError::Unobserved(bad));
                }
                set.clone()
            }
            None if downstream.contains(&node) => find_adjustment_set(dag, cause, node)?
                .ok_or(DiffusionError::NoAdjustmentSet { cause, node })?,
            None => dag.observed_parents(node).into_iter().collect(),
        };
        let mut conditioning = set.clone();
        if downstream.contains(&node)
            && (dag.parents(node).contains(&cause) || set.is_disjoint(&downstream))
        {
            conditioning.insert(cause);
        }
        if !conditioning.is_empty() {
            adjustment.insert(node, set);
        }
        extra_edges.extend(conditioning.iter().map(|&c| (c, node)));
        plans.push(NodePlan {
            node,
            conditioning: conditioning.into_iter().collect(),
        });
    }
    let augmented = Dag::new(
        dag.node_count(),
        dag.edges().into_iter().chain(extra_edges),
    )?;
    let order = augmented.topological_order().as_slice().to_vec();
    let mut model = assemble(
        data,
        dag,
        schedule,
        config,
        plans,
        order,
        SamplerMode::Bdcm { cause, value: iv.value },
        adjustment,
    )?;
    model.roles[cause - 1] = NodeRole::Intervened;
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    data: &SampleMatrix,
    dag: &Dag,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    plans: Vec<NodePlan>,
    order: Vec<usize>,
    mode: SamplerMode,
    adjustment: BTreeMap<usize, NodeSet>,
) -> Result<TrainedCausalModel, DiffusionError> {
    let mut roles = vec![NodeRole::Hidden; dag.node_count()];
    let mut jobs = Vec::new();
    for plan in plans {
        let target = data.column(plan.node)?.to_vec();
        if plan.conditioning.is_empty() {
            roles[plan.node - 1] = NodeRole::Root { store: target };
            continue;
        }
        let mut cond = Array2::zeros((target.len(), plan.conditioning.len()));
        for (c, &node) in plan.conditioning.iter().enumerate() {
            cond.column_mut(c).assign(&data.column(node)?);
        }
        jobs.push((plan, target, cond));
    }
    let trained: Vec<(usize, NodeModel, Vec<f64>)> = jobs
        .into_par_iter()
        .map(|(plan, target, cond)| {
            let (model, losses) = fit_node(plan.node, plan.conditioning, &target, &cond, schedule, config)?;
            Ok((plan.node, model, losses))
        })
        .collect::<Result<_, DiffusionError>>()?;
    let mut loss_history = BTreeMap::new();
    for (node, model, losses) in trained {
        roles[node - 1] = NodeRole::Decoder(model);
        loss_history.insert(node, losses);
    }
    Ok(TrainedCausalModel {
        dag: dag.clone(),
        order,
        roles,
        mode,
        adjustment,
        normalization: data.normalization().to_vec(),
        schedule: schedule.clone(),
        loss_history,
    })
}

/// Minibatch Adam on the denoising loss with a fresh `(t, eps)` per example
/// per epoch. Rows are reshuffled every epoch; the last partial batch is kept.
fn fit_node(
    node: usize,
    conditioning: Vec<usize>,
    target: &[f64],
    cond: &Array2<f64>,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(NodeModel, Vec<f64>), DiffusionError> {
    let init_seed = rng::stream(config.seed, &[rng::TAG_INIT, node as u64]).random();
    let mut model = NodeModel::new(node, conditioning, &config.hidden, schedule.steps(), init_seed)?;
    let mut adam = Adam::new(model.net().params().len(), config.learning_rate);
    let mut rng = rng::stream(config.seed, &[rng::TAG_TRAIN, node as u64]);
    let n = target.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x0: Vec<f64> = chunk.iter().map(|&i| target[i]).collect();
            let c = cond.select(Axis(0), chunk);
            let steps: Vec<usize> = chunk
                .iter()
                .map(|_| rng.random_range(1..=schedule.steps()))
                .collect();
            let noise: Vec<f64> = chunk.iter().map(|_| rng.sample(StandardNormal)).collect();
            let (loss, grad) = model.loss_and_gradient_columns(&x0, c.view(), &steps, &noise, schedule)?;
            adam.step(model.net_mut().params_mut(), &grad)?;
            total += loss * chunk.len() as f64;
        }
        losses.push(total / n as f64);
    }
    Ok((model, losses))
}

fn generate(
    model: &TrainedCausalModel,
    iv: Intervention,
    n: usize,
    seed: u64,
) -> Result<SampleMatrix, DiffusionError> {
    let dag = &model.dag;
    dag.check_node(iv.node)?;
    if !dag.is_observed(iv.node) {
        return Err(DiffusionError::Unobserved(iv.node));
    }
    let mut values = Array2::from_elem((n, dag.node_count()), f64::NAN);
    for &node in &model.order {
        let mut column = values.column_mut(node - 1);
        if node == iv.node {
            column.fill(iv.value);
            continue;
        }
        match &model.roles[node - 1] {
            NodeRole::Hidden => {}
            NodeRole::Intervened => {
                return Err(DiffusionError::QueryMismatch {
                    trained: node,
                    requested: iv.node,
                })
            }
            NodeRole::Root { store } => {
                let mut rng = rng::stream(seed, &[rng::TAG_SAMPLE_ROOT, node as u64]);
                for slot in column.iter_mut() {
                    *slot = store[rng.random_range(0..store.len())];
                }
            }
            NodeRole::Decoder(m) => {
                let mut rng = rng::stream(seed, &[rng::TAG_SAMPLE_NOISE, node as u64]);
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let cond = values.select(Axis(1), &m.conditioning().iter().map(|c| c - 1).collect::<Vec<_>>());
                let decoded = decode_batch(m, &z, cond.view(), &model.schedule)?;
                values.column_mut(node - 1).assign(&ndarray::Array1::from(decoded));
            }
        }
    }
    Ok(SampleMatrix::new(values, dag.observed_mask().to_vec()).with_normalization(model.normalization.clone()))
}

/// Draws `n` rows from a DCM under `do(iv)`.
pub fn sample_dcm(
    model: &TrainedCausalModel,
    iv: Intervention,
    n: usize,
    seed: u64,
) -> Result<SampleMatrix, DiffusionError> {
    if model.mode != SamplerMode::Dcm {
        return Err(DiffusionError::WrongMode {
            trained: model.mode.name(),
            requested: "dcm",
        });
    }
    generate(model, iv, n, seed)
}

/// Draws `n` rows from a BDCM at its recorded query.
pub fn sample_bdcm(model: &TrainedCausalModel, n: usize, seed: u64) -> Result<SampleMatrix, DiffusionError> {
    match model.mode {
        SamplerMode::Bdcm { value, .. } => sample_bdcm_at(model, value, n, seed),
        SamplerMode::Dcm => Err(DiffusionError::WrongMode {
            trained: "dcm",
            requested: "bdcm",
        }),
    }
}

/// Draws `n` rows from a BDCM with the cause clamped to `value`.
pub fn sample_bdcm_at(
    model: &TrainedCausalModel,
    value: f64,
    n: usize,
    seed: u64,
) -> Result<SampleMatrix, DiffusionError> {
    match model.mode {
        SamplerMode::Bdcm { cause, .. } => generate(model, Intervention::new(cause, value), n, seed),
        SamplerMode::Dcm => Err(DiffusionError::WrongMode {
            trained: "dcm",
            requested: "bdcm",
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::scm::{sample_observational, BuiltinScm};
    use approx::assert_abs_diff_eq;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            hidden: vec![8, 8, 8],
            ..TrainConfig::default()
        }
    }

    fn training_data(which: BuiltinScm, n: usize) -> SampleMatrix {
        sample_observational(&which.scm(), n, 1).unwrap().normalize().unwrap()
    }

    fn set(nodes: &[usize]) -> Vec<usize> {
        nodes.to_vec()
    }

    #[test]
    fn dcm_roles_on_m1() {
        let sched = make_schedule(100).unwrap();
        let data = training_data(BuiltinScm::M1Simple, 64);
        let m = train_dcm(&data, &BuiltinScm::M1Simple.dag(), &sched, &tiny_config()).unwrap();
        assert!(matches!(m.role(1), NodeRole::Hidden));
        assert!(matches!(m.role(2), NodeRole::Root { .. }));
        assert!(matches!(m.role(3), NodeRole::Root { .. }));
        assert!(matches!(m.role(4), NodeRole::Hidden));
        assert_eq!(m.conditioning(5).unwrap(), set(&[2]));
        assert_eq!(data.masked_reads(), 0);
    }

    #[test]
    fn dcm_conditions_m2_outcome_on_observed_parents() {
        let sched = make_schedule(100).unwrap();
        let data = training_data(BuiltinScm::M2Complex, 64);
        let m = train_dcm(&data, &BuiltinScm::M2Complex.dag(), &sched, &tiny_config()).unwrap();
        assert_eq!(m.conditioning(6).unwrap(), set(&[4, 5]));
        assert_eq!(m.conditioning(5).unwrap(), set(&[3]));
        assert!(matches!(m.role(3), NodeRole::Root { .. }));
    }

    #[test]
    fn single_node_graph_has_only_a_store() {
        let sched = make_schedule(10).unwrap();
        let dag = Dag::new(1, []).unwrap();
        let data = SampleMatrix::new(Array2::from_shape_fn((5, 1), |(i, _)| i as f64), vec![true]);
        let cfg = TrainConfig { steps: 10, ..tiny_config() };
        let m = train_dcm(&data, &dag, &sched, &cfg).unwrap();
        assert!(matches!(m.role(1), NodeRole::Root { store } if store.len() == 5));
        assert!(m.loss_history().is_empty());
    }

    #[test]
    fn bdcm_conditioning_matches_backdoor_sets() {
        let sched = make_schedule(100).unwrap();
        let data = training_data(BuiltinScm::M1Simple, 64);
        let m = train_bdcm(&data, &BuiltinScm::M1Simple.dag(), Intervention::new(2, 0.5), &sched, &tiny_config()).unwrap();
        assert_eq!(m.conditioning(5).unwrap(), set(&[2, 3]));
        assert_eq!(m.adjustment_sets()[&5], [3].into_iter().collect());
        assert!(matches!(m.role(2), NodeRole::Intervened));
        assert!(matches!(m.role(3), NodeRole::Root { .. }));

        let data = training_data(BuiltinScm::M2Simple, 64);
        let m = train_bdcm(&data, &BuiltinScm::M2Simple.dag(), Intervention::new(4, 1.0), &sched, &tiny_config()).unwrap();
        assert_eq!(m.conditioning(6).unwrap(), set(&[3, 4]));
        assert_eq!(m.conditioning(5).unwrap(), set(&[3]));
        assert!(matches!(m.role(1), NodeRole::Root { .. }));
        assert!(matches!(m.role(3), NodeRole::Root { .. }));
    }

    #[test]
    fn bdcm_on_childless_cause_degenerates() {
        let sched = make_schedule(100).unwrap();
        let data = training_data(BuiltinScm::M1Simple, 64);
        let m = train_bdcm(&data, &BuiltinScm::M1Simple.dag(), Intervention::new(5, 0.0), &sched, &tiny_config()).unwrap();
        assert!(matches!(m.role(2), NodeRole::Root { .. }));
        assert!(matches!(m.role(3), NodeRole::Root { .. }));
        assert!(matches!(m.role(5), NodeRole::Intervened));
        let out = sample_bdcm(&m, 10, 0).unwrap();
        assert!(out.column(5).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bdcm_fails_without_adjustment_set() {
        // hidden confounder 1 of 2 -> 3
        let dag = Dag::new(3, [(1, 2), (1, 3), (2, 3)]).unwrap().with_unobserved([1]).unwrap();
        let scm = crate::scm::Scm::new(
            dag.clone(),
            vec![
                std::sync::Arc::new(|_: &[f64], u: f64| u),
                std::sync::Arc::new(|p: &[f64], u: f64| p[0] + u),
                std::sync::Arc::new(|p: &[f64], u: f64| p[0] + p[1] + u),
            ],
        )
        .unwrap();
        let data = sample_observational(&scm, 32, 0).unwrap();
        let sched = make_schedule(100).unwrap();
        let err = train_bdcm(&data, &dag, Intervention::new(2, 0.0), &sched, &tiny_config()).unwrap_err();
        assert!(matches!(err, DiffusionError::NoAdjustmentSet { cause: 2, node: 3 }));
        let err = train_bdcm(&data, &dag, Intervention::new(1, 0.0), &sched, &tiny_config()).unwrap_err();
        assert!(matches!(err, DiffusionError::Unobserved(1)));
    }

    #[test]
    fn mediator_gets_the_cause_as_input() {
        // 1 -> 2 -> 3 with 2 hidden: node 3 only sees the cause through 2
        let dag = Dag::new(3, [(1, 2), (2, 3)]).unwrap().with_unobserved([2]).unwrap();
        let data = SampleMatrix::new(Array2::from_shape_fn((16, 3), |(i, j)| (i * 3 + j) as f64 / 10.0), vec![true, false, true]);
        let sched = make_schedule(100).unwrap();
        let m = train_bdcm(&data, &dag, Intervention::new(1, 0.0), &sched, &tiny_config()).unwrap();
        assert_eq!(m.conditioning(3).unwrap(), set(&[1]));
        let dcm = train_dcm(&data, &dag, &sched, &tiny_config()).unwrap();
        assert!(matches!(dcm.role(3), NodeRole::Root { .. }));
    }

    #[test]
    fn bdcm_with_parent_sets_equals_dcm_when_all_observed() {
        let sched = make_schedule(100).unwrap();
        let dag = Dag::new(6, [(1, 2), (2, 3), (3, 4), (3, 5), (2, 6), (4, 6), (5, 6), (1, 5)]).unwrap();
        let data = sample_observational(&BuiltinScm::M2Simple.scm(), 32, 3).unwrap();
        let data = SampleMatrix::new(
            Array2::from_shape_fn((32, 6), |(i, j)| data.column(j + 1).map(|c| c[i]).unwrap_or(0.1 * i as f64)),
            vec![true; 6],
        );
        for cause in 1..=6 {
            let mut cfg = tiny_config();
            for node in dag.nodes().filter(|&n| n != cause && !dag.parents(n).is_empty()) {
                cfg.adjustment_overrides
                    .insert(node, dag.parents(node).iter().copied().filter(|&p| p != cause).collect());
            }
            let dcm = train_dcm(&data, &dag, &sched, &cfg).unwrap();
            let bdcm = train_bdcm(&data, &dag, Intervention::new(cause, 0.0), &sched, &cfg).unwrap();
            for node in dag.nodes().filter(|&n| n != cause) {
                assert_eq!(dcm.conditioning(node), bdcm.conditioning(node), "cause {cause}, node {node}");
            }
        }
    }

    #[test]
    fn sampling_contracts() {
        let sched = make_schedule(100).unwrap();
        let data = training_data(BuiltinScm::M1Complex, 64);
        let dag = BuiltinScm::M1Complex.dag();
        let dcm = train_dcm(&data, &dag, &sched, &tiny_config()).unwrap();
        let bdcm = train_bdcm(&data, &dag, Intervention::new(2, -1.25), &sched, &tiny_config()).unwrap();
        let store = data.column(3).unwrap().to_vec();
        let reads_before = data.access_counts();

        let a = sample_dcm(&dcm, Intervention::new(2, 0.75), 40, 9).unwrap();
        assert!(a.column(2).unwrap().iter().all(|&v| v == 0.75));
        assert!(a.column(3).unwrap().iter().all(|v| store.contains(v)));
        assert!(a.column(5).unwrap().iter().all(|v| v.is_finite()));
        assert!(a.column(1).is_err());
        assert_eq!(a.column(5).unwrap().to_vec(), sample_dcm(&dcm, Intervention::new(2, 0.75), 40, 9).unwrap().column(5).unwrap().to_vec());

        let b = sample_bdcm(&bdcm, 40, 9).unwrap();
        assert!(b.column(2).unwrap().iter().all(|&v| v == -1.25));
        let b2 = sample_bdcm_at(&bdcm, 2.0, 40, 9).unwrap();
        assert!(b2.column(2).unwrap().iter().all(|&v| v == 2.0));

        assert!(matches!(sample_dcm(&dcm, Intervention::new(1, 0.0), 5, 0), Err(DiffusionError::Unobserved(1))));
        assert!(matches!(sample_dcm(&bdcm, Intervention::new(2, 0.0), 5, 0), Err(DiffusionError::WrongMode { .. })));
        assert!(matches!(sample_bdcm(&dcm, 5, 0), Err(DiffusionError::WrongMode { .. })));
        assert_eq!(data.access_counts(), reads_before);
        assert_eq!(data.masked_reads(), 0);
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let sched = make_schedule(100).unwrap();
        let data = training_data(BuiltinScm::M2Complex, 48);
        let dag = BuiltinScm::M2Complex.dag();
        let a = train_bdcm(&data, &dag, Intervention::new(4, 0.0), &sched, &tiny_config()).unwrap();
        let b = train_bdcm(&data, &dag, Intervention::new(4, 0.0), &sched, &tiny_config()).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig { seed: 1, ..tiny_config() };
        let c = train_bdcm(&data, &dag, Intervention::new(4, 0.0), &sched, &other).unwrap();
        assert_ne!(a.model(6).unwrap().net().params(), c.model(6).unwrap().net().params());
    }

    #[test]
    fn decoder_learns_standard_normal() {
        // target independent of its (constant) conditioning input
        let sched = make_schedule(100).unwrap();
        let mut r = rng::stream(11, &[]);
        let n = 1000;
        let values = Array2::from_shape_fn((n, 2), |(_, j)| if j == 0 { 0.0 } else { r.sample(StandardNormal) });
        let dag = Dag::new(2, [(1, 2)]).unwrap();
        let data = SampleMatrix::new(values, vec![true, true]);
        let cfg = TrainConfig {
            epochs: 200,
            hidden: vec![32, 64, 64],
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let m = train_dcm(&data, &dag, &sched, &cfg).unwrap();
        let out = sample_dcm(&m, Intervention::new(1, 0.0), 500, 3).unwrap();
        let xs = out.column(2).unwrap().to_vec();
        let mean = crate::scm::mean(&xs);
        let var = crate::scm::std_dev(&xs).powi(2);
        assert_abs_diff_eq!(mean, 0.0, epsilon = 0.15);
        assert_abs_diff_eq!(var, 1.0, epsilon = 0.15);
    }
}

//! On-disk layout of a trained model directory:
//!
//! - `manifest.txt`: `key = value` lines (mode, order, roles, transforms, ...)
//! - `dag.txt`: the graph in the text DAG format
//! - `node_<i>.bin` (+ `.txt` sidecar): decoder weights
//! - `root_<i>.txt`: empirical store of a root node, one value per line
//! - `loss_<i>.txt`: per-epoch training loss of a decoder

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::causal::{NodeRole, SamplerMode, TrainedCausalModel};
use super::{make_schedule, DiffusionError};
use crate::graph::{Dag, NodeSet};
use crate::neural::NodeModel;
use crate::scm::ColumnTransform;

const FORMAT: &str = "bdcm-model 1";

fn bad(msg: impl Into<String>) -> DiffusionError {
    DiffusionError::Bundle(msg.into())
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, DiffusionError> {
    s.split_whitespace()
        .map(|tok| tok.parse().map_err(|_| bad(format!("bad value {tok:?}"))))
        .collect()
}

fn write_values(path: &Path, xs: &[f64]) -> Result<(), DiffusionError> {
    let mut text = String::with_capacity(xs.len() * 20);
    for x in xs {
        writeln!(text, "{x}").expect("string write");
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_values(path: &Path) -> Result<Vec<f64>, DiffusionError> {
    parse_list(&fs::read_to_string(path)?)
}

impl TrainedCausalModel {
    /// Writes the model into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), DiffusionError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("dag.txt"), self.dag.to_string())?;
        let mut m = String::new();
        writeln!(m, "format = {FORMAT}").unwrap();
        match self.mode {
            SamplerMode::Dcm => writeln!(m, "mode = dcm").unwrap(),
            SamplerMode::Bdcm { cause, value } => {
                writeln!(m, "mode = bdcm\ncause = {cause}\nvalue = {value}").unwrap()
            }
        }
        writeln!(m, "steps = {}", self.schedule.steps()).unwrap();
        writeln!(m, "order = {}", join(&self.order)).unwrap();
        for (i, role) in self.roles.iter().enumerate() {
            let node = i + 1;
            let kind = match role {
                NodeRole::Hidden => "hidden",
                NodeRole::Intervened => "intervened",
                NodeRole::Root { store } => {
                    write_values(&dir.join(format!("root_{node}.txt")), store)?;
                    "root"
                }
                NodeRole::Decoder(model) => {
                    model.save(&dir.join(format!("node_{node}.bin")))?;
                    "decoder"
                }
            };
            writeln!(m, "role.{node} = {kind}").unwrap();
            if let Some(tr) = self.normalization[i] {
                writeln!(m, "transform.{node} = {} {}", tr.mean, tr.std).unwrap();
            }
        }
        for (node, set) in &self.adjustment {
            writeln!(m, "adjustment.{node} = {}", join(set)).unwrap();
        }
        for (node, losses) in &self.loss_history {
            write_values(&dir.join(format!("loss_{node}.txt")), losses)?;
        }
        fs::write(dir.join("manifest.txt"), m)?;
        Ok(())
    }

    /// Reads a model written by [`TrainedCausalModel::save`].
    pub fn load(dir: &Path) -> Result<Self, DiffusionError> {
        let dag: Dag = fs::read_to_string(dir.join("dag.txt"))?.parse()?;
        let d = dag.node_count();
        let mut entries = BTreeMap::new();
        for (i, line) in fs::read_to_string(dir.join("manifest.txt"))?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("manifest line {}: expected key = value", i + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |key: &str| entries.get(key).ok_or_else(|| bad(format!("missing {key}")));
        if get("format")? != FORMAT {
            return Err(bad("unsupported format"));
        }
        let num = |key: &str| -> Result<f64, DiffusionError> {
            get(key)?.parse().map_err(|_| bad(format!("bad {key}")))
        };
        let mode = match get("mode")?.as_str() {
            "dcm" => SamplerMode::Dcm,
            "bdcm" => SamplerMode::Bdcm {
                cause: num("cause")? as usize,
                value: num("value")?,
            },
            other => return Err(bad(format!("unknown mode {other:?}"))),
        };
        let schedule = make_schedule(num("steps")? as usize)?;
        let order: Vec<usize> = parse_list(get("order")?)?;
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (1..=d).collect::<Vec<_>>() {
            return Err(bad("order is not a permutation of the nodes"));
        }
        let mut roles = Vec::with_capacity(d);
        let mut normalization = Vec::with_capacity(d);
        let mut loss_history = BTreeMap::new();
        for node in 1..=d {
            let role = match get(&format!("role.{node}"))?.as_str() {
                "hidden" => NodeRole::Hidden,
                "intervened" => NodeRole::Intervened,
                "root" => NodeRole::Root {
                    store: read_values(&dir.join(format!("root_{node}.txt")))?,
                },
                "decoder" => {
                    let model = NodeModel::load(&dir.join(format!("node_{node}.bin")))?;
                    if model.node() != node || model.steps() != schedule.steps() {
                        return Err(bad(format!("decoder file for node {node} does not match")));
                    }
                    let loss_path = dir.join(format!("loss_{node}.txt"));
                    if loss_path.exists() {
                        loss_history.insert(node, read_values(&loss_path)?);
                    }
                    NodeRole::Decoder(model)
                }
                other => return Err(bad(format!("unknown role {other:?}"))),
            };
            roles.push(role);
            normalization.push(match entries.get(&format!("transform.{node}")) {
                Some(v) => match parse_list::<f64>(v)?.as_slice() {
                    &[mean, std] => Some(ColumnTransform { mean, std }),
                    _ => return Err(bad(format!("bad transform for node {node}"))),
                },
                None => None,
            });
        }
        let mut adjustment = BTreeMap::new();
        for (k, v) in &entries {
            if let Some(node) = k.strip_prefix("adjustment.") {
                let node: usize = node.parse().map_err(|_| bad(format!("bad key {k:?}")))?;
                adjustment.insert(node, parse_list::<usize>(v)?.into_iter().collect::<NodeSet>());
            }
        }
        Ok(TrainedCausalModel {
            dag,
            order,
            roles,
            mode,
            adjustment,
            normalization,
            schedule,
            loss_history,
        })
    }
}

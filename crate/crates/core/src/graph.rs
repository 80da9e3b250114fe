//! Causal DAGs with per-node observability, plus the graph algorithms used for
//! backdoor adjustment: topological ordering, skeleton path enumeration,
//! blocking, the backdoor criterion and adjustment-set search.
//!
//! Nodes are labelled `1..=d` everywhere in the public API, matching the DAG
//! text format and the CLI.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use thiserror::Error;

pub type NodeSet = BTreeSet<usize>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("node {node} is out of range 1..={node_count}")]
    NodeOutOfRange { node: usize, node_count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("directed cycle {}", join_nodes(.0, " -> "))]
    Cycle(Vec<usize>),
    #[error("cause and outcome must differ (both are node {0})")]
    SameEndpoints(usize),
    #[error("path does not start at node {0}")]
    PathStart(usize),
    #[error("conditioning set contains endpoint {0}")]
    EndpointInSet(usize),
    #[error("malformed DAG text at line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn join_nodes(nodes: &[usize], sep: &str) -> String {
    nodes.iter().map(|n| n.to_string()).join(sep)
}

/// A directed acyclic graph over nodes `1..=d`, each flagged observed or not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    node_count: usize,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    observed: Vec<bool>,
}

impl Dag {
    /// Builds a fully observed DAG. Duplicate edges are merged; cycles are
    /// rejected with a witness.
    pub fn new<I>(node_count: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut parents = vec![Vec::new(); node_count];
        let mut children = vec![Vec::new(); node_count];
        for (from, to) in edges {
            for node in [from, to] {
                if node == 0 || node > node_count {
                    return Err(GraphError::NodeOutOfRange { node, node_count });
                }
            }
            if from == to {
                return Err(GraphError::SelfLoop(from));
            }
            parents[to - 1].push(from);
            children[from - 1].push(to);
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let dag = Dag {
            node_count,
            parents,
            children,
            observed: vec![true; node_count],
        };
        dag.kahn_order().map_err(GraphError::Cycle)?;
        Ok(dag)
    }

    /// Marks the given nodes as unobserved.
    pub fn with_unobserved<I>(mut self, hidden: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = usize>,
    {
        for node in hidden {
            self.check_node(node)?;
            self.observed[node - 1] = false;
        }
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> {
        1..=self.node_count
    }

    pub fn check_node(&self, node: usize) -> Result<(), GraphError> {
        if node == 0 || node > self.node_count {
            Err(GraphError::NodeOutOfRange {
                node,
                node_count: self.node_count,
            })
        } else {
            Ok(())
        }
    }

    /// Parents of `node` in ascending order.
    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node - 1]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node - 1]
    }

    pub fn observed_parents(&self, node: usize) -> Vec<usize> {
        self.parents(node)
            .iter()
            .copied()
            .filter(|&p| self.is_observed(p))
            .collect()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.children[from - 1].binary_search(&to).is_ok()
    }

    pub fn is_observed(&self, node: usize) -> bool {
        self.observed[node - 1]
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn unobserved(&self) -> Vec<usize> {
        self.nodes().filter(|&n| !self.is_observed(n)).collect()
    }

    /// All edges `(from, to)` in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes()
            .flat_map(|from| self.children(from).iter().map(move |&to| (from, to)))
            .collect()
    }

    /// Deletes every edge pointing into `node`.
    pub fn without_incoming(&self, node: usize) -> Dag {
        let mut dag = self.clone();
        for &p in &self.parents[node - 1] {
            dag.children[p - 1].retain(|&c| c != node);
        }
        dag.parents[node - 1].clear();
        dag
    }

    /// The deterministic topological order (smallest ready node first).
    pub fn topological_order(&self) -> TopologicalOrder {
        TopologicalOrder {
            order: self
                .kahn_order()
                .expect("Dag invariant: acyclic by construction"),
        }
    }

    fn kahn_order(&self) -> Result<Vec<usize>, Vec<usize>> {
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<usize>> = self
            .nodes()
            .filter(|&n| indegree[n - 1] == 0)
            .map(Reverse)
            .collect();
        let mut order = Vec::with_capacity(self.node_count);
        while let Some(Reverse(node)) = ready.pop() {
            order.push(node);
            for &child in self.children(node) {
                indegree[child - 1] -= 1;
                if indegree[child - 1] == 0 {
                    ready.push(Reverse(child));
                }
            }
        }
        if order.len() == self.node_count {
            Ok(order)
        } else {
            Err(self.cycle_witness(&indegree))
        }
    }

    // Every node with remaining indegree has a parent that also remains, so
    // walking parents backwards must revisit a node.
    fn cycle_witness(&self, indegree: &[usize]) -> Vec<usize> {
        let start = self
            .nodes()
            .find(|&n| indegree[n - 1] > 0)
            .expect("cycle witness requested for an acyclic graph");
        let mut seen = vec![usize::MAX; self.node_count];
        let mut walk = Vec::new();
        let mut node = start;
        while seen[node - 1] == usize::MAX {
            seen[node - 1] = walk.len();
            walk.push(node);
            node = *self
                .parents(node)
                .iter()
                .find(|&&p| indegree[p - 1] > 0)
                .expect("remaining node has a remaining parent");
        }
        let mut cycle: Vec<usize> = walk[seen[node - 1]..].to_vec();
        cycle.reverse();
        cycle.push(cycle[0]);
        cycle
    }

    /// Nodes reachable from `node` along directed edges, excluding `node`.
    pub fn descendants(&self, node: usize) -> Result<NodeSet, GraphError> {
        self.check_node(node)?;
        let mut out = NodeSet::new();
        let mut queue = VecDeque::from([node]);
        while let Some(n) = queue.pop_front() {
            for &c in self.children(n) {
                if out.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        Ok(out)
    }

    /// Every simple path between `x` and `y` in the skeleton, in
    /// lexicographic order of node sequence.
    pub fn undirected_paths(&self, x: usize, y: usize) -> Result<Vec<Path>, GraphError> {
        self.check_node(x)?;
        self.check_node(y)?;
        if x == y {
            return Err(GraphError::SameEndpoints(x));
        }
        let mut paths = Vec::new();
        let mut on_path = vec![false; self.node_count];
        let mut nodes = vec![x];
        let mut steps = Vec::new();
        on_path[x - 1] = true;
        self.extend_paths(y, &mut nodes, &mut steps, &mut on_path, &mut paths);
        Ok(paths)
    }

    fn extend_paths(
        &self,
        target: usize,
        nodes: &mut Vec<usize>,
        steps: &mut Vec<Step>,
        on_path: &mut [bool],
        out: &mut Vec<Path>,
    ) {
        let here = *nodes.last().unwrap();
        let neighbours = self
            .children(here)
            .iter()
            .map(|&n| (n, Step::Forward))
            .merge_by(
                self.parents(here).iter().map(|&n| (n, Step::Backward)),
                |a, b| a.0 <= b.0,
            )
            .collect::<Vec<_>>();
        for (next, step) in neighbours {
            if on_path[next - 1] {
                continue;
            }
            nodes.push(next);
            steps.push(step);
            if next == target {
                out.push(Path {
                    nodes: nodes.clone(),
                    steps: steps.clone(),
                });
            } else {
                on_path[next - 1] = true;
                self.extend_paths(target, nodes, steps, on_path, out);
                on_path[next - 1] = false;
            }
            nodes.pop();
            steps.pop();
        }
    }

    /// Builds the path through `nodes`, reading each step's orientation off
    /// the graph. `None` if consecutive nodes are not adjacent or a node
    /// repeats.
    pub fn path(&self, nodes: &[usize]) -> Option<Path> {
        if nodes.is_empty() || nodes.iter().any(|&n| self.check_node(n).is_err()) {
            return None;
        }
        if nodes.iter().collect::<BTreeSet<_>>().len() != nodes.len() {
            return None;
        }
        let steps = nodes
            .windows(2)
            .map(|w| {
                if self.has_edge(w[0], w[1]) {
                    Some(Step::Forward)
                } else if self.has_edge(w[1], w[0]) {
                    Some(Step::Backward)
                } else {
                    None
                }
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Path {
            nodes: nodes.to_vec(),
            steps,
        })
    }
}

impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.node_count)?;
        for (from, to) in self.edges() {
            writeln!(f, "{from} {to}")?;
        }
        let hidden = self.unobserved();
        if hidden.is_empty() {
            writeln!(f, "unobserved:")
        } else {
            writeln!(f, "unobserved: {}", join_nodes(&hidden, " "))
        }
    }
}

impl FromStr for Dag {
    type Err = GraphError;

    /// Parses the DAG text format: a node count line, one `i j` line per
    /// edge, then an optional `unobserved: ...` line. Blank lines and `#`
    /// comments are ignored.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let parse_err = |line: usize, message: String| GraphError::Parse { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (first, count) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing node count".into()))?;
        let node_count: usize = count
            .parse()
            .map_err(|_| parse_err(first, format!("bad node count {count:?}")))?;
        let mut edges = Vec::new();
        let mut hidden = Vec::new();
        let mut seen_hidden = false;
        for (line, content) in lines {
            if seen_hidden {
                return Err(parse_err(line, "content after unobserved line".into()));
            }
            if let Some(rest) = content.strip_prefix("unobserved:") {
                seen_hidden = true;
                for tok in rest.split_whitespace() {
                    hidden.push(
                        tok.parse()
                            .map_err(|_| parse_err(line, format!("bad node {tok:?}")))?,
                    );
                }
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            let [a, b] = toks[..] else {
                return Err(parse_err(line, format!("expected `i j`, got {content:?}")));
            };
            let from = a
                .parse()
                .map_err(|_| parse_err(line, format!("bad node {a:?}")))?;
            let to = b
                .parse()
                .map_err(|_| parse_err(line, format!("bad node {b:?}")))?;
            edges.push((from, to));
        }
        Dag::new(node_count, edges)?.with_unobserved(hidden)
    }
}

/// A permutation of `1..=d` in which every edge's tail precedes its head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologicalOrder {
    order: Vec<usize>,
}

impl TopologicalOrder {
    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    pub fn position(&self, node: usize) -> Option<usize> {
        self.order.iter().position(|&n| n == node)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().copied()
    }
}

/// Orientation of one step along a path: `Forward` is `a -> b`, `Backward`
/// is `a <- b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    nodes: Vec<usize>,
    steps: Vec<Step>,
}

impl Path {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Interior nodes that are colliders (`-> z <-`) on this path.
    pub fn is_collider_at(&self, k: usize) -> bool {
        k > 0
            && k + 1 < self.nodes.len()
            && self.steps[k - 1] == Step::Forward
            && self.steps[k] == Step::Backward
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.nodes[0])?;
        for (node, step) in self.nodes[1..].iter().zip(&self.steps) {
            let arrow = match step {
                Step::Forward => "->",
                Step::Backward => "<-",
            };
            write!(f, "{arrow}{node}")?;
        }
        Ok(())
    }
}

/// True iff the first step of `path` points into `x`.
pub fn is_backdoor_path(path: &Path, x: usize) -> Result<bool, GraphError> {
    if path.nodes.first() != Some(&x) {
        return Err(GraphError::PathStart(x));
    }
    Ok(path.steps.first() == Some(&Step::Backward))
}

/// Whether conditioning on `z_set` blocks `path`: some interior chain or fork
/// node is in the set, or some interior collider has neither itself nor any
/// descendant in the set.
pub fn blocks(dag: &Dag, path: &Path, z_set: &NodeSet) -> bool {
    (1..path.nodes.len().saturating_sub(1)).any(|k| {
        let node = path.nodes[k];
        if path.is_collider_at(k) {
            !z_set.contains(&node)
                && dag
                    .descendants(node)
                    .map(|de| de.is_disjoint(z_set))
                    .unwrap_or(true)
        } else {
            z_set.contains(&node)
        }
    })
}

fn check_query(dag: &Dag, x: usize, y: usize) -> Result<(), GraphError> {
    dag.check_node(x)?;
    dag.check_node(y)?;
    if x == y {
        return Err(GraphError::SameEndpoints(x));
    }
    Ok(())
}

/// Backdoor criterion for `(x, y)`: no member of `b_set` descends from `x`,
/// and every path from `x` to `y` entering `x` is blocked by `b_set`.
pub fn satisfies_backdoor(
    dag: &Dag,
    x: usize,
    y: usize,
    b_set: &NodeSet,
) -> Result<bool, GraphError> {
    check_query(dag, x, y)?;
    for &b in b_set {
        dag.check_node(b)?;
    }
    if let Some(&end) = b_set.iter().find(|&&b| b == x || b == y) {
        return Err(GraphError::EndpointInSet(end));
    }
    if !dag.descendants(x)?.is_disjoint(b_set) {
        return Ok(false);
    }
    let backdoor = backdoor_paths(dag, x, y)?;
    Ok(backdoor.iter().all(|p| blocks(dag, p, b_set)))
}

fn backdoor_paths(dag: &Dag, x: usize, y: usize) -> Result<Vec<Path>, GraphError> {
    Ok(dag
        .undirected_paths(x, y)?
        .into_iter()
        .filter(|p| p.steps[0] == Step::Backward)
        .collect())
}

/// Smallest, then lexicographically least, set of observed non-descendants
/// of `x` (excluding `x` and `y`) that satisfies the backdoor criterion.
/// `None` when no observed set works.
pub fn find_adjustment_set(
    dag: &Dag,
    x: usize,
    y: usize,
) -> Result<Option<NodeSet>, GraphError> {
    check_query(dag, x, y)?;
    let de_x = dag.descendants(x)?;
    let candidates: Vec<usize> = dag
        .nodes()
        .filter(|&n| n != x && n != y && dag.is_observed(n) && !de_x.contains(&n))
        .collect();
    let backdoor = backdoor_paths(dag, x, y)?;
    for size in 0..=candidates.len() {
        for subset in candidates.iter().copied().combinations(size) {
            let set: NodeSet = subset.into_iter().collect();
            if backdoor.iter().all(|p| blocks(dag, p, &set)) {
                return Ok(Some(set));
            }
        }
    }
    Ok(None)
}

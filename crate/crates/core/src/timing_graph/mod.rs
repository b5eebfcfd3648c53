//! Timing graphs: the JSON document model, validation and levelization.
//!
//! Propagation of delay distributions over a loaded graph lives in
//! [`propagate`].

pub mod propagate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::distributions::GaussianParams;
use crate::error::{Result, SstaError};

pub use propagate::{
    fold_multi_input, gakeda_run, propagate_gate, ArrivalDistribution, NodeResult, PropagationConfig,
    PropagationResult, SampleCount,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Source,
    Gate,
    Sink,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: String,
    kind: NodeKind,
    #[serde(default)]
    op_time: Option<GaussianParams>,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    input_rho: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceRecord {
    id: String,
    arrival: GaussianParams,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    nodes: Vec<NodeRecord>,
    #[serde(default)]
    sources: Vec<SourceRecord>,
}

/// One vertex of the timing graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    /// Gates only.
    pub op_time: Option<GaussianParams>,
    /// Predecessors in declared order.
    pub inputs: Vec<usize>,
    /// Correlation between the two arrivals of a two-input gate.
    pub input_rho: f64,
}

/// A validated, acyclic timing graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingGraph {
    nodes: Vec<NodeSpec>,
    index: BTreeMap<String, usize>,
    arrivals: BTreeMap<usize, GaussianParams>,
    fanout: Vec<Vec<usize>>,
    levels: Vec<Vec<usize>>,
    level_of: Vec<usize>,
}

fn parse_error(e: &serde_json::Error) -> SstaError {
    SstaError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and validates a graph document.
pub fn load_graph(text: &str) -> Result<TimingGraph> {
    let doc: GraphDocument = serde_json::from_str(text).map_err(|e| parse_error(&e))?;
    TimingGraph::from_document(doc)
}

impl TimingGraph {
    fn from_document(doc: GraphDocument) -> Result<Self> {
        let mut records = doc.nodes;
        let declared: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        // a `sources` entry without a node entry declares the source node
        let implicit: Vec<NodeRecord> = doc
            .sources
            .iter()
            .filter(|s| !declared.contains(s.id.as_str()))
            .map(|s| NodeRecord {
                id: s.id.clone(),
                kind: NodeKind::Source,
                op_time: None,
                inputs: Vec::new(),
                input_rho: None,
            })
            .collect();
        records.extend(implicit);

        let mut index = BTreeMap::new();
        for (k, r) in records.iter().enumerate() {
            if r.id.is_empty() {
                return Err(SstaError::InvalidGraph("node ids must be non-empty".into()));
            }
            if index.insert(r.id.clone(), k).is_some() {
                return Err(SstaError::InvalidGraph(format!(
                    "node `{}` is declared twice",
                    r.id
                )));
            }
        }

        let mut arrivals = BTreeMap::new();
        for s in &doc.sources {
            let k = index[&s.id];
            if records[k].kind != NodeKind::Source {
                return Err(SstaError::InvalidGraph(format!(
                    "`{}` has an arrival but is declared as a {:?} node",
                    s.id, records[k].kind
                )));
            }
            s.arrival
                .validate()
                .map_err(|e| SstaError::InvalidGraph(format!("source `{}`: {e}", s.id)))?;
            if arrivals.insert(k, s.arrival).is_some() {
                return Err(SstaError::InvalidGraph(format!(
                    "source `{}` has two arrivals",
                    s.id
                )));
            }
        }

        let mut nodes = Vec::with_capacity(records.len());
        for (k, r) in records.iter().enumerate() {
            let mut inputs = Vec::with_capacity(r.inputs.len());
            for name in &r.inputs {
                let &from = index.get(name).ok_or_else(|| SstaError::DanglingEdge {
                    from: name.clone(),
                    to: r.id.clone(),
                    missing: name.clone(),
                })?;
                if from == k {
                    return Err(SstaError::Cycle(vec![r.id.clone(), r.id.clone()]));
                }
                if inputs.contains(&from) {
                    return Err(SstaError::InvalidGraph(format!(
                        "node `{}` lists input `{name}` twice",
                        r.id
                    )));
                }
                inputs.push(from);
            }
            validate_record(r, &inputs, arrivals.contains_key(&k))?;
            nodes.push(NodeSpec {
                id: r.id.clone(),
                kind: r.kind,
                op_time: r.op_time,
                inputs,
                input_rho: r.input_rho.unwrap_or(0.0),
            });
        }

        let mut fanout = vec![Vec::new(); nodes.len()];
        for (k, n) in nodes.iter().enumerate() {
            for &i in &n.inputs {
                if nodes[i].kind == NodeKind::Sink {
                    return Err(SstaError::InvalidGraph(format!(
                        "sink `{}` cannot drive `{}`",
                        nodes[i].id, n.id
                    )));
                }
                fanout[i].push(k);
            }
        }
        validate_correlations(&nodes)?;

        let mut g = TimingGraph {
            nodes,
            index,
            arrivals,
            fanout,
            levels: Vec::new(),
            level_of: Vec::new(),
        };
        g.levels = compute_levels(&g)?;
        g.level_of = vec![0; g.nodes.len()];
        for (l, level) in g.levels.iter().enumerate() {
            for &k in level {
                g.level_of[k] = l;
            }
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &NodeSpec {
        &self.nodes[k]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn arrival(&self, k: usize) -> Option<GaussianParams> {
        self.arrivals.get(&k).copied()
    }

    pub fn fanout(&self, k: usize) -> &[usize] {
        &self.fanout[k]
    }

    /// (from, to) pairs in node order, inputs in declared order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(k, n)| n.inputs.iter().map(move |&i| (i, k)))
            .collect()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.filter_kind(NodeKind::Source)
    }

    /// Declared sink nodes, or nodes without fanout when none are declared.
    pub fn sinks(&self) -> Vec<usize> {
        let declared = self.filter_kind(NodeKind::Sink);
        if !declared.is_empty() {
            return declared;
        }
        let mut outs: Vec<usize> = (0..self.len()).filter(|&k| self.fanout[k].is_empty()).collect();
        outs.sort_by(|&a, &b| self.nodes[a].id.cmp(&self.nodes[b].id));
        outs
    }

    fn filter_kind(&self, kind: NodeKind) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.len()).filter(|&k| self.nodes[k].kind == kind).collect();
        v.sort_by(|&a, &b| self.nodes[a].id.cmp(&self.nodes[b].id));
        v
    }

    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn level_of(&self, k: usize) -> usize {
        self.level_of[k]
    }

    /// Levels as id lists.
    pub fn level_ids(&self) -> Vec<Vec<String>> {
        self.levels
            .iter()
            .map(|l| l.iter().map(|&k| self.nodes[k].id.clone()).collect())
            .collect()
    }

    /// Nodes level by level.
    pub fn visit_order(&self) -> Vec<usize> {
        self.levels.iter().flatten().copied().collect()
    }

    /// Characteristic time scale: the largest σ or |μ| declared anywhere, or 1.
    pub fn scale(&self) -> f64 {
        let params = self
            .arrivals
            .values()
            .chain(self.nodes.iter().filter_map(|n| n.op_time.as_ref()));
        let s = params.fold(0.0f64, |m, p| m.max(p.sigma));
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }
}

fn validate_record(r: &NodeRecord, inputs: &[usize], has_arrival: bool) -> Result<()> {
    let fail = |msg: String| Err(SstaError::InvalidGraph(format!("node `{}`: {msg}", r.id)));
    if let Some(rho) = r.input_rho {
        if r.kind != NodeKind::Gate {
            return fail("input_rho is only meaningful on gates".into());
        }
        if !(-1.0..=1.0).contains(&rho) {
            return fail(format!("input_rho must lie in [-1, 1], got {rho}"));
        }
    }
    match r.kind {
        NodeKind::Source => {
            if !inputs.is_empty() {
                return fail("sources cannot have inputs".into());
            }
            if r.op_time.is_some() {
                return fail("sources carry an arrival, not an op_time".into());
            }
            if !has_arrival {
                return Err(SstaError::MissingArrival(r.id.clone()));
            }
        }
        NodeKind::Gate => {
            if inputs.is_empty() {
                return fail("gates need at least one input".into());
            }
            let Some(op) = r.op_time else {
                return fail("gates must declare op_time".into());
            };
            op.validate().or_else(|e| fail(e.to_string()))?;
        }
        NodeKind::Sink => {
            if inputs.is_empty() {
                return fail("sinks need at least one input".into());
            }
            if r.op_time.is_some() {
                return fail("sinks carry no op_time; fold wire delay into the driving gate".into());
            }
        }
    }
    Ok(())
}

/// A declared correlation is only realisable (and only used) between two
/// source arrivals, each of which belongs to at most one correlated pair.
fn validate_correlations(nodes: &[NodeSpec]) -> Result<()> {
    let mut used = BTreeMap::new();
    for n in nodes.iter().filter(|n| n.input_rho != 0.0) {
        let fail = |msg: String| Err(SstaError::InvalidGraph(format!("node `{}`: {msg}", n.id)));
        if n.inputs.len() != 2 {
            return fail("input_rho needs exactly two inputs".into());
        }
        for &i in &n.inputs {
            if nodes[i].kind != NodeKind::Source {
                return fail(format!(
                    "input_rho is supported only between source arrivals; `{}` is not a source",
                    nodes[i].id
                ));
            }
            if let Some(other) = used.insert(i, n.id.clone()) {
                return fail(format!(
                    "source `{}` is already correlated at gate `{other}`",
                    nodes[i].id
                ));
            }
        }
    }
    Ok(())
}

/// Kahn levelization; ids are sorted lexicographically within a level.
fn compute_levels(g: &TimingGraph) -> Result<Vec<Vec<usize>>> {
    let n = g.nodes.len();
    let mut indegree: Vec<usize> = g.nodes.iter().map(|s| s.inputs.len()).collect();
    let by_id = |v: &mut Vec<usize>| v.sort_by(|&a, &b| g.nodes[a].id.cmp(&g.nodes[b].id));
    let mut current: Vec<usize> = (0..n).filter(|&k| indegree[k] == 0).collect();
    by_id(&mut current);
    let mut levels = Vec::new();
    let mut seen = 0;
    while !current.is_empty() {
        seen += current.len();
        let mut next = Vec::new();
        for &k in &current {
            for &v in &g.fanout[k] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    next.push(v);
                }
            }
        }
        by_id(&mut next);
        levels.push(std::mem::replace(&mut current, next));
    }
    if seen < n {
        return Err(SstaError::Cycle(find_cycle(g, &indegree)));
    }
    Ok(levels)
}

/// Walks predecessors among the nodes Kahn could not remove until one
/// repeats; returns the cycle in edge direction with the first id repeated.
fn find_cycle(g: &TimingGraph, indegree: &[usize]) -> Vec<String> {
    let stuck = |k: usize| indegree[k] > 0;
    let start = (0..g.nodes.len())
        .filter(|&k| stuck(k))
        .min_by(|&a, &b| g.nodes[a].id.cmp(&g.nodes[b].id))
        .expect("a cycle leaves nodes with positive indegree");
    let mut path = vec![start];
    let mut pos = BTreeMap::from([(start, 0usize)]);
    let mut cur = start;
    loop {
        let prev = *g.nodes[cur]
            .inputs
            .iter()
            .find(|&&i| stuck(i))
            .expect("stuck nodes have a stuck predecessor");
        if let Some(&p) = pos.get(&prev) {
            let mut cycle: Vec<String> = path[p..].iter().rev().map(|&k| g.nodes[k].id.clone()).collect();
            let first = (0..cycle.len())
                .min_by(|&a, &b| cycle[a].cmp(&cycle[b]))
                .unwrap_or(0);
            cycle.rotate_left(first);
            cycle.push(cycle[0].clone());
            return cycle;
        }
        pos.insert(prev, path.len());
        path.push(prev);
        cur = prev;
    }
}

/// Levels of a validated graph as id lists.
pub fn levelize(g: &TimingGraph) -> Vec<Vec<String>> {
    g.level_ids()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> &'static str {
        r#"{
            "nodes": [
                {"id": "a", "kind": "source"},
                {"id": "g", "kind": "gate", "op_time": {"mu": 1.0, "sigma": 0.1}, "inputs": ["a"]},
                {"id": "out", "kind": "sink", "inputs": ["g"]}
            ],
            "sources": [{"id": "a", "arrival": {"mu": 0.0, "sigma": 1.0}}]
        }"#
    }

    fn gate(id: &str, inputs: &[&str]) -> String {
        let ins: Vec<String> = inputs.iter().map(|s| format!("\"{s}\"")).collect();
        format!(
            r#"{{"id": "{id}", "kind": "gate", "op_time": {{"mu": 1.0, "sigma": 0.2}}, "inputs": [{}]}}"#,
            ins.join(", ")
        )
    }

    fn doc(nodes: &[String], sources: &[&str]) -> String {
        let srcs: Vec<String> = sources
            .iter()
            .map(|s| format!(r#"{{"id": "{s}", "arrival": {{"mu": 0.0, "sigma": 1.0}}}}"#))
            .collect();
        format!(
            r#"{{"nodes": [{}], "sources": [{}]}}"#,
            nodes.join(", "),
            srcs.join(", ")
        )
    }

    #[test]
    fn chain_levels() {
        let g = load_graph(chain()).unwrap();
        assert_eq!(levelize(&g), vec![vec!["a"], vec!["g"], vec!["out"]]);
        assert_eq!(g.sinks(), vec![2]);
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn diamond_and_parallel_chains() {
        let g = load_graph(&doc(
            &[gate("b", &["s"]), gate("a", &["s"]), gate("t", &["a", "b"])],
            &["s"],
        ))
        .unwrap();
        assert_eq!(levelize(&g), vec![vec!["s"], vec!["a", "b"], vec!["t"]]);

        let nodes: Vec<String> = (1..5)
            .map(|k| gate(&format!("n{k}"), &[&format!("n{}", k - 1)]))
            .collect();
        let g = load_graph(&doc(&nodes, &["n0"])).unwrap();
        assert_eq!(g.levels().len(), 5);
        assert!(g.levels().iter().all(|l| l.len() == 1));

        let g = load_graph(&doc(
            &[gate("x1", &["x0"]), gate("x2", &["x1"]), gate("y1", &["y0"])],
            &["x0", "y0"],
        ))
        .unwrap();
        assert_eq!(levelize(&g), vec![vec!["x0", "y0"], vec!["x1", "y1"], vec!["x2"]]);
        for (u, v) in g.edges() {
            assert!(g.level_of(u) < g.level_of(v));
        }
    }

    #[test]
    fn structural_errors() {
        let dangling = load_graph(&doc(&[gate("g", &["s", "ghost"])], &["s"])).unwrap_err();
        assert!(matches!(dangling, SstaError::DanglingEdge { ref missing, .. } if missing == "ghost"));

        let self_loop = load_graph(&doc(&[gate("g", &["s", "g"])], &["s"])).unwrap_err();
        assert!(matches!(self_loop, SstaError::Cycle(_)));

        let cyc = load_graph(&doc(
            &[gate("a", &["s", "c"]), gate("b", &["a"]), gate("c", &["b"])],
            &["s"],
        ))
        .unwrap_err();
        let SstaError::Cycle(ids) = cyc else {
            panic!("expected a cycle")
        };
        assert_eq!(ids, vec!["a", "b", "c", "a"]);

        let missing = load_graph(r#"{"nodes": [{"id": "s", "kind": "source"}]}"#).unwrap_err();
        assert_eq!(missing, SstaError::MissingArrival("s".into()));
    }

    #[test]
    fn strict_parsing() {
        let typo = r#"{"nodes": [{"id": "s", "kind": "source", "opt_time": {"mu": 1, "sigma": 0}}]}"#;
        let SstaError::Parse { line, message, .. } = load_graph(typo).unwrap_err() else {
            panic!("expected a parse error")
        };
        assert_eq!(line, 1);
        assert!(message.contains("opt_time"));
        assert!(matches!(
            load_graph("{\n  \"nodes\": [\n    {\"id\": 3}\n  ]\n}").unwrap_err(),
            SstaError::Parse { line: 3, .. }
        ));
        let bad_kind = r#"{"nodes": [{"id": "s", "kind": "flop"}]}"#;
        assert!(matches!(
            load_graph(bad_kind).unwrap_err(),
            SstaError::Parse { .. }
        ));
    }

    #[test]
    fn semantic_validation() {
        let no_op = r#"{"nodes": [{"id": "g", "kind": "gate", "inputs": ["s"]}], "sources": [{"id": "s", "arrival": {"mu": 0, "sigma": 1}}]}"#;
        assert!(matches!(
            load_graph(no_op).unwrap_err(),
            SstaError::InvalidGraph(_)
        ));
        let neg = r#"{"nodes": [{"id": "g", "kind": "gate", "inputs": ["s"], "op_time": {"mu": 0, "sigma": -1}}], "sources": [{"id": "s", "arrival": {"mu": 0, "sigma": 1}}]}"#;
        assert!(load_graph(neg).is_err());
        let rho_on_gates = doc(
            &[
                gate("g", &["s"]),
                r#"{"id": "h", "kind": "gate", "op_time": {"mu": 0, "sigma": 1}, "inputs": ["g", "t"], "input_rho": 0.5}"#.into(),
            ],
            &["s", "t"],
        );
        assert!(matches!(
            load_graph(&rho_on_gates).unwrap_err(),
            SstaError::InvalidGraph(_)
        ));
        let ok_rho = doc(
            &[r#"{"id": "h", "kind": "gate", "op_time": {"mu": 0, "sigma": 1}, "inputs": ["s", "t"], "input_rho": 0.5}"#.into()],
            &["s", "t"],
        );
        let g = load_graph(&ok_rho).unwrap();
        assert_eq!(g.node(g.index_of("h").unwrap()).input_rho, 0.5);
        let sink_drives = doc(
            &[
                r#"{"id": "o", "kind": "sink", "inputs": ["s"]}"#.into(),
                gate("g", &["o"]),
            ],
            &["s"],
        );
        assert!(load_graph(&sink_drives).is_err());
    }
}

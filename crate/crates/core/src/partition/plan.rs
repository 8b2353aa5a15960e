use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Edge, LayerKind, NetworkGraph, NodeId};

pub type ChipId = usize;

/// How layers are assigned to chips.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Near-equal runs of the topological order, one run per chip.
    Contiguous,
    /// A user-supplied chip for every node.
    Explicit(BTreeMap<NodeId, ChipId>),
}

/// Node-to-chip assignment plus the cross-chip edges it induces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartitionPlan {
    n_chips: usize,
    assignment: Vec<ChipId>,
    boundaries: Vec<Edge>,
}

impl PartitionPlan {
    /// Validates `assignment` against `graph`: one entry per node, chip ids
    /// in range and every chip used.
    pub fn from_assignment(
        graph: &NetworkGraph,
        n_chips: usize,
        assignment: Vec<ChipId>,
    ) -> Result<Self> {
        if n_chips == 0 {
            return Err(Error::Config("n_chips must be >= 1".into()));
        }
        if assignment.len() != graph.len() {
            return Err(Error::Config(format!(
                "assignment covers {} nodes, graph has {}",
                assignment.len(),
                graph.len()
            )));
        }
        let mut used = vec![false; n_chips];
        for (id, &chip) in assignment.iter().enumerate() {
            if chip >= n_chips {
                return Err(Error::Config(format!(
                    "node {id} ({}) assigned to chip {chip}, only {n_chips} chips exist",
                    graph.node(id).name
                )));
            }
            used[chip] = true;
        }
        if let Some(idle) = used.iter().position(|u| !u) {
            return Err(Error::Config(format!("chip {idle} has no layers assigned")));
        }
        let boundaries = graph
            .edges()
            .iter()
            .copied()
            .filter(|e| assignment[e.src] != assignment[e.dst])
            .collect();
        Ok(Self {
            n_chips,
            assignment,
            boundaries,
        })
    }

    /// Everything on chip 0.
    pub fn single_chip(graph: &NetworkGraph) -> Self {
        Self::from_assignment(graph, 1, vec![0; graph.len()]).expect("one chip is always valid")
    }

    pub fn n_chips(&self) -> usize {
        self.n_chips
    }

    pub fn assignment(&self) -> &[ChipId] {
        &self.assignment
    }

    pub fn chip(&self, id: NodeId) -> ChipId {
        self.assignment[id]
    }

    pub fn boundaries(&self) -> &[Edge] {
        &self.boundaries
    }

    /// Nodes assigned to `chip`, in topological order.
    pub fn nodes_on(&self, chip: ChipId) -> Vec<NodeId> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == chip)
            .collect()
    }

    /// Whether this plan was built for `graph` (same node count and the
    /// stored boundary set is still the cross-chip edge set).
    pub fn check(&self, graph: &NetworkGraph) -> Result<()> {
        let fresh = Self::from_assignment(graph, self.n_chips, self.assignment.clone())?;
        if fresh.boundaries != self.boundaries {
            return Err(Error::Config(
                "partition plan does not belong to this graph".into(),
            ));
        }
        Ok(())
    }
}

/// Assigns every node of `graph` to one of `n_chips` chips.
///
/// `n_chips` is bounded by the number of layers (nodes other than the
/// input). Contiguous cuts start from the equal split of the layer order and
/// move to the nearest position where every crossing edge leaves the same
/// node, so each cut costs a single activation. Positions that start a
/// report row win over those that split a layer from its BatchNorm/ReLU.
/// The input node shares chip 0.
pub fn partition(
    graph: &NetworkGraph,
    n_chips: usize,
    strategy: &Strategy,
) -> Result<PartitionPlan> {
    let layers: Vec<NodeId> = graph
        .nodes()
        .iter()
        .filter(|n| !matches!(n.kind, LayerKind::Input { .. }))
        .map(|n| n.id)
        .collect();
    if n_chips == 0 || n_chips > layers.len() {
        return Err(Error::Config(format!(
            "n_chips must lie in 1..={}, got {n_chips}",
            layers.len()
        )));
    }
    match strategy {
        Strategy::Explicit(map) => {
            let mut assignment = Vec::with_capacity(graph.len());
            for node in graph.nodes() {
                let chip = map.get(&node.id).ok_or_else(|| {
                    Error::Config(format!(
                        "explicit map has no chip for node {} ({})",
                        node.id, node.name
                    ))
                })?;
                assignment.push(*chip);
            }
            if let Some(extra) = map.keys().find(|&&id| id >= graph.len()) {
                return Err(Error::Config(format!(
                    "explicit map names unknown node {extra}"
                )));
            }
            PartitionPlan::from_assignment(graph, n_chips, assignment)
        }
        Strategy::Contiguous => {
            let cuts = contiguous_cuts(graph, &layers, n_chips);
            let mut assignment = vec![0; graph.len()];
            let mut chip = 0;
            for (pos, &id) in layers.iter().enumerate() {
                while chip < cuts.len() && pos >= cuts[chip] {
                    chip += 1;
                }
                assignment[id] = chip;
            }
            PartitionPlan::from_assignment(graph, n_chips, assignment)
        }
    }
}

/// Cut positions into `layers`: chip `i` receives `layers[cuts[i-1]..cuts[i]]`.
fn contiguous_cuts(graph: &NetworkGraph, layers: &[NodeId], n_chips: usize) -> Vec<usize> {
    let n = layers.len();
    let mut rank = vec![0; graph.len()];
    for (pos, &id) in layers.iter().enumerate() {
        rank[id] = pos;
    }
    let is_input = |id: NodeId| id == graph.input();
    // A cut at `p` is clean when every edge from layers[..p] into layers[p..]
    // has the same source.
    let clean: Vec<bool> = (0..=n)
        .map(|p| {
            let mut src = None;
            graph.edges().iter().all(|e| {
                let before = is_input(e.src) || rank[e.src] < p;
                let after = !is_input(e.dst) && rank[e.dst] >= p;
                if !(before && after) || is_input(e.src) {
                    return true;
                }
                match src {
                    None => {
                        src = Some(e.src);
                        true
                    }
                    Some(s) => s == e.src,
                }
            })
        })
        .collect();
    // Clean cuts that also start a report row keep a layer together with its
    // BatchNorm/ReLU; they are preferred over other clean cuts.
    let row_start = |p: usize| p == n || graph.node(layers[p]).kind.is_report_row();

    let mut cuts = Vec::with_capacity(n_chips - 1);
    let mut lo = 1;
    for i in 1..n_chips {
        let hi = n - (n_chips - i);
        let ideal = (i * n + n_chips / 2) / n_chips;
        let ideal = ideal.clamp(lo, hi);
        let nearest = |ok: &dyn Fn(usize) -> bool| {
            (lo..=hi)
                .filter(|&p| ok(p))
                .min_by_key(|&p| (p.abs_diff(ideal), p))
        };
        let best = nearest(&|p| clean[p] && row_start(p))
            .or_else(|| nearest(&|p| clean[p]))
            .unwrap_or(ideal);
        cuts.push(best);
        lo = best + 1;
    }
    cuts
}

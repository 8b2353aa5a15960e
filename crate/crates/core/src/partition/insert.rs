use std::collections::BTreeMap;

use super::plan::{ChipId, PartitionPlan};
use crate::error::Result;
use crate::model::{mid_channels, BottleneckRatio, LayerKind, LayerNode, NetworkGraph, NodeId};

/// Wraps every chip crossing in an encode/decode pair of pointwise convs.
///
/// Each distinct (producer, receiving chip) pair gets one encode on the
/// sender chip, placed right after the producer, and one decode on the
/// receiver, placed right before its first consumer there. All consumers of
/// the producer on that chip read the decode instead, so a crossing moves
/// `mid_channels(c, r)` channels. With `r = 1` the inputs are returned as is.
pub fn insert_boundary_bottlenecks(
    graph: &NetworkGraph,
    plan: &PartitionPlan,
    r: BottleneckRatio,
) -> Result<(NetworkGraph, PartitionPlan)> {
    plan.check(graph)?;
    if r.get() == 1 || plan.boundaries().is_empty() {
        return Ok((graph.clone(), plan.clone()));
    }

    // (src, receiving chip) -> first consumer on that chip
    let mut crossings: BTreeMap<(NodeId, ChipId), NodeId> = BTreeMap::new();
    for e in plan.boundaries() {
        let slot = crossings.entry((e.src, plan.chip(e.dst))).or_insert(e.dst);
        *slot = (*slot).min(e.dst);
    }

    #[derive(Clone, Copy)]
    enum Slot {
        Orig(NodeId),
        Encode(NodeId, ChipId),
        Decode(NodeId, ChipId),
    }
    let mut order = Vec::with_capacity(graph.len() + 2 * crossings.len());
    for id in 0..graph.len() {
        for (&(src, chip), _) in crossings.iter().filter(|(_, &first)| first == id) {
            order.push(Slot::Decode(src, chip));
        }
        order.push(Slot::Orig(id));
        for &(src, chip) in crossings.keys().filter(|(src, _)| *src == id) {
            order.push(Slot::Encode(src, chip));
        }
    }

    let mut new_id = vec![0; graph.len()];
    let mut encode_id = BTreeMap::new();
    let mut decode_id = BTreeMap::new();
    for (pos, slot) in order.iter().enumerate() {
        match *slot {
            Slot::Orig(id) => new_id[id] = pos,
            Slot::Encode(src, chip) => {
                encode_id.insert((src, chip), pos);
            }
            Slot::Decode(src, chip) => {
                decode_id.insert((src, chip), pos);
            }
        }
    }

    let mut nodes = Vec::with_capacity(order.len());
    let mut assignment = Vec::with_capacity(order.len());
    for (pos, slot) in order.iter().enumerate() {
        let (name, kind, inputs, chip) = match *slot {
            Slot::Orig(id) => {
                let node = graph.node(id);
                let chip = plan.chip(id);
                let inputs = node
                    .inputs
                    .iter()
                    .map(|&src| match decode_id.get(&(src, chip)) {
                        Some(&d) if plan.chip(src) != chip => d,
                        _ => new_id[src],
                    })
                    .collect();
                (node.name.clone(), node.kind.clone(), inputs, chip)
            }
            Slot::Encode(src, chip) => {
                let c = graph.shape(src).c;
                let kind = LayerKind::BottleneckEncode {
                    c_in: c,
                    c_mid: mid_channels(c, r),
                };
                let name = format!("{}.to_chip{chip}.encode", graph.node(src).name);
                (name, kind, vec![new_id[src]], plan.chip(src))
            }
            Slot::Decode(src, chip) => {
                let c = graph.shape(src).c;
                let kind = LayerKind::BottleneckDecode {
                    c_mid: mid_channels(c, r),
                    c_out: c,
                };
                let name = format!("{}.to_chip{chip}.decode", graph.node(src).name);
                (name, kind, vec![encode_id[&(src, chip)]], chip)
            }
        };
        nodes.push(LayerNode {
            id: pos,
            name,
            kind,
            inputs,
        });
        assignment.push(chip);
    }
    let bottlenecked = NetworkGraph::new(nodes, graph.input_shape())?;
    let plan = PartitionPlan::from_assignment(&bottlenecked, plan.n_chips(), assignment)?;
    Ok((bottlenecked, plan))
}

use std::collections::{BTreeSet, HashMap};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;
use std::thread;

use super::exec::{check_link, report_from_node_bytes};
use crate::error::{Error, Result};
use crate::model::{Model, NodeId};
use crate::partition::{report_layout, ChipId, LinkModel, PartitionPlan, TrafficReport};
use crate::tensor::{Scalar, Tensor};

enum Msg<T> {
    /// External input `i`, delivered to the chip holding the input node.
    Feed(usize, Arc<Tensor<T>>),
    /// Output of `node` for input `i`, produced on another chip.
    Value(usize, NodeId, Arc<Tensor<T>>),
}

/// Receiving chips of every chip. Fails when chips exchange data in a cycle.
fn chip_links(plan: &PartitionPlan) -> Result<Vec<BTreeSet<ChipId>>> {
    let k = plan.n_chips();
    let mut out = vec![BTreeSet::new(); k];
    for e in plan.boundaries() {
        out[plan.chip(e.src)].insert(plan.chip(e.dst));
    }
    let mut indeg = vec![0; k];
    for targets in &out {
        for &d in targets {
            indeg[d] += 1;
        }
    }
    let mut ready: Vec<ChipId> = (0..k).filter(|&c| indeg[c] == 0).collect();
    let mut seen = 0;
    while let Some(c) = ready.pop() {
        seen += 1;
        for &d in &out[c] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.push(d);
            }
        }
    }
    if seen != k {
        return Err(Error::Config(
            "pipelined execution needs an acyclic chip-to-chip data flow".into(),
        ));
    }
    Ok(out)
}

struct Worker<'a, T> {
    model: &'a Model<T>,
    plan: &'a PartitionPlan,
    chip: ChipId,
    nodes: Vec<NodeId>,
    inbox: Receiver<Msg<T>>,
    peers: Vec<Option<SyncSender<Msg<T>>>>,
    sink: Option<SyncSender<(usize, Tensor<T>)>>,
    word: u64,
}

impl<T: Scalar> Worker<'_, T> {
    /// Returns `(node, bytes)` records for every input, in input order.
    fn run(self, n_inputs: usize) -> Result<Vec<Vec<(NodeId, u64)>>> {
        let g = self.model.graph();
        let mut stash: HashMap<(usize, NodeId), Arc<Tensor<T>>> = HashMap::new();
        let mut feeds: HashMap<usize, Arc<Tensor<T>>> = HashMap::new();
        let mut records = Vec::with_capacity(n_inputs);
        for i in 0..n_inputs {
            let mut local: HashMap<NodeId, Arc<Tensor<T>>> = HashMap::new();
            let mut rec = Vec::with_capacity(self.nodes.len());
            for &id in &self.nodes {
                let node = g.node(id);
                let mut ins = Vec::with_capacity(node.inputs.len());
                if id == g.input() {
                    ins.push(self.wait(&mut feeds, &mut stash, i, None)?);
                }
                for &src in &node.inputs {
                    let t = if self.plan.chip(src) == self.chip {
                        Arc::clone(&local[&src])
                    } else {
                        self.wait(&mut feeds, &mut stash, i, Some(src))?
                    };
                    ins.push(t);
                }
                let refs: Vec<&Tensor<T>> = ins.iter().map(|t| t.as_ref()).collect();
                let out = Arc::new(self.model.eval_node(id, &refs)?);
                rec.push((id, out.len() as u64 * self.word));
                let targets: BTreeSet<ChipId> = g
                    .consumers(id)
                    .iter()
                    .map(|&d| self.plan.chip(d))
                    .filter(|&c| c != self.chip)
                    .collect();
                for c in targets {
                    let tx = self.peers[c]
                        .as_ref()
                        .expect("link to every receiving chip");
                    tx.send(Msg::Value(i, id, Arc::clone(&out)))
                        .map_err(|_| Error::Disconnected)?;
                }
                if id == g.output() {
                    let sink = self.sink.as_ref().expect("output chip has a sink");
                    sink.send((i, out.as_ref().clone()))
                        .map_err(|_| Error::Disconnected)?;
                }
                local.insert(id, out);
            }
            stash.retain(|&(j, _), _| j != i);
            records.push(rec);
        }
        Ok(records)
    }

    /// Blocks until the value for `(i, src)` (or feed `i` when `src` is
    /// `None`) has arrived, stashing anything else received meanwhile.
    fn wait(
        &self,
        feeds: &mut HashMap<usize, Arc<Tensor<T>>>,
        stash: &mut HashMap<(usize, NodeId), Arc<Tensor<T>>>,
        i: usize,
        src: Option<NodeId>,
    ) -> Result<Arc<Tensor<T>>> {
        loop {
            let hit = match src {
                None => feeds.remove(&i),
                Some(s) => stash.get(&(i, s)).cloned(),
            };
            if let Some(t) = hit {
                return Ok(t);
            }
            match self.inbox.recv().map_err(|_| Error::Disconnected)? {
                Msg::Feed(j, t) => {
                    feeds.insert(j, t);
                }
                Msg::Value(j, s, t) => {
                    stash.insert((j, s), t);
                }
            }
        }
    }
}

/// Pipeline-parallel execution: one worker thread per chip runs that chip's
/// layers for each input in turn, handing activations to other chips over
/// bounded FIFO channels of capacity `depth`. Successive inputs overlap
/// across chips. Outputs and the summed report equal those of sequential
/// execution.
pub fn pipelined_forward<T: Scalar>(
    model: &Model<T>,
    inputs: &[Tensor<T>],
    plan: &PartitionPlan,
    link: &LinkModel,
    depth: usize,
) -> Result<(Vec<Tensor<T>>, TrafficReport)> {
    if inputs.is_empty() {
        return Err(Error::Usage(
            "pipelined execution needs at least one input".into(),
        ));
    }
    if depth == 0 {
        return Err(Error::Config("pipeline queue depth must be >= 1".into()));
    }
    check_link::<T>(link)?;
    let g = model.graph();
    let layout = report_layout(g, plan)?;
    let links = chip_links(plan)?;
    let k = plan.n_chips();
    let n = inputs.len();

    let (txs, rxs): (Vec<_>, Vec<_>) = (0..k).map(|_| sync_channel::<Msg<T>>(depth)).unzip();
    let (sink_tx, sink_rx) = sync_channel::<(usize, Tensor<T>)>(depth);
    let input_chip = plan.chip(g.input());
    let output_chip = plan.chip(g.output());
    let feed_tx = txs[input_chip].clone();

    let mut workers = Vec::with_capacity(k);
    for (chip, inbox) in rxs.into_iter().enumerate() {
        let peers = (0..k)
            .map(|c| links[chip].contains(&c).then(|| txs[c].clone()))
            .collect();
        workers.push(Worker {
            model,
            plan,
            chip,
            nodes: plan.nodes_on(chip),
            inbox,
            peers,
            sink: (chip == output_chip).then(|| sink_tx.clone()),
            word: link.word_size as u64,
        });
    }
    drop(txs);
    drop(sink_tx);

    let (outputs, results) = thread::scope(|s| {
        let handles: Vec<_> = workers
            .into_iter()
            .map(|w| s.spawn(move || w.run(n)))
            .collect();
        let feeder = s.spawn(move || {
            for (i, x) in inputs.iter().enumerate() {
                if feed_tx.send(Msg::Feed(i, Arc::new(x.clone()))).is_err() {
                    break;
                }
            }
        });
        let mut outputs: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        for _ in 0..n {
            match sink_rx.recv() {
                Ok((i, y)) => outputs[i] = Some(y),
                Err(_) => break,
            }
        }
        drop(sink_rx);
        let results: Vec<_> = handles
            .into_iter()
            .map(|h| h.join().expect("pipeline worker panicked"))
            .collect();
        feeder.join().expect("pipeline feeder panicked");
        (outputs, results)
    });

    // A failing worker makes its peers see hang-ups; report the root cause.
    let mut records = Vec::with_capacity(k);
    let mut hung_up = false;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(Error::Disconnected) => hung_up = true,
            Err(e) => return Err(e),
        }
    }
    if hung_up {
        return Err(Error::Disconnected);
    }

    let mut reports = Vec::with_capacity(n);
    for i in 0..n {
        let mut node_bytes = vec![0u64; g.len()];
        for rec in &records {
            for &(id, b) in &rec[i] {
                node_bytes[id] = b;
            }
        }
        reports.push(report_from_node_bytes(&layout, &node_bytes, link));
    }
    let outputs = outputs
        .into_iter()
        .map(|o| o.ok_or(Error::Disconnected))
        .collect::<Result<Vec<_>>>()?;
    Ok((outputs, TrafficReport::merge(&reports, link)?))
}

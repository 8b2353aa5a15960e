use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::plan::{ChipId, PartitionPlan};
use crate::error::{Error, Result};
use crate::model::{NetworkGraph, NodeId};
use crate::tensor::{Precision, Shape};

pub const TRAFFIC_CSV_HEADER: [&str; 6] = [
    "layer_index",
    "layer_name",
    "chip",
    "bytes_out",
    "is_boundary",
    "cum_bytes",
];

/// Bytes needed to move a tensor of `shape`.
pub fn boundary_bytes(shape: Shape, word_size: usize) -> u64 {
    (shape.numel() * word_size) as u64
}

/// Alpha-beta link: a transfer of `b` bytes takes `alpha + b / beta` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub alpha: f64,
    pub beta: f64,
    pub word_size: usize,
}

impl LinkModel {
    pub fn new(alpha: f64, beta: f64, word_size: usize) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!(
                "link.alpha must be finite and >= 0, got {alpha}"
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "link.beta must be finite and > 0, got {beta}"
            )));
        }
        if word_size != 4 && word_size != 8 {
            return Err(Error::Config(format!(
                "link word size must be 4 or 8, got {word_size}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            word_size,
        })
    }

    pub fn for_precision(alpha: f64, beta: f64, precision: Precision) -> Result<Self> {
        Self::new(alpha, beta, precision.word_size())
    }

    pub fn transfer_time(&self, bytes: u64) -> f64 {
        self.alpha + bytes as f64 / self.beta
    }
}

impl Default for LinkModel {
    /// 1 us per transfer, 1 GB/s, single precision.
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            beta: 1e9,
            word_size: 4,
        }
    }
}

/// One report row: a conv, add, pool, head, encode or decode node together
/// with the BatchNorm/ReLU nodes that directly follow it on the same chip.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RowSpec {
    pub name: String,
    pub chip: ChipId,
    pub members: Vec<NodeId>,
    /// Node whose output leaves the row.
    pub last: NodeId,
    /// Distinct (member, receiving chip) pairs; zero for interior rows.
    pub transfers: usize,
}

/// Groups the graph's nodes into report rows, in topological order.
pub fn report_layout(graph: &NetworkGraph, plan: &PartitionPlan) -> Result<Vec<RowSpec>> {
    plan.check(graph)?;
    let mut rows: Vec<RowSpec> = Vec::new();
    let mut row_of: Vec<Option<usize>> = vec![None; graph.len()];
    for node in graph.nodes() {
        let chip = plan.chip(node.id);
        let fold_into = if node.kind.is_report_row() {
            None
        } else {
            node.inputs
                .first()
                .and_then(|&src| row_of[src])
                .filter(|&r| rows[r].chip == chip && rows[r].last == node.inputs[0])
        };
        match fold_into {
            Some(r) => {
                rows[r].members.push(node.id);
                rows[r].last = node.id;
                row_of[node.id] = Some(r);
            }
            None if node.id == graph.input() => {}
            None => {
                row_of[node.id] = Some(rows.len());
                rows.push(RowSpec {
                    name: node.name.clone(),
                    chip,
                    members: vec![node.id],
                    last: node.id,
                    transfers: 0,
                });
            }
        }
    }
    for row in &mut rows {
        let targets: BTreeSet<(NodeId, ChipId)> = row
            .members
            .iter()
            .flat_map(|&m| graph.consumers(m).iter().map(move |&d| (m, d)))
            .map(|(m, d)| (m, plan.chip(d)))
            .filter(|&(_, chip)| chip != row.chip)
            .collect();
        row.transfers = targets.len();
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficRow {
    pub layer_index: usize,
    pub layer_name: String,
    pub chip: ChipId,
    pub bytes_out: u64,
    pub is_boundary: bool,
    pub cum_bytes: u64,
    #[serde(default)]
    pub transfers: usize,
}

/// Per-layer output-activation volume for one or more forward passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub rows: Vec<TrafficRow>,
    pub total_bytes: u64,
    pub boundary_bytes_total: u64,
    pub est_latency_s: f64,
    /// Forward passes summed into this report.
    #[serde(default = "one")]
    pub passes: usize,
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    layer_index: usize,
    layer_name: String,
    chip: ChipId,
    bytes_out: u64,
    is_boundary: bool,
    cum_bytes: u64,
}

impl TrafficReport {
    /// Builds a report from per-row byte counts; `layer_index` starts at 1.
    pub fn from_row_bytes(layout: &[RowSpec], bytes: &[u64], link: &LinkModel) -> Self {
        assert_eq!(layout.len(), bytes.len(), "one byte count per row");
        let mut cum = 0;
        let rows = layout
            .iter()
            .zip(bytes)
            .enumerate()
            .map(|(i, (layout_row, &b))| {
                cum += b;
                TrafficRow {
                    layer_index: i + 1,
                    layer_name: layout_row.name.clone(),
                    chip: layout_row.chip,
                    bytes_out: b,
                    is_boundary: layout_row.transfers > 0,
                    cum_bytes: cum,
                    transfers: layout_row.transfers,
                }
            })
            .collect();
        Self::from_rows(rows, 1, link)
    }

    /// Recomputes totals and latency from `rows` covering `passes` forward passes.
    pub fn from_rows(rows: Vec<TrafficRow>, passes: usize, link: &LinkModel) -> Self {
        let mut report = Self {
            passes,
            total_bytes: rows.iter().map(|r| r.bytes_out).sum(),
            boundary_bytes_total: rows
                .iter()
                .filter(|r| r.is_boundary)
                .map(|r| r.bytes_out)
                .sum(),
            rows,
            est_latency_s: 0.0,
        };
        report.est_latency_s = estimate_latency(&report, link);
        report
    }

    pub fn boundary_rows(&self) -> impl Iterator<Item = &TrafficRow> {
        self.rows.iter().filter(|r| r.is_boundary)
    }

    /// Row-wise sum of reports built from the same layout, in the given order.
    pub fn merge(reports: &[TrafficReport], link: &LinkModel) -> Result<Self> {
        let (first, rest) = reports
            .split_first()
            .ok_or_else(|| Error::Usage("cannot merge an empty set of reports".into()))?;
        let mut rows = first.rows.clone();
        let mut passes = first.passes;
        for r in rest {
            passes += r.passes;
            if r.rows.len() != rows.len() {
                return Err(Error::Usage(
                    "merged reports come from different layouts".into(),
                ));
            }
            for (acc, row) in rows.iter_mut().zip(&r.rows) {
                if acc.layer_name != row.layer_name {
                    return Err(Error::Usage(
                        "merged reports come from different layouts".into(),
                    ));
                }
                acc.bytes_out += row.bytes_out;
            }
        }
        let mut cum = 0;
        for row in &mut rows {
            cum += row.bytes_out;
            row.cum_bytes = cum;
        }
        Ok(Self::from_rows(rows, passes, link))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                layer_index: r.layer_index,
                layer_name: r.layer_name.clone(),
                chip: r.chip,
                bytes_out: r.bytes_out,
                is_boundary: r.is_boundary,
                cum_bytes: r.cum_bytes,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Reads rows written by [`TrafficReport::write_csv`] for a single pass.
    /// Transfer counts are not part of the CSV, so each boundary row counts as
    /// one transfer.
    pub fn read_csv<R: Read>(input: R, link: &LinkModel) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if header != TRAFFIC_CSV_HEADER {
            return Err(Error::Format(format!(
                "unexpected traffic CSV header {header:?}"
            )));
        }
        let mut rows = Vec::new();
        for rec in rd.deserialize() {
            let r: CsvRow = rec?;
            rows.push(TrafficRow {
                layer_index: r.layer_index,
                layer_name: r.layer_name,
                chip: r.chip,
                bytes_out: r.bytes_out,
                is_boundary: r.is_boundary,
                cum_bytes: r.cum_bytes,
                transfers: usize::from(r.is_boundary),
            });
        }
        Ok(Self::from_rows(rows, 1, link))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Sequential transfer time: each transfer out of a boundary row costs
/// `alpha + bytes / beta`, once per receiving chip and pass.
pub fn estimate_latency(report: &TrafficReport, link: &LinkModel) -> f64 {
    let passes = report.passes as f64;
    report
        .boundary_rows()
        .map(|r| r.transfers.max(1) as f64 * (passes * link.alpha + r.bytes_out as f64 / link.beta))
        .sum()
}

/// Report predicted from shape annotations for a batch of `n`.
pub fn predict_report(
    graph: &NetworkGraph,
    plan: &PartitionPlan,
    link: &LinkModel,
    n: usize,
) -> Result<TrafficReport> {
    let layout = report_layout(graph, plan)?;
    let bytes: Vec<u64> = layout
        .iter()
        .map(|row| boundary_bytes(graph.shape(row.last).with_batch(n), link.word_size))
        .collect();
    Ok(TrafficReport::from_row_bytes(&layout, &bytes, link))
}

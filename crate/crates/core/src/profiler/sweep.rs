use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{BottleneckRatio, Model, NetworkGraph};
use crate::partition::{
    insert_boundary_bottlenecks, partition, predict_report, LinkModel, PartitionPlan, Strategy,
    TrafficReport,
};
use crate::tensor::Scalar;
use crate::train::{evaluate, train, TrainConfig, TrainLog};

pub const SWEEP_CSV_HEADER: [&str; 5] = [
    "ratio",
    "accuracy",
    "total_bytes",
    "boundary_bytes",
    "latency_s",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub n_chips: usize,
    pub strategy: Strategy,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            n_chips: 2,
            strategy: Strategy::Contiguous,
        }
    }
}

/// Training and held-out data for the accuracy column.
#[derive(Clone, Copy, Debug)]
pub struct EvalConfig<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub training: &'a TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: usize,
    pub accuracy: Option<f64>,
    pub total_bytes: u64,
    pub boundary_bytes: u64,
    pub latency_s: f64,
}

/// Everything produced for one ratio.
#[derive(Clone, Debug)]
pub struct SweepPoint<T> {
    pub ratio: BottleneckRatio,
    /// The network with boundary bottlenecks inserted.
    pub graph: NetworkGraph,
    pub plan: PartitionPlan,
    /// Predicted traffic for a single input.
    pub traffic: TrafficReport,
    pub model: Option<Model<T>>,
    pub log: Option<TrainLog>,
    pub row: SweepRow,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn from_points<T>(points: &[SweepPoint<T>]) -> Self {
        Self {
            rows: points.iter().map(|p| p.row.clone()).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.ratio.to_string(),
                r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                r.total_bytes.to_string(),
                r.boundary_bytes.to_string(),
                r.latency_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if header != SWEEP_CSV_HEADER {
            return Err(Error::Format(format!(
                "unexpected sweep CSV header {header:?}"
            )));
        }
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<SweepRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Whether accuracy at r=2 beats both r=1 and the next larger ratio.
    pub fn ratio_two_bump(&self) -> Option<bool> {
        let acc = |r: usize| {
            self.rows
                .iter()
                .find(|row| row.ratio == r)
                .and_then(|row| row.accuracy)
        };
        let two = acc(2)?;
        let one = acc(1)?;
        let next = self
            .rows
            .iter()
            .filter(|row| row.ratio > 2)
            .min_by_key(|row| row.ratio)
            .and_then(|row| row.accuracy)?;
        Some(two > one && two > next)
    }
}

fn sweep_point<T, F>(
    builder: &F,
    r: BottleneckRatio,
    plan_cfg: &PlanConfig,
    link: &LinkModel,
    eval: Option<&EvalConfig<'_>>,
) -> Result<SweepPoint<T>>
where
    T: Scalar,
    F: Fn(BottleneckRatio) -> Result<NetworkGraph>,
{
    let base = builder(r)?;
    let plan = partition(&base, plan_cfg.n_chips, &plan_cfg.strategy)?;
    let (graph, plan) = insert_boundary_bottlenecks(&base, &plan, r)?;
    let traffic = predict_report(&graph, &plan, link, 1)?;
    let (model, log, accuracy) = match eval {
        None => (None, None, None),
        Some(ev) => {
            let mut model = Model::<T>::init(graph.clone(), ev.training.seed);
            let log = train(&mut model, ev.train, ev.training)?;
            let acc = evaluate(&model, ev.test, ev.training.batch_size)?;
            (Some(model), Some(log), Some(acc))
        }
    };
    let row = SweepRow {
        ratio: r.get(),
        accuracy,
        total_bytes: traffic.total_bytes,
        boundary_bytes: traffic.boundary_bytes_total,
        latency_s: traffic.est_latency_s,
    };
    Ok(SweepPoint {
        ratio: r,
        graph,
        plan,
        traffic,
        model,
        log,
        row,
    })
}

/// Builds, partitions and bottlenecks the network once per ratio, and
/// trains and evaluates it when `eval` is given. Ratios run in parallel;
/// points come back sorted by ratio. Each point depends only on its own
/// ratio and the configs, so results do not depend on scheduling.
pub fn sweep_ratios<T, F>(
    builder: F,
    ratios: &[BottleneckRatio],
    plan_cfg: &PlanConfig,
    link: &LinkModel,
    eval: Option<&EvalConfig<'_>>,
) -> Result<Vec<SweepPoint<T>>>
where
    T: Scalar,
    F: Fn(BottleneckRatio) -> Result<NetworkGraph> + Sync,
{
    if ratios.is_empty() {
        return Err(Error::Config("ratios must not be empty".into()));
    }
    let mut sorted = ratios.to_vec();
    sorted.sort();
    sorted
        .par_iter()
        .map(|&r| {
            sweep_point(&builder, r, plan_cfg, link, eval).map_err(|e| Error::Sweep {
                ratio: r.get(),
                source: Box::new(e),
            })
        })
        .collect()
}

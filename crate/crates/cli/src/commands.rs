use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chipcut_core::data::{load_cifar100, synth_dataset, Dataset, Split};
use chipcut_core::model::{BottleneckRatio, Model, NetworkGraph};
use chipcut_core::partition::{insert_boundary_bottlenecks, partition, PartitionPlan, TrafficRow};
use chipcut_core::profiler::{
    pipelined_forward, profile_forward, sweep_ratios, EvalConfig, SweepReport,
};
use chipcut_core::tensor::{fan_in_uniform, param_rng, Scalar, Tensor};
use chipcut_core::Variant;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, Experiment, ValidationError};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_NOTES: &str = "sweep_notes.json";
pub const TRAFFIC_LONG_CSV: &str = "traffic_long.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const ACCURACY_DAT: &str = "accuracy_vs_ratio.dat";
pub const BYTES_DAT: &str = "bytes_vs_layer.dat";

pub fn graph_file(r: usize) -> String {
    format!("graph_r{r}.json")
}

pub fn shapes_file(r: usize) -> String {
    format!("shapes_r{r}.csv")
}

pub fn traffic_csv(r: usize) -> String {
    format!("traffic_r{r}.csv")
}

pub fn traffic_json(r: usize) -> String {
    format!("traffic_r{r}.json")
}

pub fn checkpoint_file(r: usize) -> String {
    format!("checkpoints/{}_r{r}.json", Variant::Tiny)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// The bottlenecked graph and plan for ratio `r`.
fn split_graph(exp: &Experiment, r: BottleneckRatio) -> Result<(NetworkGraph, PartitionPlan)> {
    let base = exp.build_graph(r)?;
    let plan = partition(&base, exp.plan.n_chips, &exp.plan.strategy)?;
    Ok(insert_boundary_bottlenecks(&base, &plan, r)?)
}

#[derive(Serialize)]
struct ShapeRow<'a> {
    index: usize,
    name: &'a str,
    kind: &'a str,
    chip: usize,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    params: usize,
}

/// Writes `graph_r<r>.json` and `shapes_r<r>.csv` per ratio.
pub fn cmd_build(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &r in &exp.ratios {
        let (graph, plan) = split_graph(exp, r)?;
        let gpath = exp.output_dir.join(graph_file(r.get()));
        write_text(&gpath, &(graph.to_json()? + "\n"))?;
        let spath = exp.output_dir.join(shapes_file(r.get()));
        let mut w = csv::Writer::from_writer(create(&spath)?);
        for node in graph.nodes() {
            let s = graph.shape(node.id);
            w.serialize(ShapeRow {
                index: node.id,
                name: &node.name,
                kind: node.kind.label(),
                chip: plan.chip(node.id),
                n: s.n,
                c: s.c,
                h: s.h,
                w: s.w,
                params: node.kind.param_count(),
            })?;
        }
        w.flush()?;
        written.extend([gpath, spath]);
    }
    Ok(written)
}

/// Seeded inputs in `[-1, 1)`, one stream per input index.
fn profile_inputs<T: Scalar>(exp: &Experiment) -> Vec<Tensor<T>> {
    (0..exp.profile.inputs)
        .map(|i| {
            fan_in_uniform(
                exp.input,
                6,
                &mut param_rng(exp.seed, &format!("profile.input.{i}")),
            )
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct LongRow {
    ratio: usize,
    layer_index: usize,
    bytes_out: u64,
}

/// Profiles every ratio and writes `traffic_r<r>.{csv,json}` plus the
/// combined `traffic_long.csv`.
pub fn cmd_profile<T: Scalar>(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let inputs = profile_inputs::<T>(exp);
    let mut written = Vec::new();
    let long_path = exp.output_dir.join(TRAFFIC_LONG_CSV);
    let mut long = Vec::new();
    for &r in &exp.ratios {
        let (graph, plan) = split_graph(exp, r)?;
        let model = Model::<T>::init(graph, exp.seed);
        let report = if inputs.len() == 1 {
            profile_forward(&model, &inputs[0], &plan, &exp.link)?.1
        } else {
            pipelined_forward(
                &model,
                &inputs,
                &plan,
                &exp.link,
                exp.profile.pipeline_depth,
            )?
            .1
        };
        let csv_path = exp.output_dir.join(traffic_csv(r.get()));
        let mut w = create(&csv_path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
        let json_path = exp.output_dir.join(traffic_json(r.get()));
        write_text(&json_path, &(report.to_json()? + "\n"))?;
        long.extend(report.rows.iter().map(|row| LongRow {
            ratio: r.get(),
            layer_index: row.layer_index,
            bytes_out: row.bytes_out,
        }));
        written.extend([csv_path, json_path]);
    }
    let mut w = csv::Writer::from_writer(create(&long_path)?);
    for row in &long {
        w.serialize(row)?;
    }
    w.flush()?;
    written.push(long_path);
    Ok(written)
}

fn load_data(data: &DataSource) -> Result<(Dataset, Dataset)> {
    match data {
        DataSource::Synthetic {
            cfg,
            n_train,
            n_test,
        } => Ok((
            synth_dataset(cfg, *n_train, Split::Train)?,
            synth_dataset(cfg, *n_test, Split::Test)?,
        )),
        DataSource::Cifar100 { train, test } => Ok((
            load_cifar100(train, Split::Train)?,
            load_cifar100(test, Split::Test)?,
        )),
    }
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepNotes {
    pub variant: String,
    pub trained: bool,
    /// Whether r=2 beats both r=1 and the next ratio. Recorded, not asserted.
    pub ratio_two_bump: Option<bool>,
    pub epoch_loss: BTreeMap<usize, Vec<f64>>,
}

/// Sweeps every ratio. Tiny is trained and evaluated per ratio with the
/// same hyperparameters and seed; other variants report traffic only.
pub fn cmd_sweep<T: Scalar>(exp: &Experiment) -> Result<(Vec<PathBuf>, SweepNotes)> {
    let trained = exp.variant == Variant::Tiny;
    let data = if trained {
        if !exp.input_matches_data() {
            return Err(ValidationError(format!(
                "model.input_size: training needs the dataset image size {:?}",
                exp.data.image_size()
            ))
            .into());
        }
        Some(load_data(&exp.data)?)
    } else {
        None
    };
    let eval = data.as_ref().map(|(train, test)| EvalConfig {
        train,
        test,
        training: &exp.training,
    });
    let points = sweep_ratios::<T, _>(
        |r| exp.build_graph(r),
        &exp.ratios,
        &exp.plan,
        &exp.link,
        eval.as_ref(),
    )?;
    let report = SweepReport::from_points(&points);

    let mut written = Vec::new();
    let sweep_path = exp.output_dir.join(SWEEP_CSV);
    let mut w = create(&sweep_path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    written.push(sweep_path);

    let mut epoch_loss = BTreeMap::new();
    for p in &points {
        if let Some(model) = &p.model {
            let path = exp.output_dir.join(checkpoint_file(p.ratio.get()));
            write_text(
                &path,
                &(serde_json::to_string(&model.to_checkpoint())? + "\n"),
            )?;
            written.push(path);
        }
        if let Some(log) = &p.log {
            epoch_loss.insert(p.ratio.get(), log.epoch_loss.clone());
        }
    }
    let notes = SweepNotes {
        variant: exp.variant.to_string(),
        trained,
        ratio_two_bump: report.ratio_two_bump(),
        epoch_loss,
    };
    let notes_path = exp.output_dir.join(SWEEP_NOTES);
    write_text(&notes_path, &(serde_json::to_string_pretty(&notes)? + "\n"))?;
    written.push(notes_path);
    Ok((written, notes))
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSummary {
    pub ratio: usize,
    pub file: String,
    pub layers: usize,
    pub total_bytes: u64,
    pub boundary_bytes_total: u64,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sweep_file: String,
    pub sweep: SweepReport,
    pub ratio_two_bump: Option<bool>,
    pub traffic_long_file: String,
    pub traffic: Vec<TrafficSummary>,
    pub plot_data: Vec<String>,
}

fn read_traffic_rows(path: &Path) -> Result<Vec<TrafficRow>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<TrafficRow>, _>>()?;
    Ok(rows)
}

/// Consolidates the outputs of `sweep` and `profile` found in `dir` into
/// `summary.json` and gnuplot data files.
pub fn cmd_report(dir: &Path) -> Result<(Vec<PathBuf>, Summary)> {
    let mut missing = Vec::new();
    for name in [SWEEP_CSV, TRAFFIC_LONG_CSV] {
        if !dir.join(name).is_file() {
            missing.push(name.to_string());
        }
    }
    let mut long = Vec::new();
    if missing.is_empty() {
        let mut rdr = csv::Reader::from_path(dir.join(TRAFFIC_LONG_CSV))?;
        long = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<LongRow>, _>>()?;
    }
    let mut ratios: Vec<usize> = long.iter().map(|r| r.ratio).collect();
    ratios.dedup();
    for &r in &ratios {
        if !dir.join(traffic_csv(r)).is_file() {
            missing.push(traffic_csv(r));
        }
    }
    if !missing.is_empty() {
        return Err(ValidationError(format!(
            "missing inputs in {}: {}",
            dir.display(),
            missing.join(", ")
        ))
        .into());
    }

    let sweep = SweepReport::read_csv(File::open(dir.join(SWEEP_CSV))?)?;
    let mut traffic = Vec::new();
    for &r in &ratios {
        let rows = read_traffic_rows(&dir.join(traffic_csv(r)))?;
        traffic.push(TrafficSummary {
            ratio: r,
            file: traffic_csv(r),
            layers: rows.len(),
            total_bytes: rows.iter().map(|row| row.bytes_out).sum(),
            boundary_bytes_total: rows
                .iter()
                .filter(|row| row.is_boundary)
                .map(|row| row.bytes_out)
                .sum(),
        });
    }

    let mut acc = String::from("# ratio accuracy total_bytes boundary_bytes latency_s\n");
    for row in &sweep.rows {
        let a = row
            .accuracy
            .map_or_else(|| "NaN".to_string(), |a| a.to_string());
        acc.push_str(&format!(
            "{} {a} {} {} {:e}\n",
            row.ratio, row.total_bytes, row.boundary_bytes, row.latency_s
        ));
    }
    let mut bytes = String::from("# one block per ratio: layer_index bytes_out\n");
    for (i, &r) in ratios.iter().enumerate() {
        if i > 0 {
            bytes.push_str("\n\n");
        }
        bytes.push_str(&format!("# ratio {r}\n"));
        for row in long.iter().filter(|row| row.ratio == r) {
            bytes.push_str(&format!("{} {}\n", row.layer_index, row.bytes_out));
        }
    }
    let acc_path = dir.join(ACCURACY_DAT);
    let bytes_path = dir.join(BYTES_DAT);
    write_text(&acc_path, &acc)?;
    write_text(&bytes_path, &bytes)?;

    let summary = Summary {
        sweep_file: SWEEP_CSV.into(),
        ratio_two_bump: sweep.ratio_two_bump(),
        sweep,
        traffic_long_file: TRAFFIC_LONG_CSV.into(),
        traffic,
        plot_data: vec![ACCURACY_DAT.into(), BYTES_DAT.into()],
    };
    let summary_path = dir.join(SUMMARY_JSON);
    write_text(
        &summary_path,
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    Ok((vec![summary_path, acc_path, bytes_path], summary))
}

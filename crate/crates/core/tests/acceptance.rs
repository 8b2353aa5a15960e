//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the console; exits non-zero on any FAIL.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chipcut_core::data::{
    read_cifar100, synth_dataset, write_cifar100, Split, SynthConfig, CIFAR_RECORD_BYTES,
};
use chipcut_core::model::{
    build_resnet, mid_channels, BottleneckRatio, LayerKind, Model, NetworkGraph, Variant,
};
use chipcut_core::partition::{
    insert_boundary_bottlenecks, partition, report_layout, LinkModel, PartitionPlan, Strategy,
    TrafficReport,
};
use chipcut_core::profiler::{
    pipelined_forward, profile_forward, profile_sequential, sweep_ratios, EvalConfig, PlanConfig,
};
use chipcut_core::tensor::{Shape, Tensor};
use chipcut_core::train::TrainConfig;
use chipcut_core::Result;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg32;

struct Outcome {
    pass: bool,
    detail: String,
}

fn ratio(r: usize) -> BottleneckRatio {
    BottleneckRatio::new(r).unwrap()
}

fn random_input(seed: u64, shape: Shape) -> Tensor<f32> {
    let mut rng = Pcg32::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Builds `variant` at ratio `r`, partitions it contiguously and inserts the
/// boundary bottlenecks.
fn split(
    variant: Variant,
    r: usize,
    chips: usize,
    input: Shape,
    classes: usize,
) -> Result<(NetworkGraph, PartitionPlan)> {
    let g = build_resnet(variant, ratio(r), classes, input)?;
    let plan = partition(&g, chips, &Strategy::Contiguous)?;
    insert_boundary_bottlenecks(&g, &plan, ratio(r))
}

fn measure(
    variant: Variant,
    r: usize,
    chips: usize,
    input: Shape,
) -> Result<(NetworkGraph, PartitionPlan, TrafficReport)> {
    let (g, plan) = split(variant, r, chips, input, 100)?;
    let model = Model::<f32>::init(g, 42);
    let (_, report) = profile_forward(
        &model,
        &random_input(42, input),
        &plan,
        &LinkModel::default(),
    )?;
    Ok((model.graph().clone(), plan, report))
}

fn traffic_reduction() -> Result<Outcome> {
    let input = Shape::new(1, 3, 224, 224);
    let (_, plan1, base) = measure(Variant::R18, 1, 2, input)?;
    let (_, _, reduced) = measure(Variant::R18, 8, 2, input)?;
    let c = plan1.boundaries()[0].shape.c;
    let cut = 1.0 - reduced.boundary_bytes_total as f64 / base.boundary_bytes_total as f64;
    let analytic = 1.0 - mid_channels(c, ratio(8)) as f64 / c as f64;
    let exact = reduced.boundary_bytes_total * c as u64
        == base.boundary_bytes_total * mid_channels(c, ratio(8)) as u64;
    Ok(Outcome {
        pass: c >= 8 && exact && cut >= 0.70,
        detail: format!(
            "R18 2 chips, boundary c={c}: {} -> {} bytes, reduction {:.2}% (analytic {:.2}%, need >= 70%)",
            base.boundary_bytes_total,
            reduced.boundary_bytes_total,
            100.0 * cut,
            100.0 * analytic
        ),
    })
}

/// Boundary bytes keyed by the producing layer: the encode's input when a
/// bottleneck was inserted, else the row's own output node.
fn boundary_bytes_by_producer(
    g: &NetworkGraph,
    plan: &PartitionPlan,
    report: &TrafficReport,
) -> Result<BTreeMap<String, (usize, u64)>> {
    let layout = report_layout(g, plan)?;
    Ok(layout
        .iter()
        .zip(&report.rows)
        .filter(|(_, row)| row.is_boundary)
        .map(|(layout_row, row)| {
            let last = g.node(layout_row.last);
            let producer = if matches!(last.kind, LayerKind::BottleneckEncode { .. }) {
                last.inputs[0]
            } else {
                layout_row.last
            };
            (
                g.node(producer).name.clone(),
                (g.shape(producer).c, row.bytes_out),
            )
        })
        .collect())
}

fn ratio_law() -> Result<Outcome> {
    let input = Shape::new(1, 3, 64, 64);
    let mut checked = 0;
    let mut bad = Vec::new();
    for chips in [2, 3, 4] {
        let (g, plan, rep) = measure(Variant::R18, 1, chips, input)?;
        let base = boundary_bytes_by_producer(&g, &plan, &rep)?;
        for r in BottleneckRatio::SWEEP {
            let (g, plan, rep) = measure(Variant::R18, r, chips, input)?;
            let rows = boundary_bytes_by_producer(&g, &plan, &rep)?;
            if rows.keys().ne(base.keys()) {
                bad.push(format!("{chips} chips r={r}: boundary set differs"));
                continue;
            }
            for (name, &(c, got)) in &rows {
                let m = mid_channels(c, ratio(r)) as u64;
                let one = base[name].1;
                checked += 1;
                if got * c as u64 != one * m {
                    bad.push(format!(
                        "{chips} chips r={r} {name}: {got}/{one} != {m}/{c}"
                    ));
                }
            }
        }
    }
    Ok(Outcome {
        pass: bad.is_empty() && checked > 0,
        detail: if bad.is_empty() {
            format!("{checked} boundary measurements over 2-4 chips and r in {{1,2,4,8,16,32}} match mid_channels(c,r)/c exactly")
        } else {
            bad.join("; ")
        },
    })
}

fn accuracy_trend() -> Result<Outcome> {
    let synth = SynthConfig::default();
    let train = synth_dataset(&synth, 2000, Split::Train)?;
    let test = synth_dataset(&synth, 500, Split::Test)?;
    let training = TrainConfig {
        seed: 42,
        ..TrainConfig::default()
    };
    let eval = EvalConfig {
        train: &train,
        test: &test,
        training: &training,
    };
    let input = Shape::new(1, 3, synth.h, synth.w);
    let builder = |r| build_resnet(Variant::Tiny, r, synth.classes, input);
    let ratios = [ratio(1), ratio(4), ratio(32)];
    let points = sweep_ratios::<f32, _>(
        builder,
        &ratios,
        &PlanConfig::default(),
        &LinkModel::default(),
        Some(&eval),
    )?;
    let acc: Vec<f64> = points
        .iter()
        .map(|p| p.row.accuracy.unwrap_or(f64::NAN))
        .collect();
    let gap = acc[0] - acc[2];
    Ok(Outcome {
        pass: acc[0] > acc[2] && gap >= 0.05,
        detail: format!(
            "Tiny synthetic seed 42: acc(1)={:.3} acc(4)={:.3} acc(32)={:.3}, gap {:.1} points (need >= 5)",
            acc[0],
            acc[1],
            acc[2],
            100.0 * gap
        ),
    })
}

fn gradient_oracle() -> Result<Outcome> {
    const TRIALS: usize = 20;
    let mut worst = 0.0f64;
    let mut worst_op = "";
    let mut failing = Vec::new();
    for (i, (name, case)) in common::GRAD_CASES.iter().enumerate() {
        let mut rng = common::rng(1000 + i as u64);
        let mut op_worst = 0.0f64;
        for _ in 0..TRIALS {
            op_worst = op_worst.max(case(&mut rng));
        }
        if op_worst.is_nan() || op_worst >= 1e-6 {
            failing.push(format!("{name}={op_worst:.2e}"));
        }
        if op_worst > worst {
            worst = op_worst;
            worst_op = name;
        }
    }
    Ok(Outcome {
        pass: failing.is_empty(),
        detail: if failing.is_empty() {
            format!(
                "{} ops x {TRIALS} shapes, worst relative error {worst:.2e} ({worst_op}) < 1e-6",
                common::GRAD_CASES.len()
            )
        } else {
            format!("ops over 1e-6: {}", failing.join(", "))
        },
    })
}

fn pipeline_determinism() -> Result<Outcome> {
    let link = LinkModel::default();
    let input = Shape::new(1, 3, 8, 8);
    let mut mismatches = 0;
    for trial in 0..10u64 {
        let r = BottleneckRatio::SWEEP[trial as usize % 6];
        let (g, plan) = split(Variant::Tiny, r, 2, input, 20)?;
        let model = Model::<f32>::init(g, trial);
        let inputs: Vec<_> = (0..4)
            .map(|i| random_input(trial * 10 + i, input))
            .collect();
        let (seq, seq_rep) = profile_sequential(&model, &inputs, &plan, &link)?;
        let (pipe, pipe_rep) =
            pipelined_forward(&model, &inputs, &plan, &link, 1 + trial as usize % 3)?;
        let same_out =
            seq.len() == pipe.len() && seq.iter().zip(&pipe).all(|(a, b)| bits(a) == bits(b));
        let same_rep = seq_rep == pipe_rep
            && seq_rep.est_latency_s.to_bits() == pipe_rep.est_latency_s.to_bits();
        if !(same_out && same_rep) {
            mismatches += 1;
        }
    }
    Ok(Outcome {
        pass: mismatches == 0,
        detail: format!(
            "10 trials, 4 inputs over 2 chips: {mismatches} trials differ from sequential"
        ),
    })
}

fn conv_oracle() -> Result<Outcome> {
    const CONFIGS: usize = 60;
    let mut rng = common::rng(2024);
    let worst = (0..CONFIGS)
        .map(|_| common::conv_oracle_case(&mut rng))
        .fold(0.0f64, f64::max);
    Ok(Outcome {
        pass: worst < 1e-12,
        detail: format!(
            "{CONFIGS} configs with k in {{1,3}}, worst relative error {worst:.2e} (need < 1e-12)"
        ),
    })
}

fn cifar_loader() -> Result<Outcome> {
    let mut problems = Vec::new();

    let mut rec = vec![255u8; CIFAR_RECORD_BYTES];
    rec[0] = 3;
    rec[1] = 7;
    let one = read_cifar100(&rec, Split::Train)?;
    if one.len() != 1
        || one.labels() != [7]
        || !one.images::<f64>().data().iter().all(|&v| v == 1.0)
    {
        problems.push("1-record fixture misread".to_string());
    }

    let cfg = SynthConfig {
        classes: 100,
        h: 32,
        w: 32,
        ..SynthConfig::default()
    };
    let data = synth_dataset(&cfg, 200, Split::Test)?;
    let mut bytes = Vec::new();
    write_cifar100(&data, &mut bytes)?;
    let back = read_cifar100(&bytes, Split::Test)?;
    if back.labels() != data.labels() || back.pixels() != data.pixels() {
        problems.push("round trip not bit-exact".to_string());
    }

    let lengths = [
        0,
        1,
        CIFAR_RECORD_BYTES - 1,
        CIFAR_RECORD_BYTES + 1,
        2 * CIFAR_RECORD_BYTES - 1,
    ];
    for len in lengths {
        if read_cifar100(&bytes[..len], Split::Test).is_ok() {
            problems.push(format!("accepted {len}-byte file"));
        }
    }
    Ok(Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            format!(
                "1-record fixture, 200-record round trip bit-exact, {} wrong lengths rejected",
                lengths.len()
            )
        } else {
            problems.join("; ")
        },
    })
}

fn shape_table() -> Result<Outcome> {
    const TABLE: [(&str, (usize, usize, usize)); 6] = [
        ("stem.relu2", (64, 56, 56)),
        ("layer1.1.relu_out", (64, 56, 56)),
        ("layer2.1.relu_out", (128, 28, 28)),
        ("layer3.1.relu_out", (256, 14, 14)),
        ("layer4.1.relu_out", (512, 7, 7)),
        ("pool", (512, 1, 1)),
    ];
    let g = build_resnet(Variant::R18, ratio(1), 100, Shape::new(1, 3, 224, 224))?;
    let mut wrong = Vec::new();
    for (name, (c, h, w)) in TABLE {
        match g.nodes().iter().find(|n| n.name == name) {
            Some(n) if g.shape(n.id) == Shape::new(1, c, h, w) => {}
            Some(n) => wrong.push(format!("{name}={:?}", g.shape(n.id))),
            None => wrong.push(format!("{name} missing")),
        }
    }
    if g.output_shape() != Shape::new(1, 100, 1, 1) {
        wrong.push(format!("logits={:?}", g.output_shape()));
    }
    Ok(Outcome {
        pass: wrong.is_empty(),
        detail: if wrong.is_empty() {
            "R18 on 1x3x224x224: 64x56x56, 64x56x56, 128x28x28, 256x14x14, 512x7x7, 512x1x1"
                .to_string()
        } else {
            wrong.join("; ")
        },
    })
}

type Criterion = (&'static str, Duration, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 8] = [
    (
        "traffic reduction",
        Duration::from_secs(10),
        traffic_reduction,
    ),
    ("exact ratio law", Duration::from_secs(10), ratio_law),
    ("accuracy trend", Duration::from_secs(600), accuracy_trend),
    ("gradient oracle", Duration::from_secs(60), gradient_oracle),
    (
        "pipeline determinism",
        Duration::from_secs(30),
        pipeline_determinism,
    ),
    ("convolution oracle", Duration::from_secs(60), conv_oracle),
    (
        "cifar loader bit-exactness",
        Duration::from_secs(5),
        cifar_loader,
    ),
    ("shape table", Duration::from_secs(5), shape_table),
];

fn main() -> ExitCode {
    let mut failed = 0;
    for (i, (name, budget, check)) in CRITERIA.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = took <= *budget;
        let ok = pass && in_time;
        failed += usize::from(!ok);
        println!(
            "{} [{}] {name}: {detail} ({:.2}s, budget {}s{})",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        CRITERIA.len() - failed,
        CRITERIA.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

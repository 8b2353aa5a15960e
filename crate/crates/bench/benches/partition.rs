use std::hint::black_box;

use chipcut_bench::resnet;
use chipcut_core::model::{BottleneckRatio, Variant};
use chipcut_core::partition::{
    insert_boundary_bottlenecks, partition, predict_report, LinkModel, Strategy,
};
use criterion::{criterion_group, criterion_main, Criterion};

fn partitioning(c: &mut Criterion) {
    let g = resnet(Variant::R152, 4, 224);
    let r = BottleneckRatio::new(4).unwrap();
    c.bench_function("partition/resnet152_4chips", |b| {
        b.iter(|| partition(black_box(&g), 4, &Strategy::Contiguous).unwrap())
    });
    let plan = partition(&g, 4, &Strategy::Contiguous).unwrap();
    c.bench_function("insert_boundary_bottlenecks/resnet152_4chips", |b| {
        b.iter(|| insert_boundary_bottlenecks(black_box(&g), &plan, r).unwrap())
    });
    let (bg, bplan) = insert_boundary_bottlenecks(&g, &plan, r).unwrap();
    let link = LinkModel::default();
    c.bench_function("predict_report/resnet152_4chips", |b| {
        b.iter(|| predict_report(black_box(&bg), &bplan, &link, 1).unwrap())
    });
}

criterion_group!(benches, partitioning);
criterion_main!(benches);

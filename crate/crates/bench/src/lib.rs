//! Shared inputs for the chipcut benchmarks.

use chipcut_core::model::{build_resnet, BottleneckRatio, Model, NetworkGraph, Variant};
use chipcut_core::partition::{insert_boundary_bottlenecks, partition, PartitionPlan, Strategy};
use chipcut_core::tensor::{Scalar, Shape, Tensor};

/// Deterministic values in `[-1, 1)` without a PRNG.
pub fn pattern<T: Scalar>(shape: Shape) -> Tensor<T> {
    Tensor::from_fn(shape, |i| {
        T::of(((i * 2_654_435_761) % 1000) as f64 / 500.0 - 1.0)
    })
}

pub fn resnet(variant: Variant, r: usize, side: usize) -> NetworkGraph {
    build_resnet(
        variant,
        BottleneckRatio::new(r).unwrap(),
        100,
        Shape::new(1, 3, side, side),
    )
    .unwrap()
}

/// A bottlenecked model split contiguously over `chips`.
pub fn split_model<T: Scalar>(
    variant: Variant,
    r: usize,
    side: usize,
    chips: usize,
) -> (Model<T>, PartitionPlan) {
    let g = resnet(variant, r, side);
    let plan = partition(&g, chips, &Strategy::Contiguous).unwrap();
    let (g, plan) =
        insert_boundary_bottlenecks(&g, &plan, BottleneckRatio::new(r).unwrap()).unwrap();
    (Model::init(g, 1), plan)
}

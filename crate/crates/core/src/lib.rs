//! Simulator for ResNets split across chips: how a bottleneck ratio trades
//! inter-chip traffic against accuracy.

pub mod data;
pub mod error;
pub mod model;
pub mod partition;
pub mod profiler;
pub mod tensor;
pub mod train;

pub use data::{Dataset, Split, SynthConfig};
pub use error::{Error, Result};
pub use model::{
    build_resnet, mid_channels, BottleneckRatio, LayerKind, Model, NetworkGraph, Variant,
};
pub use partition::{LinkModel, PartitionPlan, Strategy, TrafficReport};
pub use profiler::{PlanConfig, SweepReport, SweepRow};
pub use tensor::{Precision, Shape, Tensor};
pub use train::TrainConfig;

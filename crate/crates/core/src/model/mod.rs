//! Layer graphs, ResNet builders and parameterized models.

mod graph;
mod network;
mod resnet;

pub use graph::{
    infer_shapes, Edge, GraphBuilder, GraphDocument, LayerKind, LayerNode, NetworkGraph,
    NodeDocument, NodeId, ParamDocument,
};
pub use network::{Checkpoint, Model, RunningStatsDocument};
pub use resnet::{
    build_basic_block, build_bottleneck_block, build_resnet, mid_channels, BlockKind,
    BottleneckRatio, Variant,
};

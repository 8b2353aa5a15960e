//! Chip assignment, boundary bottlenecks and traffic accounting.

mod insert;
mod plan;
mod traffic;

pub use insert::insert_boundary_bottlenecks;
pub use plan::{partition, ChipId, PartitionPlan, Strategy};
pub use traffic::{
    boundary_bytes, estimate_latency, predict_report, report_layout, LinkModel, RowSpec,
    TrafficReport, TrafficRow, TRAFFIC_CSV_HEADER,
};

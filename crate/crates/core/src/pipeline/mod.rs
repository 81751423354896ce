//! ETL pipeline graphs: Concepts (datasets), Attributes (their fields),
//! Transformations (code steps), ETL constraints and Notes, with validation,
//! deterministic stage scheduling and an executor for the collocation job.

pub mod exec;
pub mod graph;

pub use exec::{run_direct, run_pipeline, ExecError, Job, NodeStatus, RunOutcome};
pub use graph::{
    collocation_pipeline, DataType, EdgeClass, GraphError, Node, NodeKind, Payload, PipelineGraph, Schedule,
    ValidationReport, Violation,
};

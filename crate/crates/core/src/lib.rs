//! Load-balancing planner and timeline simulator for expert-parallel
//! Mixture-of-Experts training.
//!
//! The crate is organised bottom-up:
//!
//! - [`types`]: cluster/model descriptions, per-layer load matrices, expert
//!   placements and the routing step that turns the two into device loads.
//! - [`perf_model`]: analytic execution time of one MoE layer, with and
//!   without communication/computation overlap.
//! - [`planner`]: greedy lightweight-placement search and plan reuse.
//! - [`scheduler`]: block-wise overlap timeline for one training iteration.
//! - [`workload`]: synthetic skewed gating traces and JSONL trace files.
//! - [`simulator`]: trace replay under baseline and planned policies.
//! - [`oracle`]: exhaustive placement search for small instances.
//!
//! Data-parallel sweeps go through [`exec::Exec`]; with the `parallel`
//! feature disabled everything runs sequentially.

pub mod error;
pub mod exec;
pub mod oracle;
pub mod perf_model;
pub mod planner;
pub mod scheduler;
pub mod simulator;
pub mod types;
pub mod workload;

pub use error::{Error, Result};
pub use exec::Exec;
pub use perf_model::{layer_cost, CostMode, LayerCost};
pub use planner::{greedy_search, is_balanced, plan_for_iteration, Planner, PlannerConfig};
pub use scheduler::{build_iteration_timeline, build_serial_timeline, IterationTimeline};
pub use simulator::{compare, run, run_with, Policy, RunReport, SimConfig};
pub use types::{derive_loads, ClusterSpec, DeviceLoads, ExpertPlacement, LoadMatrix, ModelSpec};
pub use workload::{generate_trace, GeneratorConfig, Trace, TraceRecord};

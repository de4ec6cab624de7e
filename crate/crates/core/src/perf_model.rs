//! Analytic execution time of one MoE layer.
//!
//! Every term is a device-max: the slowest device determines how long an
//! all-to-all or an expert computation takes. Communication is modelled by a
//! single average bandwidth, computation by a single throughput.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClusterSpec, DeviceLoads, ModelSpec};

/// Whether Trans/Agg are charged in full or only the part left over after
/// overlapping them with the surrounding computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    Unscheduled,
    Scheduled,
}

/// Component times of one MoE layer, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerCost {
    pub a2a_time: f64,
    pub fec_time: f64,
    pub bec_time: f64,
    pub trans_time: f64,
    pub agg_time: f64,
    pub ptrans_time: f64,
    pub pagg_time: f64,
    pub total_unscheduled: f64,
    pub total_scheduled: f64,
}

impl LayerCost {
    pub fn total(&self, mode: CostMode) -> f64 {
        match mode {
            CostMode::Unscheduled => self.total_unscheduled,
            CostMode::Scheduled => self.total_scheduled,
        }
    }

    /// Trans time that stays on the critical path under `mode`.
    pub fn place_time(&self, mode: CostMode) -> f64 {
        match mode {
            CostMode::Unscheduled => self.trans_time,
            CostMode::Scheduled => self.ptrans_time,
        }
    }

    /// Agg time that stays on the critical path under `mode`.
    pub fn reduce_time(&self, mode: CostMode) -> f64 {
        match mode {
            CostMode::Unscheduled => self.agg_time,
            CostMode::Scheduled => self.pagg_time,
        }
    }
}

/// One all-to-all: the device receiving the most inputs finishes last.
pub fn t_a2a(loads: &DeviceLoads, cluster: &ClusterSpec, model: &ModelSpec) -> f64 {
    let max_received = loads.received.iter().copied().max().unwrap_or(0);
    max_received as f64 * model.input_bytes / cluster.avg_bandwidth
}

/// Forward expert computation; experts on one device run back to back.
pub fn t_fec(loads: &DeviceLoads, cluster: &ClusterSpec) -> f64 {
    let max_computed = loads.computed.iter().copied().max().unwrap_or(0);
    max_computed as f64 / cluster.compute_throughput
}

/// Backward expert computation, twice the forward.
pub fn t_bec(loads: &DeviceLoads, cluster: &ClusterSpec) -> f64 {
    2.0 * t_fec(loads, cluster)
}

fn check_selection(s: usize, n: usize, cluster: &ClusterSpec, model: &ModelSpec) -> Result<()> {
    if n >= cluster.num_devices {
        return Err(Error::invalid("n", format!("{n} excluded devices with only {} devices", cluster.num_devices)));
    }
    if s > model.num_experts {
        return Err(Error::invalid("s", format!("{s} selected experts with only {} experts", model.num_experts)));
    }
    Ok(())
}

fn replicate_time(s: usize, n: usize, bytes: f64, cluster: &ClusterSpec) -> f64 {
    let d = cluster.num_devices;
    (s * (d - n)) as f64 * bytes / (d as f64 * cluster.avg_bandwidth)
}

/// Parameter broadcast for `s` selected experts, each reaching `D - n` devices.
pub fn t_trans(s: usize, n: usize, cluster: &ClusterSpec, model: &ModelSpec) -> Result<f64> {
    check_selection(s, n, cluster, model)?;
    Ok(replicate_time(s, n, model.expert_param_bytes, cluster))
}

/// Gradient aggregation back to the home devices; mirrors [`t_trans`].
pub fn t_agg(s: usize, n: usize, cluster: &ClusterSpec, model: &ModelSpec) -> Result<f64> {
    check_selection(s, n, cluster, model)?;
    Ok(replicate_time(s, n, model.expert_grad_bytes, cluster))
}

/// Communication time left exposed after overlapping it with two
/// computation windows.
pub fn exposed_after_overlap(comm: f64, window_a: f64, window_b: f64) -> f64 {
    (comm - window_a - window_b).max(0.0)
}

/// Full cost breakdown of one layer under a placement that selects `s`
/// experts and skips `n` devices for each.
///
/// Both totals are filled in: `total_unscheduled` charges Trans and Agg in
/// full, `total_scheduled` charges only what the non-expert and expert
/// computations cannot hide. The expert-compute term is `fec + bec`, i.e.
/// three forward passes.
pub fn layer_cost(
    loads: &DeviceLoads,
    s: usize,
    n: usize,
    cluster: &ClusterSpec,
    model: &ModelSpec,
) -> Result<LayerCost> {
    let a2a_time = t_a2a(loads, cluster, model);
    let fec_time = t_fec(loads, cluster);
    let bec_time = t_bec(loads, cluster);
    let trans_time = t_trans(s, n, cluster, model)?;
    let agg_time = t_agg(s, n, cluster, model)?;
    let ptrans_time = exposed_after_overlap(trans_time, fec_time, model.fnec_time);
    let pagg_time = exposed_after_overlap(agg_time, bec_time, model.bnec_time);
    // Same summation order for both totals keeps the scheduled one <= the
    // unscheduled one bit for bit.
    let base = 4.0 * a2a_time + fec_time + bec_time;
    Ok(LayerCost {
        a2a_time,
        fec_time,
        bec_time,
        trans_time,
        agg_time,
        ptrans_time,
        pagg_time,
        total_unscheduled: base + trans_time + agg_time,
        total_scheduled: base + ptrans_time + pagg_time,
    })
}

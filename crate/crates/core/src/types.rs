//! Cluster, model and per-layer load descriptions, plus the routing step
//! that applies an expert placement to a load matrix.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Devices taking part in expert parallelism, modelled by one average
/// link bandwidth and one per-device compute rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub num_devices: usize,
    /// Bytes per second.
    pub avg_bandwidth: f64,
    /// Expert inputs processed per second by one device.
    pub compute_throughput: f64,
}

impl ClusterSpec {
    pub fn new(num_devices: usize, avg_bandwidth: f64, compute_throughput: f64) -> Result<Self> {
        let spec = Self { num_devices, avg_bandwidth, compute_throughput };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_devices < 2 {
            return Err(Error::invalid("cluster.num_devices", "must be at least 2"));
        }
        if !(self.avg_bandwidth.is_finite() && self.avg_bandwidth > 0.0) {
            return Err(Error::invalid("cluster.avg_bandwidth", "must be positive and finite"));
        }
        if !(self.compute_throughput.is_finite() && self.compute_throughput > 0.0) {
            return Err(Error::invalid("cluster.compute_throughput", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Shape and byte sizes of the MoE model being trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub num_experts: usize,
    /// MoE blocks (one MoE layer plus its non-MoE neighbour).
    pub num_blocks: usize,
    pub top_k: usize,
    pub input_bytes: f64,
    pub expert_param_bytes: f64,
    pub expert_grad_bytes: f64,
    /// Forward time of the non-MoE layer in a block, seconds.
    pub fnec_time: f64,
    /// Backward time of the non-MoE layer in a block, seconds.
    pub bnec_time: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0 {
            return Err(Error::invalid("model.num_experts", "must be positive"));
        }
        if self.num_blocks == 0 {
            return Err(Error::invalid("model.num_blocks", "must be positive"));
        }
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(Error::invalid("model.top_k", "must be in 1..=num_experts"));
        }
        for (field, v) in [
            ("model.input_bytes", self.input_bytes),
            ("model.expert_param_bytes", self.expert_param_bytes),
            ("model.expert_grad_bytes", self.expert_grad_bytes),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(field, "must be positive and finite"));
            }
        }
        for (field, v) in [("model.fnec_time", self.fnec_time), ("model.bnec_time", self.bnec_time)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, "must be non-negative and finite"));
            }
        }
        Ok(())
    }
}

/// Routed-input counts of one MoE layer in one iteration.
///
/// `get(d, e)` is the number of inputs resident on device `d` that the gate
/// sent to expert `e`. Stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u64>>", into = "Vec<Vec<u64>>")]
pub struct LoadMatrix {
    devices: usize,
    experts: usize,
    counts: Vec<u64>,
}

impl LoadMatrix {
    pub fn zeros(devices: usize, experts: usize) -> Self {
        Self { devices, experts, counts: vec![0; devices * experts] }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let devices = rows.len();
        if devices == 0 {
            return Err(Error::Dimension("load matrix has no rows".into()));
        }
        let experts = rows[0].len();
        if experts == 0 {
            return Err(Error::Dimension("load matrix has no columns".into()));
        }
        if let Some((d, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != experts) {
            return Err(Error::Dimension(format!("row {d} has {} entries, expected {experts}", r.len())));
        }
        Ok(Self { devices, experts, counts: rows.into_iter().flatten().collect() })
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn experts(&self) -> usize {
        self.experts
    }

    pub fn get(&self, device: usize, expert: usize) -> u64 {
        self.counts[device * self.experts + expert]
    }

    pub fn set(&mut self, device: usize, expert: usize, value: u64) {
        self.counts[device * self.experts + expert] = value;
    }

    pub fn row(&self, device: usize) -> &[u64] {
        &self.counts[device * self.experts..(device + 1) * self.experts]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.experts)
    }

    /// Inputs routed to each expert across all devices (column sums).
    pub fn expert_totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.experts];
        for row in self.rows() {
            for (t, c) in totals.iter_mut().zip(row) {
                *t += c;
            }
        }
        totals
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

impl TryFrom<Vec<Vec<u64>>> for LoadMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<u64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<LoadMatrix> for Vec<Vec<u64>> {
    fn from(m: LoadMatrix) -> Self {
        m.rows().map(<[u64]>::to_vec).collect()
    }
}

/// Lightweight expert placement: every expert lives on its home device and
/// selected experts are additionally replicated to all but `n` devices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertPlacement {
    devices: usize,
    replicas: Vec<BTreeSet<usize>>,
    selected: Vec<usize>,
    excluded: Vec<Vec<usize>>,
}

/// Device holding expert `e` at rest: experts are dealt round-robin, which
/// is the identity when there are as many experts as devices.
pub fn home_device(expert: usize, devices: usize) -> usize {
    expert % devices
}

impl ExpertPlacement {
    /// Vanilla expert parallelism: nothing replicated.
    pub fn empty(devices: usize, experts: usize) -> Self {
        Self {
            devices,
            replicas: (0..experts).map(|e| BTreeSet::from([home_device(e, devices)])).collect(),
            selected: Vec::new(),
            excluded: Vec::new(),
        }
    }

    /// Replicates each `selected[i]` to every device except `excluded[i]`.
    ///
    /// All exclusion lists must have the same length `n`, must not contain
    /// the expert's home device, and `selected` must not repeat experts.
    pub fn from_selection(
        devices: usize,
        experts: usize,
        selected: Vec<usize>,
        excluded: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if selected.len() != excluded.len() {
            return Err(Error::Dimension(format!(
                "{} selected experts but {} exclusion lists",
                selected.len(),
                excluded.len()
            )));
        }
        let n = excluded.first().map_or(0, Vec::len);
        let mut placement = Self::empty(devices, experts);
        for (&e, excl) in selected.iter().zip(&excluded) {
            if e >= experts {
                return Err(Error::invalid("placement.selected", format!("expert {e} out of range")));
            }
            if placement.selected.contains(&e) {
                return Err(Error::invalid("placement.selected", format!("expert {e} selected twice")));
            }
            if excl.len() != n {
                return Err(Error::invalid(
                    "placement.excluded",
                    "every selected expert must exclude the same number of devices",
                ));
            }
            let home = home_device(e, devices);
            let excl_set: BTreeSet<usize> = excl.iter().copied().collect();
            if excl_set.len() != excl.len() || excl_set.iter().any(|&d| d >= devices || d == home) {
                return Err(Error::invalid(
                    "placement.excluded",
                    format!("bad exclusion list {excl:?} for expert {e}"),
                ));
            }
            placement.replicas[e] = (0..devices).filter(|d| !excl_set.contains(d)).collect();
            placement.selected.push(e);
        }
        placement.excluded = excluded;
        Ok(placement)
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn experts(&self) -> usize {
        self.replicas.len()
    }

    pub fn replicas(&self, expert: usize) -> &BTreeSet<usize> {
        &self.replicas[expert]
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn excluded(&self) -> &[Vec<usize>] {
        &self.excluded
    }

    /// Number of transferred experts (`s`).
    pub fn num_selected(&self) -> usize {
        self.selected.len()
    }

    /// Devices each selected expert skips (`n`); zero for an empty placement.
    pub fn num_excluded(&self) -> usize {
        self.excluded.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// The first `count` selections as a placement of their own.
    pub fn truncated(&self, count: usize) -> Self {
        let count = count.min(self.selected.len());
        Self::from_selection(
            self.devices,
            self.experts(),
            self.selected[..count].to_vec(),
            self.excluded[..count].to_vec(),
        )
        .expect("prefix of a valid placement is valid")
    }
}

/// Per-device inputs computed (`computed`, H) and received from other
/// devices (`received`, R) in one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceLoads {
    pub computed: Vec<u64>,
    pub received: Vec<u64>,
}

impl DeviceLoads {
    pub fn total_computed(&self) -> u64 {
        self.computed.iter().sum()
    }
}

/// Routes every batch of the load matrix under `placement`.
///
/// Inputs on a device holding a replica of their expert are computed
/// there; all others travel to the expert's home device.
pub fn derive_loads(load: &LoadMatrix, placement: &ExpertPlacement) -> Result<DeviceLoads> {
    if load.devices() != placement.devices() || load.experts() != placement.experts() {
        return Err(Error::Dimension(format!(
            "load matrix is {}x{} but placement covers {} devices and {} experts",
            load.devices(),
            load.experts(),
            placement.devices(),
            placement.experts()
        )));
    }
    let devices = load.devices();
    let mut computed = vec![0u64; devices];
    let mut received = vec![0u64; devices];
    for (d, row) in load.rows().enumerate() {
        for (e, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            if placement.replicas(e).contains(&d) {
                computed[d] += c;
            } else {
                let home = home_device(e, devices);
                computed[home] += c;
                received[home] += c;
            }
        }
    }
    Ok(DeviceLoads { computed, received })
}

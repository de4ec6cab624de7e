//! Greedy search for a communication-efficient lightweight placement.
//!
//! The search repeatedly takes the busiest device, replicates the expert
//! homed there to every device except the `n` that route the fewest inputs
//! to it, and keeps the longest prefix of selections that strictly lowered
//! the modelled layer time. It stops as soon as device loads satisfy the
//! balance condition or the busiest device has already been handled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perf_model::{layer_cost, CostMode};
use crate::types::{derive_loads, home_device, ClusterSpec, ExpertPlacement, LoadMatrix, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Devices a selected expert is not replicated to.
    pub n: usize,
    /// Balance coefficient: loads count as balanced once
    /// `max(H) - min(H) < alpha * I / E`.
    pub alpha: f64,
    /// Run the search every `reuse_interval` iterations, reuse otherwise.
    pub reuse_interval: usize,
    /// Which layer-time model scores candidates.
    pub cost_mode: CostMode,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { n: 1, alpha: 0.1, reuse_interval: 1, cost_mode: CostMode::Unscheduled }
    }
}

impl PlannerConfig {
    pub fn validate(&self, devices: usize) -> Result<()> {
        if self.n >= devices {
            return Err(Error::invalid("planner.n", format!("must be below the device count {devices}")));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid("planner.alpha", "must be positive"));
        }
        if self.reuse_interval == 0 {
            return Err(Error::invalid("planner.reuse_interval", "must be at least 1"));
        }
        Ok(())
    }
}

/// Balance condition on per-device computed inputs.
///
/// `total_inputs` is the number of inputs trained in the iteration (before
/// top-k fan-out).
pub fn is_balanced(computed: &[u64], total_inputs: u64, num_experts: usize, alpha: f64) -> Result<bool> {
    let (Some(&max), Some(&min)) = (computed.iter().max(), computed.iter().min()) else {
        return Err(Error::invalid("H", "device-load vector is empty"));
    };
    if num_experts == 0 {
        return Err(Error::invalid("num_experts", "must be positive"));
    }
    Ok(((max - min) as f64) < alpha * total_inputs as f64 / num_experts as f64)
}

/// The `n` non-home devices routing the fewest inputs to `expert`, lowest
/// index first on ties.
pub fn bottom_devices(load: &LoadMatrix, expert: usize, n: usize) -> Vec<usize> {
    let home = home_device(expert, load.devices());
    let mut candidates: Vec<usize> = (0..load.devices()).filter(|&d| d != home).collect();
    candidates.sort_by_key(|&d| (load.get(d, expert), d));
    candidates.truncate(n);
    candidates.sort_unstable();
    candidates
}

fn argmax_lowest(values: &[u64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Outcome of one greedy search, with enough detail for reports.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub placement: ExpertPlacement,
    /// Modelled time of the returned placement.
    pub cost: f64,
    /// Modelled time with nothing replicated.
    pub baseline_cost: f64,
    /// Every expert the search visited, in order.
    pub explored: Vec<usize>,
}

fn check_square(load: &LoadMatrix, cluster: &ClusterSpec, model: &ModelSpec) -> Result<()> {
    if load.devices() != cluster.num_devices || load.experts() != model.num_experts {
        return Err(Error::Dimension(format!(
            "load matrix is {}x{}, cluster has {} devices and model {} experts",
            load.devices(),
            load.experts(),
            cluster.num_devices,
            model.num_experts
        )));
    }
    if load.devices() != load.experts() {
        return Err(Error::invalid("model.num_experts", "the planner needs exactly one expert per device"));
    }
    Ok(())
}

/// Greedy placement search; see the module docs.
pub fn greedy_search(
    load: &LoadMatrix,
    config: &PlannerConfig,
    cluster: &ClusterSpec,
    model: &ModelSpec,
) -> Result<ExpertPlacement> {
    search(load, config, cluster, model).map(|o| o.placement)
}

/// [`greedy_search`] returning the costs and exploration order as well.
pub fn search(
    load: &LoadMatrix,
    config: &PlannerConfig,
    cluster: &ClusterSpec,
    model: &ModelSpec,
) -> Result<SearchOutcome> {
    check_square(load, cluster, model)?;
    config.validate(cluster.num_devices)?;
    let devices = load.devices();
    let experts = load.experts();
    let total_inputs = load.total() / model.top_k as u64;

    let empty = ExpertPlacement::empty(devices, experts);
    let mut loads = derive_loads(load, &empty)?;
    let baseline_cost = layer_cost(&loads, 0, 0, cluster, model)?.total(config.cost_mode);
    let mut best_cost = baseline_cost;
    let mut best_count = 0;

    let mut used = vec![false; devices];
    let mut selected = Vec::new();
    let mut excluded = Vec::new();
    while !is_balanced(&loads.computed, total_inputs, experts, config.alpha)? {
        let heaviest = argmax_lowest(&loads.computed);
        if used[heaviest] {
            break;
        }
        used[heaviest] = true;
        selected.push(heaviest);
        excluded.push(bottom_devices(load, heaviest, config.n));
        let candidate = ExpertPlacement::from_selection(devices, experts, selected.clone(), excluded.clone())?;
        loads = derive_loads(load, &candidate)?;
        let cost = layer_cost(&loads, selected.len(), config.n, cluster, model)?.total(config.cost_mode);
        if cost < best_cost {
            best_cost = cost;
            best_count = selected.len();
        }
    }

    let placement = ExpertPlacement::from_selection(
        devices,
        experts,
        selected[..best_count].to_vec(),
        excluded[..best_count].to_vec(),
    )?;
    Ok(SearchOutcome { placement, cost: best_cost, baseline_cost, explored: selected })
}

/// Iteration that produced the placement used at `iter_index`: the most
/// recent multiple of the reuse interval.
pub fn search_iteration(iter_index: usize, reuse_interval: usize) -> usize {
    iter_index - iter_index % reuse_interval.max(1)
}

/// Placement for iteration `iter_index` given the observed history of one
/// layer (`history[i]` is iteration i's matrix).
///
/// Iteration 0 has nothing to predict from and uses the empty placement.
/// Search iterations predict their distribution with the previous
/// iteration's matrix; all other iterations reuse the last search result.
pub fn plan_for_iteration(
    history: &[LoadMatrix],
    iter_index: usize,
    config: &PlannerConfig,
    cluster: &ClusterSpec,
    model: &ModelSpec,
) -> Result<ExpertPlacement> {
    let source = search_iteration(iter_index, config.reuse_interval);
    if source == 0 {
        return Ok(ExpertPlacement::empty(cluster.num_devices, model.num_experts));
    }
    let Some(previous) = history.get(source - 1) else {
        return Err(Error::invalid(
            "history",
            format!("iteration {iter_index} needs iteration {} in the history", source - 1),
        ));
    };
    greedy_search(previous, config, cluster, model)
}

/// Stateful wrapper around [`plan_for_iteration`] for one layer, fed one
/// iteration at a time.
#[derive(Debug, Clone)]
pub struct Planner {
    config: PlannerConfig,
    cluster: ClusterSpec,
    model: ModelSpec,
    last: Option<ExpertPlacement>,
    /// Set when the most recent `next_placement` call ran the search.
    searched: bool,
}

impl Planner {
    pub fn new(config: PlannerConfig, cluster: ClusterSpec, model: ModelSpec) -> Result<Self> {
        config.validate(cluster.num_devices)?;
        Ok(Self { config, cluster, model, last: None, searched: false })
    }

    /// Placement for iteration `iter_index`, where `previous` is the matrix
    /// observed in iteration `iter_index - 1` (ignored for iteration 0).
    /// Meant to be called for consecutive iterations starting at 0.
    pub fn next_placement(&mut self, iter_index: usize, previous: Option<&LoadMatrix>) -> Result<&ExpertPlacement> {
        self.searched = false;
        if iter_index == 0 || (self.last.is_none() && !iter_index.is_multiple_of(self.config.reuse_interval)) {
            self.last = Some(ExpertPlacement::empty(self.cluster.num_devices, self.model.num_experts));
        } else if iter_index.is_multiple_of(self.config.reuse_interval) {
            let previous = previous.ok_or_else(|| {
                Error::invalid("history", format!("iteration {iter_index} needs the previous matrix"))
            })?;
            self.last = Some(greedy_search(previous, &self.config, &self.cluster, &self.model)?);
            self.searched = true;
        }
        Ok(self.last.as_ref().expect("set above"))
    }

    pub fn searched_last(&self) -> bool {
        self.searched
    }
}

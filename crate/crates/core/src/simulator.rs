//! Trace replay under a load-balancing policy.
//!
//! For every iteration and layer the policy picks a placement, the routed
//! loads and modelled layer time follow, and the iteration makespan is the
//! sum over blocks of the layer time plus the non-expert computations. The
//! vanilla expert-parallel cost of the same matrix is recorded alongside as
//! the baseline.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::perf_model::{layer_cost, CostMode, LayerCost};
use crate::planner::{greedy_search, search_iteration, PlannerConfig};
use crate::scheduler::{build_iteration_timeline, build_serial_timeline, IterationTimeline, PhaseTotals};
use crate::types::{derive_loads, ClusterSpec, DeviceLoads, ExpertPlacement, LoadMatrix, ModelSpec};
use crate::workload::Trace;

/// Load-balancing policy replayed by [`run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Experts never move.
    VanillaEP,
    /// Broadcast the `m` experts with the most inputs in the current
    /// iteration to every device.
    TopM(usize),
    /// Greedy planner scored with the unoverlapped layer model; primitives
    /// run back to back.
    ProProphetUnscheduled(PlannerConfig),
    /// Greedy planner scored with the overlap-aware model, primitives
    /// overlapped block-wise.
    ProProphetScheduled(PlannerConfig),
}

pub const POLICY_NAMES: &str = "vanilla, top<m> (e.g. top2), prophet, prophet-sched";

impl Policy {
    /// Parses a policy name; planner variants take `planner` with the cost
    /// mode forced to match the variant.
    pub fn parse(name: &str, planner: PlannerConfig) -> Result<Self> {
        match name {
            "vanilla" => Ok(Policy::VanillaEP),
            "prophet" => {
                Ok(Policy::ProProphetUnscheduled(PlannerConfig { cost_mode: CostMode::Unscheduled, ..planner }))
            }
            "prophet-sched" => {
                Ok(Policy::ProProphetScheduled(PlannerConfig { cost_mode: CostMode::Scheduled, ..planner }))
            }
            other => match other.strip_prefix("top").and_then(|m| m.parse::<usize>().ok()) {
                Some(m) if m >= 1 => Ok(Policy::TopM(m)),
                _ => Err(Error::invalid("policy", format!("unknown policy {other:?}; valid: {POLICY_NAMES}"))),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            Policy::VanillaEP => "vanilla".into(),
            Policy::TopM(m) => format!("top{m}"),
            Policy::ProProphetUnscheduled(_) => "prophet".into(),
            Policy::ProProphetScheduled(_) => "prophet-sched".into(),
        }
    }

    pub fn cost_mode(&self) -> CostMode {
        match self {
            Policy::ProProphetScheduled(_) => CostMode::Scheduled,
            _ => CostMode::Unscheduled,
        }
    }

    fn planner(&self) -> Option<PlannerConfig> {
        match *self {
            Policy::ProProphetUnscheduled(c) => Some(PlannerConfig { cost_mode: CostMode::Unscheduled, ..c }),
            Policy::ProProphetScheduled(c) => Some(PlannerConfig { cost_mode: CostMode::Scheduled, ..c }),
            _ => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::parse(s, PlannerConfig::default())
    }
}

/// Replay knobs that are not part of the policy itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Duration of one block's placement search as a fraction of that
    /// block's all-to-all time.
    pub plan_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { plan_fraction: 0.5 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.plan_fraction.is_finite() && self.plan_fraction >= 0.0) {
            return Err(Error::invalid("sim.plan_fraction", "must be non-negative"));
        }
        Ok(())
    }
}

/// Population standard deviation of a load vector.
pub fn balance_degree(loads: &[u64]) -> f64 {
    if loads.is_empty() {
        return 0.0;
    }
    let n = loads.len() as f64;
    let mean = loads.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = loads.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Ratio of balance degrees before and after balancing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rb {
    Ratio(f64),
    /// The balanced loads have zero spread while the original ones did not.
    PerfectlyBalanced,
}

impl Rb {
    pub fn ratio(self) -> Option<f64> {
        match self {
            Rb::Ratio(r) => Some(r),
            Rb::PerfectlyBalanced => None,
        }
    }

    /// True when balancing did not increase the spread.
    pub fn is_improvement(self) -> bool {
        match self {
            Rb::Ratio(r) => r >= 1.0,
            Rb::PerfectlyBalanced => true,
        }
    }
}

impl Serialize for Rb {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Rb::Ratio(r) => s.serialize_f64(*r),
            Rb::PerfectlyBalanced => s.serialize_str("perfectly_balanced"),
        }
    }
}

impl<'de> Deserialize<'de> for Rb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(r) => Ok(Rb::Ratio(r)),
            Repr::Tag(t) if t == "perfectly_balanced" => Ok(Rb::PerfectlyBalanced),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("unknown RB marker {t:?}"))),
        }
    }
}

impl fmt::Display for Rb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rb::Ratio(r) => write!(f, "{r}"),
            Rb::PerfectlyBalanced => f.write_str("perfectly_balanced"),
        }
    }
}

pub fn rb_ratio(before: &DeviceLoads, after: &DeviceLoads) -> Rb {
    let b = balance_degree(&before.computed);
    let a = balance_degree(&after.computed);
    match (b > 0.0, a > 0.0) {
        (_, true) => Rb::Ratio(b / a),
        (true, false) => Rb::PerfectlyBalanced,
        (false, false) => Rb::Ratio(1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub iteration: usize,
    pub layer: usize,
    pub selected: Vec<usize>,
    pub n: usize,
    pub cost: LayerCost,
    /// Duration of the search for the next iteration hosted in this block.
    pub plan_time: f64,
    /// Part of `plan_time` left on the critical path.
    pub plan_exposed: f64,
    /// Modelled layer time under the policy's cost mode.
    pub total: f64,
    /// Modelled layer time of vanilla expert parallelism on the same matrix.
    pub baseline_total: f64,
    pub balance_before: f64,
    pub balance_after: f64,
    pub rb: Rb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub makespan: f64,
    pub baseline_makespan: f64,
    pub phases: PhaseTotals,
    /// Makespan of the overlapped block-wise timeline (scheduled policy only).
    pub timeline_makespan: Option<f64>,
}

/// Phase shares of the whole run, percent of total modelled time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhasePercent {
    pub search: f64,
    pub place: f64,
    pub reduce: f64,
    pub other: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub mean_makespan: f64,
    pub mean_baseline_makespan: f64,
    /// Baseline over policy makespan, summed over the run.
    pub speedup: f64,
    /// Mean finite RB over all (iteration, layer) pairs.
    pub mean_rb: f64,
    pub perfectly_balanced: usize,
    pub phase_percent: PhasePercent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    pub baseline: String,
    pub cost_mode: CostMode,
    pub summary: RunSummary,
    pub iterations: Vec<IterationRecord>,
    pub layers: Vec<LayerRecord>,
}

pub const CSV_HEADER: &str = "iteration,layer,selected,n,a2a_time,fec_time,bec_time,trans_time,agg_time,\
ptrans_time,pagg_time,plan_time,plan_exposed,total,baseline_total,balance_before,balance_after,rb";

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per iteration x layer, columns as in [`CSV_HEADER`]. The
    /// selected experts are `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for l in &self.layers {
            let selected: Vec<String> = l.selected.iter().map(usize::to_string).collect();
            let c = &l.cost;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                l.iteration,
                l.layer,
                selected.join(";"),
                l.n,
                c.a2a_time,
                c.fec_time,
                c.bec_time,
                c.trans_time,
                c.agg_time,
                c.ptrans_time,
                c.pagg_time,
                l.plan_time,
                l.plan_exposed,
                l.total,
                l.baseline_total,
                l.balance_before,
                l.balance_after,
                l.rb
            );
        }
        out
    }

    pub fn layers_of(&self, iteration: usize) -> impl Iterator<Item = &LayerRecord> {
        self.layers.iter().filter(move |l| l.iteration == iteration)
    }

    /// Rebuilds the timeline of one iteration from the recorded costs:
    /// overlapped for the scheduled policy, serial otherwise.
    pub fn timeline(&self, iteration: usize, model: &ModelSpec) -> Result<IterationTimeline> {
        let layers: Vec<&LayerRecord> = self.layers_of(iteration).collect();
        if layers.is_empty() {
            return Err(Error::invalid(
                "iteration",
                format!("iteration {iteration} not in report ({} iterations)", self.iterations.len()),
            ));
        }
        let costs: Vec<LayerCost> = layers.iter().map(|l| l.cost).collect();
        let plans: Vec<f64> = layers.iter().map(|l| l.plan_time).collect();
        match self.cost_mode {
            CostMode::Scheduled => build_iteration_timeline(iteration, &costs, &plans, model),
            CostMode::Unscheduled => build_serial_timeline(iteration, &costs, &plans, model),
        }
    }
}

fn check_dimensions(trace: &Trace, cluster: &ClusterSpec, model: &ModelSpec) -> Result<()> {
    cluster.validate()?;
    model.validate()?;
    if trace.is_empty() {
        return Err(Error::invalid("trace", "trace is empty"));
    }
    if trace.devices() != cluster.num_devices
        || trace.experts() != model.num_experts
        || trace.num_layers() != model.num_blocks
    {
        return Err(Error::Dimension(format!(
            "trace has {} devices, {} experts, {} layers; configuration has {} devices, {} experts, {} blocks",
            trace.devices(),
            trace.experts(),
            trace.num_layers(),
            cluster.num_devices,
            model.num_experts,
            model.num_blocks
        )));
    }
    Ok(())
}

/// The `m` experts with the most routed inputs, lowest index on ties.
pub fn heaviest_experts(load: &LoadMatrix, m: usize) -> Vec<usize> {
    let totals = load.expert_totals();
    let mut order: Vec<usize> = (0..totals.len()).collect();
    order.sort_by_key(|&e| (std::cmp::Reverse(totals[e]), e));
    order.truncate(m);
    order.sort_unstable();
    order
}

fn top_m_placement(load: &LoadMatrix, m: usize) -> Result<ExpertPlacement> {
    let selected = heaviest_experts(load, m);
    let excluded = vec![Vec::new(); selected.len()];
    ExpertPlacement::from_selection(load.devices(), load.experts(), selected, excluded)
}

/// Replays `trace` under `policy` with default replay settings.
pub fn run(trace: &Trace, policy: &Policy, cluster: &ClusterSpec, model: &ModelSpec) -> Result<RunReport> {
    run_with(trace, policy, cluster, model, &SimConfig::default(), Exec::default())
}

/// Replays `trace` under `policy`. Iterations are independent once
/// placements are known, so both the searches and the per-iteration
/// evaluation are spread over `exec`; the report does not depend on it.
pub fn run_with(
    trace: &Trace,
    policy: &Policy,
    cluster: &ClusterSpec,
    model: &ModelSpec,
    sim: &SimConfig,
    exec: Exec,
) -> Result<RunReport> {
    check_dimensions(trace, cluster, model)?;
    sim.validate()?;
    if let Policy::TopM(m) = policy {
        if *m == 0 || *m > model.num_experts {
            return Err(Error::invalid("policy", format!("top{m} needs 1 <= m <= {}", model.num_experts)));
        }
    }
    let planner = policy.planner();
    if let Some(cfg) = &planner {
        cfg.validate(cluster.num_devices)?;
    }
    let iterations = trace.num_iterations();
    let layers = trace.num_layers();
    let mode = policy.cost_mode();

    // Searches, keyed by (layer, iteration whose previous matrix was used).
    let searches: Vec<(usize, usize)> = match &planner {
        Some(cfg) => (0..layers)
            .flat_map(|l| (cfg.reuse_interval..iterations).step_by(cfg.reuse_interval).map(move |i| (l, i)))
            .collect(),
        None => Vec::new(),
    };
    let searched: Vec<Result<ExpertPlacement>> = match &planner {
        Some(cfg) => exec.map(&searches, |&(l, i)| greedy_search(trace.get(i - 1, l), cfg, cluster, model)),
        None => Vec::new(),
    };
    let mut planned: Vec<Vec<Option<ExpertPlacement>>> = vec![vec![None; iterations]; layers];
    for (&(l, i), p) in searches.iter().zip(searched) {
        planned[l][i] = Some(p?);
    }
    let empty = ExpertPlacement::empty(cluster.num_devices, model.num_experts);

    let per_iteration = exec.map_range(iterations, |i| -> Result<(IterationRecord, Vec<LayerRecord>)> {
        let mut records = Vec::with_capacity(layers);
        // Whether the next iteration runs a search whose Plan this one hosts.
        let hosts_plan = match &planner {
            Some(cfg) => (i + 1) % cfg.reuse_interval == 0 && i + 1 < iterations,
            None => false,
        };
        for (l, layer_plans) in planned.iter().enumerate() {
            let load = trace.get(i, l);
            let placement = match (policy, &planner) {
                (Policy::VanillaEP, _) => empty.clone(),
                (Policy::TopM(m), _) => top_m_placement(load, *m)?,
                (_, Some(cfg)) => {
                    let source = search_iteration(i, cfg.reuse_interval);
                    if source == 0 {
                        empty.clone()
                    } else {
                        layer_plans[source].clone().expect("search computed")
                    }
                }
                (_, None) => unreachable!("planner policies carry a config"),
            };
            let before = derive_loads(load, &empty)?;
            let after = derive_loads(load, &placement)?;
            let s = placement.num_selected();
            let n = placement.num_excluded();
            let cost = layer_cost(&after, s, n, cluster, model)?;
            let baseline = layer_cost(&before, 0, 0, cluster, model)?;
            let plan_time = if hosts_plan { sim.plan_fraction * cost.a2a_time } else { 0.0 };
            let plan_exposed = match mode {
                CostMode::Scheduled => (plan_time - cost.a2a_time).max(0.0),
                CostMode::Unscheduled => 0.0,
            };
            records.push(LayerRecord {
                iteration: i,
                layer: l,
                selected: placement.selected().to_vec(),
                n,
                cost,
                plan_time,
                plan_exposed,
                total: cost.total(mode),
                baseline_total: baseline.total_unscheduled,
                balance_before: balance_degree(&before.computed),
                balance_after: balance_degree(&after.computed),
                rb: rb_ratio(&before, &after),
            });
        }
        let non_expert = model.fnec_time + model.bnec_time;
        let mut phases = PhaseTotals::default();
        let mut makespan = 0.0;
        let mut baseline_makespan = 0.0;
        for r in &records {
            makespan += r.total + non_expert + r.plan_exposed;
            baseline_makespan += r.baseline_total + non_expert;
            phases.search += r.plan_exposed;
            phases.place += r.cost.place_time(mode);
            phases.reduce += r.cost.reduce_time(mode);
        }
        phases.other = (makespan - phases.search - phases.place - phases.reduce).max(0.0);
        let timeline_makespan = match policy {
            Policy::ProProphetScheduled(_) => {
                let costs: Vec<LayerCost> = records.iter().map(|r| r.cost).collect();
                let plans: Vec<f64> = records.iter().map(|r| r.plan_time).collect();
                Some(build_iteration_timeline(i, &costs, &plans, model)?.makespan())
            }
            _ => None,
        };
        Ok((IterationRecord { iteration: i, makespan, baseline_makespan, phases, timeline_makespan }, records))
    });

    let mut iteration_records = Vec::with_capacity(iterations);
    let mut layer_records = Vec::with_capacity(iterations * layers);
    for r in per_iteration {
        let (it, ls) = r?;
        iteration_records.push(it);
        layer_records.extend(ls);
    }
    let summary = summarize(&iteration_records, &layer_records);
    Ok(RunReport {
        policy: policy.name(),
        baseline: Policy::VanillaEP.name(),
        cost_mode: mode,
        summary,
        iterations: iteration_records,
        layers: layer_records,
    })
}

fn summarize(iterations: &[IterationRecord], layers: &[LayerRecord]) -> RunSummary {
    let count = iterations.len().max(1) as f64;
    let total: f64 = iterations.iter().map(|r| r.makespan).sum();
    let baseline: f64 = iterations.iter().map(|r| r.baseline_makespan).sum();
    let ratios: Vec<f64> = layers.iter().filter_map(|l| l.rb.ratio()).collect();
    let mut phases = PhaseTotals::default();
    for r in iterations {
        phases.search += r.phases.search;
        phases.place += r.phases.place;
        phases.reduce += r.phases.reduce;
        phases.other += r.phases.other;
    }
    let pct = |x: f64| if total > 0.0 { 100.0 * x / total } else { 0.0 };
    RunSummary {
        iterations: iterations.len(),
        mean_makespan: total / count,
        mean_baseline_makespan: baseline / count,
        speedup: if total > 0.0 { baseline / total } else { 1.0 },
        mean_rb: if ratios.is_empty() { 1.0 } else { ratios.iter().sum::<f64>() / ratios.len() as f64 },
        perfectly_balanced: layers.iter().filter(|l| l.rb == Rb::PerfectlyBalanced).count(),
        phase_percent: PhasePercent {
            search: pct(phases.search),
            place: pct(phases.place),
            reduce: pct(phases.reduce),
            other: pct(phases.other),
        },
    }
}

/// One row of a policy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub mean_makespan: f64,
    /// Relative to the first policy of the comparison.
    pub speedup: f64,
    pub mean_rb: f64,
    pub phase_percent: PhasePercent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, policy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,mean_makespan,speedup,mean_rb,search_pct,place_pct,reduce_pct,other_pct\n");
        for r in &self.rows {
            let p = &r.phase_percent;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.policy, r.mean_makespan, r.speedup, r.mean_rb, p.search, p.place, p.reduce, p.other
            );
        }
        out
    }

    pub fn to_pretty(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "policy", "mean makespan ms", "speedup", "mean RB", "search%", "place%", "reduce%", "other%"
        );
        for r in &self.rows {
            let p = &r.phase_percent;
            let _ = writeln!(
                out,
                "{:<14} {:>16.4} {:>8.3} {:>8.3} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                r.policy,
                r.mean_makespan * 1e3,
                r.speedup,
                r.mean_rb,
                p.search,
                p.place,
                p.reduce,
                p.other
            );
        }
        out
    }
}

/// Runs every policy on the same trace (concurrently under `exec`) and
/// tabulates them against the first.
pub fn compare(
    trace: &Trace,
    policies: &[Policy],
    cluster: &ClusterSpec,
    model: &ModelSpec,
    sim: &SimConfig,
    exec: Exec,
) -> Result<(Comparison, Vec<RunReport>)> {
    if policies.is_empty() {
        return Err(Error::invalid("policy", "at least one policy is required"));
    }
    // Each run is already parallel inside; fan out over policies only.
    let reports = exec
        .map(policies, |p| run_with(trace, p, cluster, model, sim, Exec::Sequential))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let reference = reports[0].summary.mean_makespan;
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            policy: r.policy.clone(),
            mean_makespan: r.summary.mean_makespan,
            speedup: if r.summary.mean_makespan > 0.0 { reference / r.summary.mean_makespan } else { 1.0 },
            mean_rb: r.summary.mean_rb,
            phase_percent: r.summary.phase_percent,
        })
        .collect();
    Ok((Comparison { rows }, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::TraceRecord;
    use approx::assert_relative_eq;

    fn loads(h: &[u64]) -> DeviceLoads {
        DeviceLoads { computed: h.to_vec(), received: vec![0; h.len()] }
    }

    #[test]
    fn balance_degree_examples() {
        assert_eq!(balance_degree(&[3, 3, 3]), 0.0);
        assert_eq!(balance_degree(&[7; 5]), 0.0);
        assert_relative_eq!(balance_degree(&[5, 2, 2]), 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn rb_examples() {
        assert_eq!(rb_ratio(&loads(&[5, 2, 2]), &loads(&[3, 3, 3])), Rb::PerfectlyBalanced);
        assert_eq!(rb_ratio(&loads(&[5, 2, 2]), &loads(&[5, 2, 2])), Rb::Ratio(1.0));
        assert_eq!(rb_ratio(&loads(&[3, 3, 3]), &loads(&[3, 3, 3])), Rb::Ratio(1.0));
        // sigma(6,2,1) = sqrt(42)/3, sigma(4,3,2) = sqrt(6)/3.
        let want = 42f64.sqrt() / 6f64.sqrt();
        match rb_ratio(&loads(&[6, 2, 1]), &loads(&[4, 3, 2])) {
            Rb::Ratio(r) => assert_relative_eq!(r, want, max_relative = 1e-12),
            other => panic!("{other:?}"),
        }
        assert_relative_eq!(want, 2.6457513110645907, max_relative = 1e-12);
    }

    #[test]
    fn rb_serde() {
        let v = serde_json::to_string(&vec![Rb::Ratio(2.5), Rb::PerfectlyBalanced]).unwrap();
        assert_eq!(v, "[2.5,\"perfectly_balanced\"]");
        let back: Vec<Rb> = serde_json::from_str(&v).unwrap();
        assert_eq!(back, vec![Rb::Ratio(2.5), Rb::PerfectlyBalanced]);
    }

    #[test]
    fn policy_names() {
        let cfg = PlannerConfig::default();
        assert_eq!(Policy::parse("vanilla", cfg).unwrap(), Policy::VanillaEP);
        assert_eq!(Policy::parse("top3", cfg).unwrap(), Policy::TopM(3));
        assert!(matches!(
            Policy::parse("prophet-sched", cfg).unwrap(),
            Policy::ProProphetScheduled(c) if c.cost_mode == CostMode::Scheduled
        ));
        for bad in ["top0", "topx", "fastermoe", ""] {
            let err = Policy::parse(bad, cfg).unwrap_err().to_string();
            assert!(err.contains("prophet-sched"), "{err}");
        }
        for p in ["vanilla", "top2", "prophet", "prophet-sched"] {
            assert_eq!(Policy::parse(p, cfg).unwrap().name(), p);
        }
    }

    #[test]
    fn heaviest_experts_ties_low() {
        let m = LoadMatrix::from_rows(vec![vec![5, 1, 5, 0], vec![0, 1, 0, 9]]).unwrap();
        assert_eq!(heaviest_experts(&m, 2), vec![0, 3]);
        assert_eq!(heaviest_experts(&m, 3), vec![0, 2, 3]);
    }

    fn setup() -> (ClusterSpec, ModelSpec) {
        (
            ClusterSpec::new(4, 1e10, 2e5).unwrap(),
            ModelSpec {
                num_experts: 4,
                num_blocks: 2,
                top_k: 1,
                input_bytes: 4096.0,
                expert_param_bytes: 1e7,
                expert_grad_bytes: 1e7,
                fnec_time: 1e-3,
                bnec_time: 2e-3,
            },
        )
    }

    fn constant_trace(m: &LoadMatrix, iterations: usize, layers: usize) -> Trace {
        let records = (0..iterations)
            .flat_map(|i| (0..layers).map(move |l| TraceRecord { iteration: i, layer: l, counts: m.clone() }))
            .collect();
        Trace::from_records(records).unwrap()
    }

    #[test]
    fn uniform_trace_vanilla_equals_planner_and_topm_pays() {
        let (c, md) = setup();
        let m = LoadMatrix::from_rows(vec![vec![64; 4]; 4]).unwrap();
        let trace = constant_trace(&m, 4, 2);
        let cfg = PlannerConfig::default();
        let vanilla = run(&trace, &Policy::VanillaEP, &c, &md).unwrap();
        let sched = run(&trace, &Policy::ProProphetScheduled(cfg), &c, &md).unwrap();
        let unsched = run(&trace, &Policy::ProProphetUnscheduled(cfg), &c, &md).unwrap();
        let top2 = run(&trace, &Policy::TopM(2), &c, &md).unwrap();
        assert_eq!(sched.summary.mean_makespan, vanilla.summary.mean_makespan);
        assert_eq!(unsched.summary.mean_makespan, vanilla.summary.mean_makespan);
        assert!(top2.summary.mean_makespan > vanilla.summary.mean_makespan);
        assert_relative_eq!(vanilla.summary.speedup, 1.0);
    }

    #[test]
    fn exact_prediction_orders_policies_per_layer() {
        let (c, md) = setup();
        let m = LoadMatrix::from_rows(vec![
            vec![200, 30, 20, 6],
            vec![150, 60, 30, 16],
            vec![90, 10, 100, 56],
            vec![120, 20, 10, 106],
        ])
        .unwrap();
        let trace = constant_trace(&m, 5, 2);
        let cfg = PlannerConfig { n: 1, alpha: 0.05, ..PlannerConfig::default() };
        let vanilla = run(&trace, &Policy::VanillaEP, &c, &md).unwrap();
        let unsched = run(&trace, &Policy::ProProphetUnscheduled(cfg), &c, &md).unwrap();
        let sched = run(&trace, &Policy::ProProphetScheduled(cfg), &c, &md).unwrap();
        for ((v, u), s) in vanilla.layers.iter().zip(&unsched.layers).zip(&sched.layers) {
            assert!(s.total <= u.total);
            assert!(u.total <= v.total);
            assert_eq!(v.total, u.baseline_total);
        }
        assert!(unsched.summary.speedup > 1.0);
        assert!(sched.iterations.iter().all(|r| r.timeline_makespan.is_some()));
        assert!(unsched.iterations.iter().all(|r| r.timeline_makespan.is_none()));
    }

    #[test]
    fn sequential_and_parallel_reports_match() {
        let (c, md) = setup();
        let cfg = crate::workload::GeneratorConfig {
            devices: 4,
            experts: 4,
            inputs_per_iteration: 1024,
            top_k: 1,
            skew: 1.2,
            drift: 0.1,
            seed: 9,
        };
        let trace = Trace::from_records(crate::workload::generate_trace(&cfg, 12, 2).unwrap()).unwrap();
        let p = Policy::ProProphetScheduled(PlannerConfig { reuse_interval: 3, ..PlannerConfig::default() });
        let a = run_with(&trace, &p, &c, &md, &SimConfig::default(), Exec::Sequential).unwrap();
        let b = run_with(&trace, &p, &c, &md, &SimConfig::default(), Exec::Parallel).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        // Reuse: iterations 1 and 2 keep the empty placement, 3..5 share one.
        assert!(a.layers_of(1).all(|l| l.selected.is_empty()));
        let sel = |i| a.layers_of(i).map(|l| l.selected.clone()).collect::<Vec<_>>();
        assert_eq!(sel(3), sel(4));
        assert_eq!(sel(3), sel(5));
        // Plans are hosted only by iterations preceding a search.
        assert!(a.layers_of(2).all(|l| l.plan_time > 0.0));
        assert!(a.layers_of(3).all(|l| l.plan_time == 0.0));
        let csv = a.to_csv();
        assert_eq!(csv.lines().count(), 1 + 12 * 2);
        assert!(csv.starts_with(CSV_HEADER));
        let tl = a.timeline(2, &md).unwrap();
        assert_eq!(tl.exposure.len(), 2);
        let parsed: RunReport = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(parsed, a);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (c, md) = setup();
        let m = LoadMatrix::from_rows(vec![vec![1; 3]; 3]).unwrap();
        let trace = constant_trace(&m, 2, 2);
        assert!(matches!(run(&trace, &Policy::VanillaEP, &c, &md), Err(Error::Dimension(_))));
        assert!(run(&Trace::default(), &Policy::VanillaEP, &c, &md).is_err());
        let ok = constant_trace(&LoadMatrix::from_rows(vec![vec![1; 4]; 4]).unwrap(), 2, 2);
        assert!(run(&ok, &Policy::TopM(5), &c, &md).is_err());
    }

    #[test]
    fn comparison_single_policy_has_unit_speedup() {
        let (c, md) = setup();
        let trace = constant_trace(&LoadMatrix::from_rows(vec![vec![9, 1, 1, 1]; 4]).unwrap(), 3, 2);
        let (cmp, reports) =
            compare(&trace, &[Policy::TopM(1)], &c, &md, &SimConfig::default(), Exec::default()).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(cmp.rows[0].speedup, 1.0);
        assert!(cmp.to_pretty().contains("top1"));
        assert_eq!(cmp.to_csv().lines().count(), 2);
    }
}

//! Block-wise overlap scheduling of one training iteration.
//!
//! The cluster is modelled as one compute lane and one network lane. Within
//! an iteration, block `i` hosts the parameter transfer of block `i + 1`
//! behind its forward expert and non-expert computations, and the gradient
//! aggregation of block `i + 1` behind its backward computations. The search
//! for the next iteration's placement runs on the compute lane while the
//! first all-to-all of each block is on the wire.
//!
//! Block 0 has no predecessor: its transfer is charged at the start of the
//! iteration and its aggregation at the end of the backward pass.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perf_model::LayerCost;
use crate::types::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    A2A,
    FEC,
    BEC,
    FNEC,
    BNEC,
    Plan,
    SubTrans1,
    SubTrans2,
    SubAgg1,
    SubAgg2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    Compute,
    Network,
}

impl OpKind {
    pub fn lane(self) -> Lane {
        match self {
            OpKind::A2A | OpKind::SubTrans1 | OpKind::SubTrans2 | OpKind::SubAgg1 | OpKind::SubAgg2 => Lane::Network,
            OpKind::FEC | OpKind::BEC | OpKind::FNEC | OpKind::BNEC | OpKind::Plan => Lane::Compute,
        }
    }

    pub fn is_trans(self) -> bool {
        matches!(self, OpKind::SubTrans1 | OpKind::SubTrans2)
    }

    pub fn is_agg(self) -> bool {
        matches!(self, OpKind::SubAgg1 | OpKind::SubAgg2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledOp {
    pub kind: OpKind,
    /// Block the operation works on. For `Plan` this is the block whose
    /// next-iteration placement is searched.
    pub block: usize,
    /// Iteration the operation belongs to; `Plan` ops belong to the next one.
    pub iteration: usize,
    pub lane: Lane,
    pub start: f64,
    pub duration: f64,
}

impl ScheduledOp {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Splits a parameter transfer across the two forward computations of the
/// hosting block. The non-expert window is static, so it is filled first;
/// the remainder rides on the expert computation. Returns `(sub1, sub2)`,
/// where `sub1` overlaps FEC and `sub2` overlaps FNEC.
pub fn partition_trans(trans_time: f64, fec_time: f64, fnec_time: f64) -> Result<(f64, f64)> {
    check_non_negative(&[("trans_time", trans_time), ("fec_time", fec_time), ("fnec_time", fnec_time)])?;
    let sub2 = trans_time.min(fnec_time);
    Ok((trans_time - sub2, sub2))
}

/// Splits a gradient aggregation across the two backward computations of
/// the hosting block. Returns `(sub1, sub2)`, where `sub1` overlaps BNEC
/// (which runs first in the backward pass) and `sub2` overlaps BEC.
pub fn partition_agg(agg_time: f64, bec_time: f64, bnec_time: f64) -> Result<(f64, f64)> {
    check_non_negative(&[("agg_time", agg_time), ("bec_time", bec_time), ("bnec_time", bnec_time)])?;
    let sub1 = agg_time.min(bnec_time);
    Ok((sub1, agg_time - sub1))
}

fn check_non_negative(values: &[(&'static str, f64)]) -> Result<()> {
    for &(field, v) in values {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(field, format!("must be a non-negative duration, got {v}")));
        }
    }
    Ok(())
}

/// Split fractions chosen for one block.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockSplit {
    /// Share of the block's Trans carried by `SubTrans1`.
    pub trans_sub1_fraction: f64,
    /// Share of the block's Agg carried by `SubAgg1`.
    pub agg_sub1_fraction: f64,
    /// Block whose computations host this block's Trans/Agg; `None` for
    /// block 0, whose primitives are charged unoverlapped.
    pub host: Option<usize>,
}

/// Per-block partition decisions of one iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub blocks: Vec<BlockSplit>,
}

/// Seconds a block's primitives stay on the critical path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockExposure {
    pub trans: f64,
    pub agg: f64,
    pub plan: f64,
}

/// Split of a timeline into search, placement, reduction and the rest.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTotals {
    pub search: f64,
    pub place: f64,
    pub reduce: f64,
    pub other: f64,
}

impl PhaseTotals {
    pub fn total(&self) -> f64 {
        self.search + self.place + self.reduce + self.other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTimeline {
    pub iteration: usize,
    pub ops: Vec<ScheduledOp>,
    pub plan: SchedulePlan,
    pub exposure: Vec<BlockExposure>,
    makespan: f64,
}

impl IterationTimeline {
    pub fn makespan(&self) -> f64 {
        self.makespan
    }

    pub fn phase_totals(&self) -> PhaseTotals {
        let mut totals = PhaseTotals::default();
        for e in &self.exposure {
            totals.search += e.plan;
            totals.place += e.trans;
            totals.reduce += e.agg;
        }
        totals.other = (self.makespan - totals.search - totals.place - totals.reduce).max(0.0);
        totals
    }

    /// Trans and Agg seconds not hidden behind computation.
    pub fn exposed_comm(&self) -> f64 {
        self.exposure.iter().map(|e| e.trans + e.agg).sum()
    }

    pub fn ops_in(&self, lane: Lane) -> impl Iterator<Item = &ScheduledOp> {
        self.ops.iter().filter(move |op| op.lane == lane)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("timeline serializes")
    }

    /// Two-lane Gantt chart, time in milliseconds on the x axis.
    pub fn to_svg(&self) -> String {
        const LEFT: f64 = 90.0;
        const WIDTH: f64 = 1200.0;
        const LANE_H: f64 = 36.0;
        const TOP: f64 = 30.0;
        let span_ms = (self.makespan * 1e3).max(1e-9);
        let scale = WIDTH / span_ms;
        let height = TOP + 2.0 * (LANE_H + 12.0) + 40.0;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{height:.0}" font-family="monospace" font-size="10">"#,
            LEFT + WIDTH + 20.0
        );
        let _ = writeln!(
            svg,
            "<style>.A2A{{fill:#7fb77e}}.FEC,.BEC{{fill:#4a7fc1}}.FNEC,.BNEC{{fill:#8fb3e0}}\
             .Plan{{fill:#c9a0dc}}.SubTrans1,.SubTrans2{{fill:#f0a35e}}.SubAgg1,.SubAgg2{{fill:#e06c75}}</style>"
        );
        let _ = writeln!(
            svg,
            r#"<text x="4" y="16">iteration {} makespan {:.3} ms</text>"#,
            self.iteration,
            self.makespan * 1e3
        );
        for (row, (lane, label)) in [(Lane::Compute, "compute"), (Lane::Network, "network")].into_iter().enumerate() {
            let y = TOP + row as f64 * (LANE_H + 12.0);
            let _ = writeln!(svg, r#"<text x="4" y="{:.1}">{label}</text>"#, y + LANE_H / 2.0 + 4.0);
            for op in self.ops_in(lane).filter(|op| op.duration > 0.0) {
                let x = LEFT + op.start * 1e3 * scale;
                let w = (op.duration * 1e3 * scale).max(0.5);
                let _ = writeln!(
                    svg,
                    r#"<rect class="{:?}" x="{x:.2}" y="{y:.1}" width="{w:.2}" height="{LANE_H:.1}"><title>{:?} block {} iter {}: {:.4} ms</title></rect>"#,
                    op.kind,
                    op.kind,
                    op.block,
                    op.iteration,
                    op.duration * 1e3
                );
            }
        }
        let axis_y = TOP + 2.0 * (LANE_H + 12.0) + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{LEFT}" y1="{axis_y:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="black"/>"#,
            LEFT + WIDTH
        );
        for tick in 0..=10 {
            let ms = span_ms * tick as f64 / 10.0;
            let x = LEFT + ms * scale;
            let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{ms:.2}</text>"#, axis_y + 14.0);
        }
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">ms</text>"#, LEFT + WIDTH + 4.0, axis_y + 14.0);
        svg.push_str("</svg>\n");
        svg
    }
}

struct Builder {
    iteration: usize,
    now: f64,
    ops: Vec<ScheduledOp>,
}

impl Builder {
    fn push(&mut self, kind: OpKind, block: usize, start: f64, duration: f64) {
        let iteration = if kind == OpKind::Plan { self.iteration + 1 } else { self.iteration };
        self.ops.push(ScheduledOp { kind, block, iteration, lane: kind.lane(), start, duration });
    }

    /// Runs one op alone.
    fn serial(&mut self, kind: OpKind, block: usize, duration: f64) {
        self.push(kind, block, self.now, duration);
        self.now += duration;
    }

    /// Starts a compute op and a network op together; the slot ends when
    /// both finish. Returns how far the network op overhangs the compute op.
    fn pair(&mut self, compute: (OpKind, usize, f64), network: (OpKind, usize, f64)) -> f64 {
        let start = self.now;
        self.push(compute.0, compute.1, start, compute.2);
        self.push(network.0, network.1, start, network.2);
        let slot = compute.2.max(network.2);
        self.now += slot;
        slot - compute.2
    }
}

fn check_blocks(per_block: &[LayerCost], plan_times: &[f64], model: &ModelSpec) -> Result<()> {
    if per_block.len() != model.num_blocks || plan_times.len() != model.num_blocks {
        return Err(Error::Dimension(format!(
            "{} block costs and {} plan times for a model with {} blocks",
            per_block.len(),
            plan_times.len(),
            model.num_blocks
        )));
    }
    for &t in plan_times {
        check_non_negative(&[("plan_time", t)])?;
    }
    Ok(())
}

/// Overlapped timeline of iteration `iteration`.
///
/// `per_block_costs[i]` are block `i`'s modelled component times; the
/// Trans/Agg entries are the full (unoverlapped) primitive durations.
/// `plan_times[i]` is the duration of block `i`'s search for the next
/// iteration, zero when the next iteration reuses its placement.
pub fn build_iteration_timeline(
    iteration: usize,
    per_block_costs: &[LayerCost],
    plan_times: &[f64],
    model: &ModelSpec,
) -> Result<IterationTimeline> {
    check_blocks(per_block_costs, plan_times, model)?;
    let blocks = per_block_costs.len();
    let mut b = Builder { iteration, now: 0.0, ops: Vec::new() };
    let mut exposure = vec![BlockExposure::default(); blocks];
    let mut splits = vec![BlockSplit::default(); blocks];

    let fraction = |part: f64, whole: f64| if whole > 0.0 { part / whole } else { 0.0 };

    // Block 0 transfer: nothing earlier to hide behind.
    let head = per_block_costs[0].trans_time;
    b.serial(OpKind::SubTrans1, 0, head);
    b.push(OpKind::SubTrans2, 0, b.now, 0.0);
    exposure[0].trans = head;
    splits[0].trans_sub1_fraction = if head > 0.0 { 1.0 } else { 0.0 };

    for (i, cost) in per_block_costs.iter().enumerate() {
        let plan_time = plan_times[i];
        b.pair((OpKind::Plan, i, plan_time), (OpKind::A2A, i, cost.a2a_time));
        exposure[i].plan = (plan_time - cost.a2a_time).max(0.0);

        let next = per_block_costs.get(i + 1);
        let (sub1, sub2) = match next {
            Some(n) => partition_trans(n.trans_time, cost.fec_time, model.fnec_time)?,
            None => (0.0, 0.0),
        };
        let over1 = b.pair((OpKind::FEC, i, cost.fec_time), (OpKind::SubTrans1, i + 1, sub1));
        b.serial(OpKind::A2A, i, cost.a2a_time);
        let over2 = b.pair((OpKind::FNEC, i, model.fnec_time), (OpKind::SubTrans2, i + 1, sub2));
        if let Some(n) = next {
            exposure[i + 1].trans = over1 + over2;
            splits[i + 1] =
                BlockSplit { trans_sub1_fraction: fraction(sub1, n.trans_time), host: Some(i), ..splits[i + 1] };
        }
    }

    for i in (0..blocks).rev() {
        let cost = &per_block_costs[i];
        let next = per_block_costs.get(i + 1);
        let (sub1, sub2) = match next {
            Some(n) => partition_agg(n.agg_time, cost.bec_time, model.bnec_time)?,
            None => (0.0, 0.0),
        };
        let over1 = b.pair((OpKind::BNEC, i, model.bnec_time), (OpKind::SubAgg1, i + 1, sub1));
        b.serial(OpKind::A2A, i, cost.a2a_time);
        let over2 = b.pair((OpKind::BEC, i, cost.bec_time), (OpKind::SubAgg2, i + 1, sub2));
        b.serial(OpKind::A2A, i, cost.a2a_time);
        if let Some(n) = next {
            exposure[i + 1].agg = over1 + over2;
            splits[i + 1].agg_sub1_fraction = fraction(sub1, n.agg_time);
        }
    }

    // Block 0 aggregation: nothing later to hide behind.
    let tail = per_block_costs[0].agg_time;
    b.serial(OpKind::SubAgg1, 0, tail);
    b.push(OpKind::SubAgg2, 0, b.now, 0.0);
    exposure[0].agg = tail;
    splits[0].agg_sub1_fraction = if tail > 0.0 { 1.0 } else { 0.0 };

    Ok(IterationTimeline { iteration, makespan: b.now, ops: b.ops, plan: SchedulePlan { blocks: splits }, exposure })
}

/// Timeline with every primitive on the critical path: each block searches,
/// transfers, then runs its layer; aggregation follows the backward expert
/// computation.
pub fn build_serial_timeline(
    iteration: usize,
    per_block_costs: &[LayerCost],
    plan_times: &[f64],
    model: &ModelSpec,
) -> Result<IterationTimeline> {
    check_blocks(per_block_costs, plan_times, model)?;
    let blocks = per_block_costs.len();
    let mut b = Builder { iteration, now: 0.0, ops: Vec::new() };
    let mut exposure = vec![BlockExposure::default(); blocks];
    for (i, cost) in per_block_costs.iter().enumerate() {
        let plan_time = plan_times[i];
        b.serial(OpKind::Plan, i, plan_time);
        b.serial(OpKind::SubTrans1, i, cost.trans_time);
        b.serial(OpKind::SubTrans2, i, 0.0);
        b.serial(OpKind::A2A, i, cost.a2a_time);
        b.serial(OpKind::FEC, i, cost.fec_time);
        b.serial(OpKind::A2A, i, cost.a2a_time);
        b.serial(OpKind::FNEC, i, model.fnec_time);
        exposure[i] = BlockExposure { trans: cost.trans_time, agg: cost.agg_time, plan: plan_time };
    }
    for i in (0..blocks).rev() {
        let cost = &per_block_costs[i];
        b.serial(OpKind::BNEC, i, model.bnec_time);
        b.serial(OpKind::A2A, i, cost.a2a_time);
        b.serial(OpKind::BEC, i, cost.bec_time);
        b.serial(OpKind::SubAgg1, i, cost.agg_time);
        b.serial(OpKind::SubAgg2, i, 0.0);
        b.serial(OpKind::A2A, i, cost.a2a_time);
    }
    let splits = per_block_costs
        .iter()
        .map(|c| BlockSplit {
            trans_sub1_fraction: if c.trans_time > 0.0 { 1.0 } else { 0.0 },
            agg_sub1_fraction: if c.agg_time > 0.0 { 1.0 } else { 0.0 },
            host: None,
        })
        .collect();
    Ok(IterationTimeline { iteration, makespan: b.now, ops: b.ops, plan: SchedulePlan { blocks: splits }, exposure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf_model::exposed_after_overlap;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(blocks: usize, fnec: f64, bnec: f64) -> ModelSpec {
        ModelSpec {
            num_experts: 4,
            num_blocks: blocks,
            top_k: 1,
            input_bytes: 1.0,
            expert_param_bytes: 1.0,
            expert_grad_bytes: 1.0,
            fnec_time: fnec,
            bnec_time: bnec,
        }
    }

    fn cost(a2a: f64, fec: f64, trans: f64, agg: f64) -> LayerCost {
        LayerCost {
            a2a_time: a2a,
            fec_time: fec,
            bec_time: 2.0 * fec,
            trans_time: trans,
            agg_time: agg,
            ..LayerCost::default()
        }
    }

    #[test]
    fn partition_examples() {
        let (a, b) = partition_trans(0.20, 0.15, 0.10).unwrap();
        assert_relative_eq!(a, 0.10, max_relative = 1e-12);
        assert_relative_eq!(b, 0.10, max_relative = 1e-12);
        assert_eq!(partition_trans(0.0, 0.15, 0.10).unwrap(), (0.0, 0.0));
        assert_eq!(partition_trans(0.05, 0.15, 0.10).unwrap(), (0.0, 0.05));

        let (a, b) = partition_agg(0.50, 0.30, 0.20).unwrap();
        assert_relative_eq!(a, 0.20, max_relative = 1e-12);
        assert_relative_eq!(b, 0.30, max_relative = 1e-12);
        assert_eq!(partition_agg(0.0, 0.3, 0.2).unwrap(), (0.0, 0.0));
        assert_eq!(partition_agg(0.05, 0.3, 0.2).unwrap(), (0.05, 0.0));
        assert!(partition_trans(-1.0, 0.0, 0.0).is_err());
        assert!(partition_agg(1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn no_primitives_reduces_to_vanilla() {
        let m = model(3, 0.01, 0.02);
        let costs = vec![cost(0.001, 0.004, 0.0, 0.0), cost(0.002, 0.003, 0.0, 0.0), cost(0.0, 0.005, 0.0, 0.0)];
        let t = build_iteration_timeline(0, &costs, &vec![0.0; costs.len()], &m).unwrap();
        let expected: f64 = costs.iter().map(|c| 4.0 * c.a2a_time + 3.0 * c.fec_time + 0.01 + 0.02).sum();
        assert_relative_eq!(t.makespan(), expected, max_relative = 1e-12);
        assert_eq!(t.exposed_comm(), 0.0);
        let s = build_serial_timeline(0, &costs, &vec![0.0; costs.len()], &m).unwrap();
        assert_relative_eq!(s.makespan(), expected, max_relative = 1e-12);
    }

    #[test]
    fn single_block_transfer_is_head_exposed() {
        let m = model(1, 0.10, 0.0);
        let costs = vec![cost(0.01, 0.15, 0.2, 0.0)];
        let t = build_iteration_timeline(0, &costs, &vec![0.0; costs.len()], &m).unwrap();
        assert_relative_eq!(t.exposure[0].trans, 0.2, max_relative = 1e-12);
        let base = build_iteration_timeline(0, &[cost(0.01, 0.15, 0.0, 0.0)], &[0.0], &m).unwrap();
        assert_relative_eq!(t.makespan() - base.makespan(), 0.2, max_relative = 1e-9);
    }

    #[test]
    fn second_block_transfer_hides_behind_first() {
        let m = model(2, 0.10, 0.0);
        let costs = vec![cost(0.01, 0.15, 0.0, 0.0), cost(0.01, 0.15, 0.2, 0.0)];
        let zero = vec![cost(0.01, 0.15, 0.0, 0.0), cost(0.01, 0.15, 0.0, 0.0)];
        let t = build_iteration_timeline(0, &costs, &vec![0.0; costs.len()], &m).unwrap();
        let z = build_iteration_timeline(0, &zero, &vec![0.0; zero.len()], &m).unwrap();
        assert_eq!(t.exposure[1].trans, 0.0);
        assert_relative_eq!(t.makespan(), z.makespan(), max_relative = 1e-12);
        assert_relative_eq!(t.plan.blocks[1].trans_sub1_fraction, 0.5, max_relative = 1e-12);
        assert_eq!(t.plan.blocks[1].host, Some(0));
    }

    #[test]
    fn plan_hides_behind_a2a() {
        let m = model(2, 0.01, 0.01);
        let costs = vec![cost(0.01, 0.02, 0.0, 0.0); 2];
        let with = build_iteration_timeline(3, &costs, &vec![0.005; costs.len()], &m).unwrap();
        let without = build_iteration_timeline(3, &costs, &vec![0.0; costs.len()], &m).unwrap();
        assert_eq!(with.makespan(), without.makespan());
        assert_eq!(with.phase_totals().search, 0.0);
        let plan_ops: Vec<_> = with.ops.iter().filter(|o| o.kind == OpKind::Plan).collect();
        assert_eq!(plan_ops.len(), 2);
        assert!(plan_ops.iter().all(|o| o.iteration == 4));

        let long = build_iteration_timeline(3, &costs, &vec![0.015; costs.len()], &m).unwrap();
        assert_relative_eq!(long.phase_totals().search, 0.01, max_relative = 1e-9);
    }

    #[test]
    fn wrong_block_count_is_an_error() {
        let m = model(3, 0.0, 0.0);
        assert!(matches!(build_iteration_timeline(0, &[LayerCost::default()], &[0.0], &m), Err(Error::Dimension(_))));
    }

    #[test]
    fn svg_and_json_have_both_lanes() {
        let m = model(2, 0.01, 0.01);
        let t = build_iteration_timeline(0, &[cost(0.01, 0.02, 0.03, 0.04); 2], &[0.004; 2], &m).unwrap();
        let svg = t.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(">compute<") && svg.contains(">network<"));
        assert!(svg.contains("class=\"SubTrans1\""));
        let back: IterationTimeline = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    fn arb_costs() -> impl Strategy<Value = (Vec<LayerCost>, ModelSpec, f64)> {
        (1usize..6).prop_flat_map(|blocks| {
            (
                prop::collection::vec((0.0f64..0.01, 0.0f64..0.02, 0.0f64..0.05, 0.0f64..0.05), blocks),
                0.0f64..0.02,
                0.0f64..0.04,
                0.0f64..0.02,
            )
                .prop_map(move |(raw, fnec, bnec, plan)| {
                    let costs = raw.into_iter().map(|(a, f, t, g)| cost(a, f, t, g)).collect();
                    (costs, model(blocks, fnec, bnec), plan)
                })
        })
    }

    fn check_invariants(t: &IterationTimeline, costs: &[LayerCost]) -> std::result::Result<(), TestCaseError> {
        let eps = 1e-12;
        for lane in [Lane::Compute, Lane::Network] {
            let mut ops: Vec<_> = t.ops_in(lane).filter(|o| o.duration > 0.0).collect();
            ops.sort_by(|a, b| a.start.total_cmp(&b.start));
            for w in ops.windows(2) {
                prop_assert!(w[0].end() <= w[1].start + eps, "{:?} overlaps {:?}", w[0], w[1]);
            }
        }
        for op in &t.ops {
            prop_assert_eq!(op.lane, op.kind.lane());
        }
        for (blk, c) in costs.iter().enumerate() {
            let of = |k: OpKind| t.ops.iter().filter(move |o| o.kind == k && o.block == blk);
            let fec_start = of(OpKind::FEC).map(|o| o.start).fold(f64::INFINITY, f64::min);
            let bec_end = of(OpKind::BEC).map(|o| o.end()).fold(0.0, f64::max);
            for o in of(OpKind::SubTrans1).chain(of(OpKind::SubTrans2)) {
                prop_assert!(o.end() <= fec_start + eps);
            }
            for o in of(OpKind::SubAgg1).chain(of(OpKind::SubAgg2)) {
                prop_assert!(o.start + eps >= bec_end);
            }
            let trans: f64 = of(OpKind::SubTrans1).chain(of(OpKind::SubTrans2)).map(|o| o.duration).sum();
            let agg: f64 = of(OpKind::SubAgg1).chain(of(OpKind::SubAgg2)).map(|o| o.duration).sum();
            prop_assert!((trans - c.trans_time).abs() <= eps);
            prop_assert!((agg - c.agg_time).abs() <= eps);
        }
        // Next iteration's Plan ends before this iteration's timeline does,
        // hence before any of the next iteration's transfers.
        for o in t.ops.iter().filter(|o| o.kind == OpKind::Plan) {
            prop_assert!(o.end() <= t.makespan() + eps);
        }
        Ok(())
    }

    proptest! {
        #[test]
        fn overlapped_timeline_invariants((costs, m, plan) in arb_costs()) {
            let t = build_iteration_timeline(0, &costs, &vec![plan; costs.len()], &m).unwrap();
            let s = build_serial_timeline(0, &costs, &vec![plan; costs.len()], &m).unwrap();
            check_invariants(&t, &costs)?;
            check_invariants(&s, &costs)?;
            prop_assert!(t.makespan() <= s.makespan() + 1e-12);
            prop_assert!((t.phase_totals().total() - t.makespan()).abs() <= 1e-12);
            for b in 1..costs.len() {
                let want_t = exposed_after_overlap(costs[b].trans_time, costs[b - 1].fec_time, m.fnec_time);
                let want_a = exposed_after_overlap(costs[b].agg_time, costs[b - 1].bec_time, m.bnec_time);
                prop_assert!((t.exposure[b].trans - want_t).abs() <= 1e-12);
                prop_assert!((t.exposure[b].agg - want_a).abs() <= 1e-12);
            }
        }
    }
}

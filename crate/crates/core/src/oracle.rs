//! Exhaustive placement search for small instances.
//!
//! Used to validate the greedy planner: every subset of experts is tried,
//! and for each selected expert every admissible set of `n` excluded
//! devices.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::perf_model::{layer_cost, CostMode};
use crate::planner::bottom_devices;
use crate::types::{derive_loads, home_device, ClusterSpec, ExpertPlacement, LoadMatrix, ModelSpec};

/// Largest device (= expert) count the oracle accepts.
pub const MAX_DEVICES: usize = 5;

/// Which exclusion sets the enumeration may pick per selected expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchSpace {
    /// Any `n` non-home devices.
    Free,
    /// Only the `n` devices routing the fewest inputs to the expert, as the
    /// greedy search does.
    BottomK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub placement: ExpertPlacement,
    pub cost: f64,
    /// Placements evaluated.
    pub evaluated: usize,
}

fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if pool.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Best placement over the free search space, scored with the overlap-aware
/// model when `scheduled` is set.
pub fn brute_force_best(
    load: &LoadMatrix,
    n: usize,
    cluster: &ClusterSpec,
    model: &ModelSpec,
    scheduled: bool,
) -> Result<(ExpertPlacement, f64)> {
    let mode = if scheduled { CostMode::Scheduled } else { CostMode::Unscheduled };
    let best = brute_force(load, n, cluster, model, mode, SearchSpace::Free, Exec::default())?;
    Ok((best.placement, best.cost))
}

/// Exhaustive search with explicit cost model, space and execution mode.
///
/// Ties resolve to the lexicographically smallest option vector, where
/// option 0 means "not selected" and expert 0 is the most significant digit,
/// so the result does not depend on `exec`.
pub fn brute_force(
    load: &LoadMatrix,
    n: usize,
    cluster: &ClusterSpec,
    model: &ModelSpec,
    mode: CostMode,
    space: SearchSpace,
    exec: Exec,
) -> Result<OracleResult> {
    let devices = load.devices();
    if devices != load.experts() || devices != cluster.num_devices || devices != model.num_experts {
        return Err(Error::Dimension(format!(
            "oracle needs D = E: load is {}x{}, cluster {} devices, model {} experts",
            devices,
            load.experts(),
            cluster.num_devices,
            model.num_experts
        )));
    }
    if devices > MAX_DEVICES {
        return Err(Error::TooLarge { what: "devices", got: devices, limit: MAX_DEVICES });
    }
    if n >= devices {
        return Err(Error::invalid("n", "must be below the device count"));
    }

    // options[e][k]: exclusion set chosen by digit k + 1 for expert e.
    let options: Vec<Vec<Vec<usize>>> = (0..devices)
        .map(|e| match space {
            SearchSpace::Free => {
                let home = home_device(e, devices);
                let pool: Vec<usize> = (0..devices).filter(|&d| d != home).collect();
                combinations(&pool, n)
            }
            SearchSpace::BottomK => vec![bottom_devices(load, e, n)],
        })
        .collect();
    let radix: Vec<usize> = options.iter().map(|o| o.len() + 1).collect();
    let total: usize = radix.iter().product();

    let evaluate = |code: usize| -> Result<(f64, usize)> {
        let mut digits = vec![0; devices];
        let mut rest = code;
        for e in (0..devices).rev() {
            digits[e] = rest % radix[e];
            rest /= radix[e];
        }
        let mut selected = Vec::new();
        let mut excluded = Vec::new();
        for (e, &digit) in digits.iter().enumerate() {
            if digit > 0 {
                selected.push(e);
                excluded.push(options[e][digit - 1].clone());
            }
        }
        let s = selected.len();
        let placement = ExpertPlacement::from_selection(devices, devices, selected, excluded)?;
        let loads = derive_loads(load, &placement)?;
        let n_eff = if s == 0 { 0 } else { n };
        Ok((layer_cost(&loads, s, n_eff, cluster, model)?.total(mode), code))
    };

    const CHUNK: usize = 1024;
    let chunks = total.div_ceil(CHUNK);
    let partial = exec.map_range(chunks, |c| -> Result<(f64, usize)> {
        let mut best = (f64::INFINITY, usize::MAX);
        for code in c * CHUNK..((c + 1) * CHUNK).min(total) {
            let cand = evaluate(code)?;
            if cand.0 < best.0 {
                best = cand;
            }
        }
        Ok(best)
    });
    let mut best = (f64::INFINITY, usize::MAX);
    for p in partial {
        let p = p?;
        if p.0.total_cmp(&best.0).then(p.1.cmp(&best.1)).is_lt() {
            best = p;
        }
    }

    let mut digits = vec![0; devices];
    let mut rest = best.1;
    for e in (0..devices).rev() {
        digits[e] = rest % radix[e];
        rest /= radix[e];
    }
    let (selected, excluded): (Vec<usize>, Vec<Vec<usize>>) =
        digits.iter().enumerate().filter(|(_, &d)| d > 0).map(|(e, &d)| (e, options[e][d - 1].clone())).unzip();
    Ok(OracleResult {
        placement: ExpertPlacement::from_selection(devices, devices, selected, excluded)?,
        cost: best.0,
        evaluated: total,
    })
}

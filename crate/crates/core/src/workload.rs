//! Synthetic gating traces and their JSONL file format.
//!
//! Each layer has a Zipf-like expert popularity over a seeded random expert
//! order, which is also the distribution of iteration 0. Every later
//! iteration the per-expert distribution drifts towards a fresh noisy draw
//! around that popularity:
//!
//! ```text
//! q[t+1] = (1 - drift) * q[t] + drift * fresh
//! ```
//!
//! Expert totals are the largest-remainder rounding of `q * I * top_k`, and
//! the resulting routed inputs are shuffled and dealt to devices so that
//! every device holds `I / D * top_k` of them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::LoadMatrix;

/// Zipf exponent at which 16 experts put over half of their inputs on the
/// top three and under 5% on the bottom three.
pub const CALIBRATED_SKEW: f64 = 1.3;

/// Log-normal noise level of a fresh per-expert draw.
pub const FRESH_NOISE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub devices: usize,
    pub experts: usize,
    pub inputs_per_iteration: u64,
    #[serde(default = "one")]
    pub top_k: usize,
    /// Zipf exponent; 0 gives uniform popularity.
    pub skew: f64,
    /// Share of the per-expert distribution replaced by a fresh draw each
    /// iteration.
    pub drift: f64,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.devices < 2 {
            return Err(Error::invalid("generator.devices", "must be at least 2"));
        }
        if self.experts == 0 {
            return Err(Error::invalid("generator.experts", "must be positive"));
        }
        if self.inputs_per_iteration == 0 {
            return Err(Error::invalid("generator.inputs_per_iteration", "must be positive"));
        }
        if !self.inputs_per_iteration.is_multiple_of(self.devices as u64) {
            return Err(Error::invalid("generator.inputs_per_iteration", "must be divisible by the device count"));
        }
        if self.top_k == 0 || self.top_k > self.experts {
            return Err(Error::invalid("generator.top_k", "must be in 1..=experts"));
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            return Err(Error::invalid("generator.skew", "must be a finite value >= 0"));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return Err(Error::invalid("generator.drift", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One layer of one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    #[serde(rename = "iter")]
    pub iteration: usize,
    pub layer: usize,
    pub counts: LoadMatrix,
}

/// Records ordered by iteration, then layer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    records: Vec<TraceRecord>,
    layers: usize,
}

impl Trace {
    /// Checks that records form a full iteration x layer grid with shared
    /// dimensions, and sorts them.
    pub fn from_records(mut records: Vec<TraceRecord>) -> Result<Self> {
        if records.is_empty() {
            return Ok(Self::default());
        }
        let (d, e) = (records[0].counts.devices(), records[0].counts.experts());
        if let Some(r) = records.iter().find(|r| r.counts.devices() != d || r.counts.experts() != e) {
            return Err(Error::Dimension(format!(
                "iteration {} layer {} is {}x{}, trace is {d}x{e}",
                r.iteration,
                r.layer,
                r.counts.devices(),
                r.counts.experts()
            )));
        }
        records.sort_by_key(|r| (r.iteration, r.layer));
        let layers = records.iter().map(|r| r.layer).max().unwrap_or(0) + 1;
        let iterations = records.last().map_or(0, |r| r.iteration + 1);
        if records.len() != layers * iterations {
            return Err(Error::Dimension(format!(
                "{} records do not cover {iterations} iterations x {layers} layers",
                records.len()
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.iteration != i / layers || r.layer != i % layers {
                return Err(Error::Dimension(format!(
                    "missing or duplicate record near iteration {} layer {}",
                    i / layers,
                    i % layers
                )));
            }
        }
        Ok(Self { records, layers })
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn num_iterations(&self) -> usize {
        self.records.len().checked_div(self.layers).unwrap_or(0)
    }

    pub fn devices(&self) -> usize {
        self.records.first().map_or(0, |r| r.counts.devices())
    }

    pub fn experts(&self) -> usize {
        self.records.first().map_or(0, |r| r.counts.experts())
    }

    pub fn get(&self, iteration: usize, layer: usize) -> &LoadMatrix {
        &self.records[iteration * self.layers + layer].counts
    }

    /// All iterations of one layer, in order.
    pub fn layer_history(&self, layer: usize) -> Vec<LoadMatrix> {
        (0..self.num_iterations()).map(|i| self.get(i, layer).clone()).collect()
    }

    /// Mean locality score between adjacent iterations over all layers.
    pub fn mean_adjacent_locality(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for layer in 0..self.layers {
            for i in 1..self.num_iterations() {
                sum += locality_score(self.get(i - 1, layer), self.get(i, layer));
                count += 1;
            }
        }
        if count == 0 {
            1.0
        } else {
            sum / count as f64
        }
    }
}

fn zipf_weights(experts: usize, skew: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=experts).map(|r| (r as f64).powf(-skew)).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}

fn fresh_draw(base: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = base
        .iter()
        .map(|&p| {
            let z: f64 = StandardNormal.sample(rng);
            p * (FRESH_NOISE * z).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}

/// Integer split of `total` proportional to `shares`, largest remainders
/// first, lowest index on ties.
fn apportion(shares: &[f64], total: u64) -> Vec<u64> {
    let exact: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

fn deal(expert_totals: &[u64], devices: usize, rng: &mut ChaCha8Rng) -> LoadMatrix {
    let experts = expert_totals.len();
    let mut tokens: Vec<u32> =
        expert_totals.iter().enumerate().flat_map(|(e, &c)| std::iter::repeat_n(e as u32, c as usize)).collect();
    tokens.shuffle(rng);
    let per_device = tokens.len() / devices;
    let mut load = LoadMatrix::zeros(devices, experts);
    for (d, chunk) in tokens.chunks(per_device).enumerate() {
        for &e in chunk {
            let e = e as usize;
            load.set(d, e, load.get(d, e) + 1);
        }
    }
    load
}

/// Generates `iterations x layers` records. Deterministic in the seed.
pub fn generate_trace(config: &GeneratorConfig, iterations: usize, layers: usize) -> Result<Vec<TraceRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let routed = config.inputs_per_iteration * config.top_k as u64;
    let zipf = zipf_weights(config.experts, config.skew);

    let mut bases = Vec::with_capacity(layers);
    let mut current = Vec::with_capacity(layers);
    for _ in 0..layers {
        let mut order: Vec<usize> = (0..config.experts).collect();
        order.shuffle(&mut rng);
        let mut base = vec![0.0; config.experts];
        for (rank, &e) in order.iter().enumerate() {
            base[e] = zipf[rank];
        }
        current.push(base.clone());
        bases.push(base);
    }

    let mut records = Vec::with_capacity(iterations * layers);
    for iteration in 0..iterations {
        for layer in 0..layers {
            if iteration > 0 && config.drift > 0.0 {
                let fresh = fresh_draw(&bases[layer], &mut rng);
                for (q, f) in current[layer].iter_mut().zip(fresh) {
                    *q = (1.0 - config.drift) * *q + config.drift * f;
                }
            }
            let totals = apportion(&current[layer], routed);
            records.push(TraceRecord { iteration, layer, counts: deal(&totals, config.devices, &mut rng) });
        }
    }
    Ok(records)
}

/// Pearson correlation of the per-expert totals of two matrices.
///
/// A constant vector has no correlation defined; two equal constant
/// vectors score 1.0 and any other pairing involving a constant vector 0.0.
pub fn locality_score(a: &LoadMatrix, b: &LoadMatrix) -> f64 {
    let x: Vec<f64> = a.expert_totals().into_iter().map(|v| v as f64).collect();
    let y: Vec<f64> = b.expert_totals().into_iter().map(|v| v as f64).collect();
    if x.len() != y.len() || x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(&y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return if sxx == 0.0 && syy == 0.0 && x == y { 1.0 } else { 0.0 };
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Share of all routed inputs held by the `k` busiest and the `k` idlest
/// experts.
pub fn extreme_shares(load: &LoadMatrix, k: usize) -> (f64, f64) {
    let mut totals = load.expert_totals();
    totals.sort_unstable_by(|a, b| b.cmp(a));
    let all: u64 = totals.iter().sum();
    if all == 0 {
        return (0.0, 0.0);
    }
    let k = k.min(totals.len());
    let top: u64 = totals[..k].iter().sum();
    let bottom: u64 = totals[totals.len() - k..].iter().sum();
    (top as f64 / all as f64, bottom as f64 / all as f64)
}

/// Writes one JSON object per line: `{"iter":..,"layer":..,"counts":[[..],..]}`.
pub fn write_trace(records: &[TraceRecord], path: &Path) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("trace record serializes");
        out.write_all(line.as_bytes()).map_err(io)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a JSONL trace; blank lines are skipped. Errors carry the 1-based
/// line number.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut records: Vec<TraceRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_str(&line).map_err(|e| Error::TraceLine { line: lineno, reason: e.to_string() })?;
        if let Some(first) = records.first() {
            let (d, e) = (first.counts.devices(), first.counts.experts());
            if record.counts.devices() != d || record.counts.experts() != e {
                return Err(Error::TraceLine {
                    line: lineno,
                    reason: format!(
                        "counts are {}x{}, earlier lines are {d}x{e}",
                        record.counts.devices(),
                        record.counts.experts()
                    ),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Convenience: reads a trace file and checks the iteration x layer grid.
pub fn load_trace(path: &Path) -> Result<Trace> {
    Trace::from_records(read_trace(path)?)
}

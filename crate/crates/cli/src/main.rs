//! `moebal`: generate gating traces, replay them under load-balancing
//! policies and compare the results.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use moebal_core::simulator::{compare, run_with, SimConfig};
use moebal_core::workload::{load_trace, write_trace};
use moebal_core::{generate_trace, ClusterSpec, Exec, ModelSpec, PlannerConfig, Policy, Trace};

use crate::config::ConfigFile;

/// Command failure with its exit code.
#[derive(Debug)]
pub struct Fail {
    code: u8,
    message: String,
}

impl Fail {
    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<moebal_core::Error> for Fail {
    fn from(e: moebal_core::Error) -> Self {
        if e.is_validation() {
            Fail::validation(e.to_string())
        } else {
            Fail::io(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "moebal", version, about = "Load-balancing simulator for expert-parallel MoE training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic gating trace from the [generator] section.
    Generate {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides generator.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replay a trace under one policy and write report.json / report.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// vanilla, top<m>, prophet or prophet-sched.
        #[arg(long)]
        policy: String,
        /// Also write timeline_iter<j>.svg/.json for these iterations.
        #[arg(long, value_delimiter = ',')]
        gantt: Vec<usize>,
    },
    /// Replay a trace under several policies and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated or repeated; speedups are relative to the first.
        #[arg(long, value_delimiter = ',', required = true)]
        policy: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    trace: PathBuf,
    /// Config file supplying [cluster], [model], [planner] and [sim].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config file whose [cluster] section is used.
    #[arg(long)]
    cluster: Option<PathBuf>,
    /// Config file whose [model] section is used.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reuse_interval: Option<usize>,
}

struct Setup {
    trace: Trace,
    cluster: ClusterSpec,
    model: ModelSpec,
    planner: PlannerConfig,
    sim: SimConfig,
}

impl Common {
    fn setup(&self) -> Result<Setup, Fail> {
        let base = self.config.as_deref().map(ConfigFile::load).transpose()?;
        let cluster = match &self.cluster {
            Some(p) => *ConfigFile::require(&ConfigFile::load(p)?.cluster, "cluster", p)?,
            None => section(&base, self.config.as_deref(), |c| c.cluster, "cluster")?,
        };
        let model = match &self.model {
            Some(p) => *ConfigFile::require(&ConfigFile::load(p)?.model, "model", p)?,
            None => section(&base, self.config.as_deref(), |c| c.model, "model")?,
        };
        let mut planner = base.as_ref().and_then(|c| c.planner).unwrap_or_default();
        if let Some(a) = self.alpha {
            planner.alpha = a;
        }
        if let Some(n) = self.n {
            planner.n = n;
        }
        if let Some(f) = self.reuse_interval {
            planner.reuse_interval = f;
        }
        planner.validate(cluster.num_devices)?;
        let sim = base.as_ref().and_then(|c| c.sim).unwrap_or_default();
        let trace = load_trace(&self.trace)?;
        info!(
            "trace {}: {} iterations x {} layers, {} devices, {} experts",
            self.trace.display(),
            trace.num_iterations(),
            trace.num_layers(),
            trace.devices(),
            trace.experts()
        );
        Ok(Setup { trace, cluster, model, planner, sim })
    }
}

fn section<T: Copy>(
    base: &Option<ConfigFile>,
    path: Option<&Path>,
    get: impl Fn(&ConfigFile) -> Option<T>,
    name: &str,
) -> Result<T, Fail> {
    match (base, path) {
        (Some(cfg), Some(p)) => {
            get(cfg).ok_or_else(|| Fail::validation(format!("{}: missing [{name}] section", p.display())))
        }
        _ => Err(Fail::validation(format!("no [{name}] section: pass --{name} or --config"))),
    }
}

fn create_dir(dir: &Path) -> Result<(), Fail> {
    fs::create_dir_all(dir).map_err(|e| Fail::io(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Fail> {
    fs::write(path, contents).map_err(|e| Fail::io(format!("{}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Fail> {
    let file = ConfigFile::load(config)?;
    let section = ConfigFile::require(&file.generator, "generator", config)?;
    let mut gen = section.generator();
    if let Some(s) = seed {
        gen.seed = s;
    }
    let records = generate_trace(&gen, section.iterations, section.layers)?;
    write_trace(&records, out)?;
    let trace = Trace::from_records(records)?;
    println!(
        "devices={} experts={} iterations={} layers={} mean_locality={:.6}",
        trace.devices(),
        trace.experts(),
        trace.num_iterations(),
        trace.num_layers(),
        trace.mean_adjacent_locality()
    );
    Ok(())
}

fn simulate(common: &Common, policy: &str, gantt: &[usize]) -> Result<(), Fail> {
    let s = common.setup()?;
    let policy = Policy::parse(policy, s.planner)?;
    let report = run_with(&s.trace, &policy, &s.cluster, &s.model, &s.sim, Exec::default())?;
    let timelines =
        gantt.iter().map(|&j| report.timeline(j, &s.model).map(|t| (j, t))).collect::<Result<Vec<_>, _>>()?;
    create_dir(&common.out)?;
    write(&common.out.join("report.json"), &report.to_json())?;
    write(&common.out.join("report.csv"), &report.to_csv())?;
    for (j, t) in timelines {
        write(&common.out.join(format!("timeline_iter{j}.svg")), &t.to_svg())?;
        write(&common.out.join(format!("timeline_iter{j}.json")), &t.to_json())?;
    }
    println!(
        "{}: mean makespan {:.4} ms, speedup vs vanilla {:.3}, mean RB {:.3}",
        report.policy,
        report.summary.mean_makespan * 1e3,
        report.summary.speedup,
        report.summary.mean_rb
    );
    Ok(())
}

fn compare_cmd(common: &Common, names: &[String]) -> Result<(), Fail> {
    let s = common.setup()?;
    let policies = names.iter().map(|n| Policy::parse(n.trim(), s.planner)).collect::<Result<Vec<_>, _>>()?;
    let (table, _) = compare(&s.trace, &policies, &s.cluster, &s.model, &s.sim, Exec::default())?;
    let pretty = table.to_pretty();
    create_dir(&common.out)?;
    write(&common.out.join("compare.csv"), &table.to_csv())?;
    write(&common.out.join("compare.txt"), &pretty)?;
    print!("{pretty}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOEBAL_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { config, out, seed } => generate(config, out, *seed),
        Command::Simulate { common, policy, gantt } => simulate(common, policy, gantt),
        Command::Compare { common, policy } => compare_cmd(common, policy),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

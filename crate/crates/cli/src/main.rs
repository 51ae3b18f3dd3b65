use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use mara::engine::{EngineError, RunOutput};
use mara::report::{compare, render_table, run_seeds, SeedError};
use mara::scenario::{Mode, ScenarioConfig, ScenarioError};
use mara::topology::{random_topology, RandomTopologyParams};

/// Simulate aggregated multicast admission control against per-flow
/// signaling.
#[derive(Parser)]
#[command(name = "mara", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario in one mode.
    Run {
        #[command(flatten)]
        common: Common,
        /// Overrides the scenario's mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Write the aggregation tree catalog to trees.json.
        #[arg(long)]
        dump_trees: bool,
    },
    /// Run both modes on the same seeds and compare them.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Runs the same mode on both sides; for checking the harness.
        #[arg(long, hide = true)]
        same_mode: Option<Mode>,
    },
    /// Generate a random topology file.
    GenTopo {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds or an inclusive range such as 1..10.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    hop_cap: Option<usize>,
    #[arg(long)]
    init_factor: Option<f64>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Io(anyhow::Error),
    Input(anyhow::Error),
    Simulation(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 3,
            Failure::Input(_) => 4,
            Failure::Simulation(_) => 5,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Io(e) | Failure::Input(e) | Failure::Simulation(e) => e,
        }
    }
}

fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().context("bad seed range start")?;
        let b: u64 = b.trim().parse().context("bad seed range end")?;
        anyhow::ensure!(a <= b, "empty seed range {text}");
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .with_context(|| format!("bad seed {s:?}"))
        })
        .collect()
}

fn load(common: &Common) -> Result<(ScenarioConfig, Vec<u64>), Failure> {
    let mut cfg = ScenarioConfig::from_path(&common.scenario).map_err(|e| match e {
        ScenarioError::Io { .. } => Failure::Io(e.into()),
        e => Failure::Input(e.into()),
    })?;
    if let Some(h) = common.hop_cap {
        cfg.hop_cap = Some(h);
    }
    if let Some(f) = common.init_factor {
        cfg.init_factor = f;
    }
    cfg.validate().map_err(|e| Failure::Input(e.into()))?;
    let seeds = match &common.seeds {
        Some(s) => parse_seeds(s).map_err(Failure::Input)?,
        None => vec![cfg.effective_seed()],
    };
    Ok((cfg, seeds))
}

fn classify(e: SeedError) -> Failure {
    let source = &e.source;
    match source {
        EngineError::Scenario(ScenarioError::Io { .. }) => Failure::Io(e.into()),
        EngineError::Scenario(_)
        | EngineError::Workload(_)
        | EngineError::UnknownNode(_)
        | EngineError::NotIngress(_)
        | EngineError::UnknownLink(..) => Failure::Input(e.into()),
        _ => Failure::Simulation(e.into()),
    }
}

/// Files to write once every run has succeeded.
type Outputs = Vec<(PathBuf, String)>;

fn run_outputs(dir: &Path, out: &RunOutput, dump_trees: bool) -> Outputs {
    let r = &out.report;
    let sub = dir.join(format!("{}-{}", r.mode.name(), r.seed));
    let mut files = vec![
        (sub.join("metrics.csv"), r.to_csv()),
        (sub.join("summary.json"), r.summary_json()),
    ];
    if dump_trees {
        files.push((
            sub.join("trees.json"),
            serde_json::to_string_pretty(&out.trees).expect("trees serialize"),
        ));
    }
    files
}

fn write_all(files: &Outputs) -> Result<(), Failure> {
    for (path, text) in files {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))
                .map_err(Failure::Io)?;
        }
        fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(Failure::Io)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            common,
            mode,
            dump_trees,
        } => {
            let (cfg, seeds) = load(&common)?;
            let mode = mode.unwrap_or(cfg.mode);
            let outs = run_seeds(&cfg, mode, &seeds).map_err(classify)?;
            let mut files = Outputs::new();
            for o in &outs {
                let r = &o.report;
                println!(
                    "{} seed {}: {} signaling bytes, {} admitted, {:.1}% signaling-free, mean state {:.2}",
                    r.mode.name(),
                    r.seed,
                    r.total_signaling_bytes,
                    r.admissions,
                    r.signaling_free_percent,
                    r.multicast_state_mean
                );
                files.extend(run_outputs(&common.out, o, dump_trees));
            }
            write_all(&files)
        }
        Command::Compare { common, same_mode } => {
            let (cfg, seeds) = load(&common)?;
            let (left, right) = match same_mode {
                Some(m) => (m, m),
                None => (Mode::Mira, Mode::Mara),
            };
            let mira = run_seeds(&cfg, left, &seeds).map_err(classify)?;
            let mara = run_seeds(&cfg, right, &seeds).map_err(classify)?;
            let mut files = Outputs::new();
            for o in mira.iter().chain(&mara) {
                files.extend(run_outputs(&common.out, o, false));
            }
            let pairs: Vec<_> = mira
                .into_iter()
                .zip(mara)
                .map(|(a, b)| (a.report, b.report))
                .collect();
            let summary = compare(&pairs);
            files.push((
                common.out.join("compare.json"),
                serde_json::to_string_pretty(&summary).expect("summary serializes"),
            ));
            write_all(&files)?;
            print!("{}", render_table(&summary));
            Ok(())
        }
        Command::GenTopo { nodes, seed, out } => {
            let net = random_topology(nodes, seed, &RandomTopologyParams::default())
                .map_err(|e| Failure::Input(e.into()))?;
            write_all(&vec![(out, net.to_json())])
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("4, 9").unwrap(), vec![4, 9]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}

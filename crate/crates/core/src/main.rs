use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use branchflow::harness::{self, ExperimentConfig, Pruner, Simulator};
use branchflow::tree::ray_knight_profile;

#[derive(Parser)]
#[command(name = "branchflow", version, about = "Simulate CSBP flows with competition and pruned Brownian trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a flow simulator. Writes records.csv (replica,level,at,value) and summary.json.
    SimulateFlow(Common),
    /// Run the Lamperti simulator. Writes records.csv (replica,level,at,value) and summary.json.
    SimulateLamperti(Common),
    /// Dump one tree replica: path.csv (step,H,L0), atoms.json
    /// [(birth_step,height,nu,death_step)] and profile.csv (level,value).
    SimulateTree(Common),
    /// Pruned tree profiles over all replicas. Writes records.csv (replica,level,at,value) and summary.json.
    Prune(Common),
    /// KS comparison of `simulator` against `reference`. Writes sample.csv, reference.csv and compare.json.
    Compare(Common),
    /// Coupled grid-deviation sweep over `sweep`. Writes sweep.csv (eps,delta,level,at,mean_abs_dev,se) and sweep.json.
    Sweep(Common),
    /// Picard iteration trace on one path. Writes fixed_point.json.
    FixedPointTrace(Common),
}

fn load(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SimulateFlow(c) => {
            let cfg = load(&c)?;
            if !matches!(
                cfg.simulator,
                Simulator::CsbpFlow | Simulator::CompetitionFlow | Simulator::GridFlow | Simulator::FlowGridDeviation
            ) {
                bail!("simulate-flow needs a flow simulator, got {:?}", cfg.simulator);
            }
            report(&harness::run_experiment(&cfg)?)?;
        }
        Command::SimulateLamperti(c) => {
            let cfg = ExperimentConfig {
                simulator: Simulator::Lamperti,
                ..load(&c)?
            };
            report(&harness::run_experiment(&cfg)?)?;
        }
        Command::SimulateTree(c) => dump_tree(&load(&c)?)?,
        Command::Prune(c) => {
            let cfg = ExperimentConfig {
                simulator: Simulator::Tree,
                ..load(&c)?
            };
            report(&harness::run_experiment(&cfg)?)?;
        }
        Command::Compare(c) => report(&harness::compare(&load(&c)?)?)?,
        Command::Sweep(c) => report(&harness::sweep(&load(&c)?)?)?,
        Command::FixedPointTrace(c) => {
            let cfg = ExperimentConfig {
                pruner: Pruner::FixedPoint,
                ..load(&c)?
            };
            report(&harness::fixed_point_trace(&cfg)?)?;
        }
    }
    Ok(())
}

fn report(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dump_tree(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let cfg = ExperimentConfig {
        simulator: Simulator::Tree,
        ..cfg.clone()
    };
    cfg.validate()?;
    let dir: &Path = cfg.out.as_deref().context("simulate-tree needs --out or `out` in the config")?;
    std::fs::create_dir_all(dir)?;
    let seed = harness::replica_seed(cfg.seed, 0);
    let (path, marks) = harness::tree_sample(&cfg, seed)?;
    let field = harness::pruned_field(&cfg, &path, &marks)?;

    let mut w = csv::Writer::from_path(dir.join("path.csv"))?;
    w.write_record(["step", "H", "L0"])?;
    for (s, h) in path.heights.iter().enumerate() {
        w.serialize((s, h, path.zero_local_time(s)))?;
    }
    w.flush()?;

    let atoms: Vec<_> = marks
        .atoms
        .iter()
        .map(|a| (a.birth_step, a.height, a.nu, a.death_step))
        .collect();
    std::fs::write(dir.join("atoms.json"), serde_json::to_string(&atoms)?)?;

    let mut w = csv::Writer::from_path(dir.join("profile.csv"))?;
    w.write_record(["level", "value"])?;
    for (j, v) in ray_knight_profile(&field, &path)?.iter().enumerate() {
        w.serialize((field.height_of(j), v))?;
    }
    w.flush()?;
    println!(
        "{{\"seed\": {seed}, \"steps\": {}, \"atoms\": {}, \"stop_reason\": {}}}",
        path.n_steps(),
        marks.atoms.len(),
        serde_json::to_string(&path.stop_reason)?
    );
    Ok(())
}

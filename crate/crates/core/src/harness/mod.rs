//! Replica-parallel experiments, comparisons and grid sweeps.

mod config;
mod output;

pub use config::{ExperimentConfig, Pruner, Simulator, Transform};
pub use output::{write_records, write_sweep};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::flow::{simulate_competition_flow, simulate_csbp_flow, simulate_grid_flow, simulate_lamperti, FlowPath, LampertiOptions};
use crate::mechanism::CompetitionMechanism;
use crate::noise::{mix64, NoiseField};
use crate::stats::{ks_two_sample, KsResult, SampleSummary};
use crate::tree::{
    fixed_point_nu_cap, generate_snake_marks, prune_constant, prune_fixed_point, prune_grid, ray_knight_profile,
    simulate_height_path_extending, FixedPoint, FixedPointOptions, HeightOptions, HeightPath, LocalTimeField, MarkSet,
};

/// One observed value of one replica.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Record {
    pub replica: usize,
    /// Initial mass (flows) or root mass x (trees).
    pub level: f64,
    /// Time (flows) or height (trees).
    pub at: f64,
    pub value: f64,
}

/// Summary of the values at one (level, at) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub level: f64,
    pub at: f64,
    pub summary: SampleSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub scenario: String,
    pub simulator: Simulator,
    pub replicas: usize,
    pub seed: u64,
    pub series: Vec<SeriesSummary>,
    #[serde(skip)]
    pub records: Vec<Record>,
}

impl ExperimentOutput {
    pub fn values(&self, series: usize) -> &[f64] {
        self.series[series].summary.values()
    }
}

/// Seed of replica `index`: the experiment seed xor a hash of the index.
pub fn replica_seed(seed: u64, index: usize) -> u64 {
    seed ^ mix64(index as u64)
}

/// Independent seed stream for the reference side of a comparison.
fn reference_seed(seed: u64) -> u64 {
    mix64(seed ^ 0x7265_6665_7265_6e63)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out = run_simulator(cfg, cfg.simulator, cfg.seed)?;
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        write_records(&dir.join("records.csv"), &out.records)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out)?)?;
    }
    Ok(out)
}

fn run_simulator(cfg: &ExperimentConfig, sim: Simulator, seed: u64) -> Result<ExperimentOutput> {
    let points = series_points(cfg, sim);
    let rows: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let s = replica_seed(seed, i);
            replica(cfg, sim, s).map_err(|e| Error::Replica {
                index: i,
                seed: s,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(rows.len() * points.len());
    for (i, row) in rows.iter().enumerate() {
        for (&(level, at), &v) in points.iter().zip(row) {
            records.push(Record {
                replica: i,
                level,
                at,
                value: cfg.transform.apply(v),
            });
        }
    }
    let series = points
        .iter()
        .enumerate()
        .map(|(k, &(level, at))| {
            let vals: Vec<f64> = rows.iter().map(|r| cfg.transform.apply(r[k])).collect();
            Ok(SeriesSummary {
                level,
                at,
                summary: SampleSummary::new(&vals)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentOutput {
        scenario: cfg.scenario.clone(),
        simulator: sim,
        replicas: cfg.replicas,
        seed,
        series,
        records,
    })
}

/// (level, at) pairs in the order a replica reports them.
fn series_points(cfg: &ExperimentConfig, sim: Simulator) -> Vec<(f64, f64)> {
    let observe = cfg.observe();
    if sim.is_tree() {
        observe.iter().map(|&a| (cfg.x, a)).collect()
    } else {
        cfg.levels()
            .iter()
            .flat_map(|&v| observe.iter().map(move |&t| (v, t)))
            .collect()
    }
}

fn replica(cfg: &ExperimentConfig, sim: Simulator, seed: u64) -> Result<Vec<f64>> {
    match sim {
        Simulator::CsbpFlow | Simulator::CompetitionFlow | Simulator::GridFlow => {
            let noise = flow_noise(cfg, seed)?;
            let path = flow_path(cfg, sim, &noise)?;
            read_flow(cfg, &path)
        }
        Simulator::FlowGridDeviation => {
            let noise = flow_noise(cfg, seed)?;
            let exact = read_flow(cfg, &flow_path(cfg, Simulator::CompetitionFlow, &noise)?)?;
            let grid = read_flow(cfg, &flow_path(cfg, Simulator::GridFlow, &noise)?)?;
            Ok(exact.iter().zip(&grid).map(|(a, b)| (a - b).abs()).collect())
        }
        Simulator::Lamperti => {
            let dt = cfg.lamperti_dt.unwrap_or(cfg.dt);
            let mut opts = LampertiOptions::new(dt, seed);
            opts.dt_out = cfg.dt;
            let comp = cfg.competition();
            let horizon = flow_horizon(cfg);
            let mut out = Vec::new();
            for &v in &cfg.levels() {
                if v == 0.0 {
                    out.extend(cfg.observe().iter().map(|_| 0.0));
                    continue;
                }
                let p = simulate_lamperti(&cfg.mechanism, &comp, v, &opts, horizon)?;
                for &t in &cfg.observe() {
                    let i = (t / cfg.dt).round() as usize;
                    out.push(*p.output.get(i).ok_or_else(|| config(format!("time {t} is past the output grid")))?);
                }
            }
            Ok(out)
        }
        Simulator::Tree => {
            let (path, marks) = tree_sample(cfg, seed)?;
            let field = pruned_field(cfg, &path, &marks)?;
            read_tree(cfg, &field, &path)
        }
        Simulator::TreeGridDeviation => {
            let (path, marks) = tree_sample(cfg, seed)?;
            let comp = cfg.competition();
            let exact = fixed_point(cfg, &path, &marks, &comp)?;
            let (grid, _) = prune_grid(&path, &marks, cfg.eps, cfg.delta, &comp)?;
            let a = read_tree(cfg, &exact.field, &path)?;
            let b = read_tree(cfg, &grid, &path)?;
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect())
        }
    }
}

fn flow_horizon(cfg: &ExperimentConfig) -> f64 {
    cfg.observe().iter().copied().fold(cfg.t_end, f64::max)
}

fn flow_noise(cfg: &ExperimentConfig, seed: u64) -> Result<NoiseField> {
    NoiseField::new(seed, cfg.dt, cfg.du, flow_horizon(cfg), cfg.nu_max(), cfg.mechanism.jumps())
}

fn flow_path(cfg: &ExperimentConfig, sim: Simulator, noise: &NoiseField) -> Result<FlowPath> {
    let levels = cfg.levels();
    let t = noise.horizon_t();
    match sim {
        Simulator::CsbpFlow => simulate_csbp_flow(&cfg.mechanism, &levels, noise, t),
        Simulator::CompetitionFlow => simulate_competition_flow(&cfg.mechanism, &cfg.competition(), &levels, noise, t),
        Simulator::GridFlow => simulate_grid_flow(&cfg.mechanism, &cfg.competition(), cfg.eps, cfg.delta, &levels, noise, t),
        _ => unreachable!("not a flow simulator"),
    }
}

fn read_flow(cfg: &ExperimentConfig, path: &FlowPath) -> Result<Vec<f64>> {
    let observe = cfg.observe();
    let rows: Vec<&[f64]> = observe
        .iter()
        .map(|&t| path.at_time(t).ok_or_else(|| config(format!("time {t} is outside the flow path"))))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(path.levels.len() * rows.len());
    for j in 0..path.levels.len() {
        out.extend(rows.iter().map(|r| r[j]));
    }
    Ok(out)
}

fn height_options(cfg: &ExperimentConfig, seed: u64) -> HeightOptions {
    HeightOptions {
        ds: cfg.ds,
        level_bin: cfg.eps_l,
        horizon: cfg.horizon,
        height_cap: cfg.height_cap,
        seed,
    }
}

/// Mark cap large enough for the configured pruner on this path.
fn nu_cap(cfg: &ExperimentConfig, path: &HeightPath) -> f64 {
    match cfg.pruner {
        Pruner::None => 0.0,
        Pruner::Constant { theta } => theta,
        Pruner::Grid | Pruner::FixedPoint => fixed_point_nu_cap(path, &cfg.competition()),
    }
}

/// Height path and snake marks of one tree replica.
pub fn tree_sample(cfg: &ExperimentConfig, seed: u64) -> Result<(HeightPath, MarkSet)> {
    let path = simulate_height_path_extending(&cfg.mechanism, cfg.x, &height_options(cfg, seed))?;
    let cap = if cfg.simulator == Simulator::TreeGridDeviation {
        fixed_point_nu_cap(&path, &cfg.competition())
    } else {
        nu_cap(cfg, &path)
    };
    let marks = generate_snake_marks(&path, cap, mix64(seed ^ 0x6d61_726b))?;
    Ok((path, marks))
}

pub fn pruned_field(cfg: &ExperimentConfig, path: &HeightPath, marks: &MarkSet) -> Result<LocalTimeField> {
    match cfg.pruner {
        Pruner::None => Ok(path.local_time.clone()),
        Pruner::Constant { theta } => prune_constant(path, marks, theta),
        Pruner::Grid => prune_grid(path, marks, cfg.eps, cfg.delta, &cfg.competition()).map(|(f, _)| f),
        Pruner::FixedPoint => fixed_point(cfg, path, marks, &cfg.competition()).map(|f| f.field),
    }
}

fn fixed_point(cfg: &ExperimentConfig, path: &HeightPath, marks: &MarkSet, comp: &CompetitionMechanism) -> Result<FixedPoint> {
    let opts = FixedPointOptions {
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        keep_iterates: false,
    };
    prune_fixed_point(path, marks, comp, &opts)
}

fn read_tree(cfg: &ExperimentConfig, field: &LocalTimeField, path: &HeightPath) -> Result<Vec<f64>> {
    let profile = ray_knight_profile(field, path)?;
    cfg.observe()
        .iter()
        .map(|&a| field.level_index(a).map(|j| profile.get(j).copied().unwrap_or(0.0)))
        .collect()
}

/// KS comparison of one series of the sample against the matching reference series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparedSeries {
    pub level: f64,
    pub at: f64,
    pub sample: SampleSummary,
    pub reference: SampleSummary,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub scenario: String,
    pub simulator: Simulator,
    pub reference: Simulator,
    pub series: Vec<ComparedSeries>,
    /// Every series passed the 1% KS test.
    pub passed: bool,
}

/// Run `simulator` and `reference` on independent seeds and KS-compare series by position.
pub fn compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let reference = cfg
        .reference
        .ok_or_else(|| config("compare needs a reference simulator"))?;
    let a = run_simulator(cfg, cfg.simulator, cfg.seed)?;
    let b = run_simulator(cfg, reference, reference_seed(cfg.seed))?;
    if a.series.len() != b.series.len() {
        return Err(config("simulator and reference report different numbers of series"));
    }
    let series = a
        .series
        .iter()
        .zip(&b.series)
        .map(|(x, y)| {
            Ok(ComparedSeries {
                level: x.level,
                at: x.at,
                ks: ks_two_sample(x.summary.values(), y.summary.values())?,
                sample: x.summary.clone(),
                reference: y.summary.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = CompareReport {
        scenario: cfg.scenario.clone(),
        simulator: cfg.simulator,
        reference,
        passed: series.iter().all(|s| s.ks.passed),
        series,
    };
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        write_records(&dir.join("sample.csv"), &a.records)?;
        write_records(&dir.join("reference.csv"), &b.records)?;
        std::fs::write(dir.join("compare.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub delta: f64,
    pub level: f64,
    pub at: f64,
    pub mean_abs_dev: f64,
    pub se: f64,
}

/// Coupled deviation experiment at every (ε, δ) of the grid.
/// Tree configs sweep the pruned local times, everything else sweeps the flow.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.sweep.is_empty() {
        return Err(config("sweep grid is empty"));
    }
    let sim = if cfg.simulator.is_tree() {
        Simulator::TreeGridDeviation
    } else {
        Simulator::FlowGridDeviation
    };
    let mut rows = Vec::new();
    for &(eps, delta) in &cfg.sweep {
        let point = ExperimentConfig {
            simulator: sim,
            eps,
            delta,
            transform: Transform::Identity,
            out: None,
            ..cfg.clone()
        };
        let out = run_experiment(&point)?;
        rows.extend(out.series.iter().map(|s| SweepRow {
            eps,
            delta,
            level: s.level,
            at: s.at,
            mean_abs_dev: s.summary.mean,
            se: s.summary.std_error,
        }));
    }
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        write_sweep(&dir.join("sweep.csv"), &rows)?;
        std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointTrace {
    pub seed: u64,
    pub gaps: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// L^a_{T_x} of every iterate at each observed height.
    pub profiles: Vec<Vec<f64>>,
}

/// Picard trace on the path of replica 0.
pub fn fixed_point_trace(cfg: &ExperimentConfig) -> Result<FixedPointTrace> {
    cfg.validate()?;
    let seed = replica_seed(cfg.seed, 0);
    let fp_cfg = ExperimentConfig {
        pruner: Pruner::FixedPoint,
        ..cfg.clone()
    };
    let (path, marks) = tree_sample(&fp_cfg, seed)?;
    let opts = FixedPointOptions {
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        keep_iterates: true,
    };
    let fp = prune_fixed_point(&path, &marks, &cfg.competition(), &opts)?;
    let profiles = fp
        .iterates
        .iter()
        .map(|f| read_tree(cfg, f, &path))
        .collect::<Result<_>>()?;
    let trace = FixedPointTrace {
        seed,
        gaps: fp.gaps,
        iterations: fp.iterations,
        converged: fp.converged,
        residual: fp.residual,
        profiles,
    };
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("fixed_point.json"), serde_json::to_string_pretty(&trace)?)?;
    }
    Ok(trace)
}

//! Frozen-drift grid flow Z^{ε,δ} and the coupled (Y, Z, Z^{ε,δ}) simulator.
//!
//! At each window start kε the current population [0, Z_{kε}(top)) is cut at the
//! boundaries lδ. Every boundary and every level gets a track that evolves by the
//! shared Euler step on the same sheet, so the mass between two tracks is driven by
//! the sheet read between them, i.e. shifted by the lower-block total. The block
//! [nδ, (n+1)δ) carries the frozen rate g(nδ); summed over blocks this is the drift
//!
//! G_fr(Y) = g(0)·Y + Σ_{lδ < y} (g(lδ) − g((l−1)δ))·(Y − Y_l),
//!
//! which is θ·Y exactly when g ≡ θ.

use serde::Serialize;

use super::{check_levels, monotone, whole_steps, FlowPath, Stepper};
use crate::error::{config, Result};
use crate::mechanism::{BranchingMechanism, CompetitionMechanism};
use crate::noise::{NoiseField, StepNoise};

/// Mass carried by block n of window k at the window's start and end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockRecord {
    pub window: usize,
    pub block: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFlow {
    pub path: FlowPath,
    pub blocks: Vec<BlockRecord>,
}

struct GridState {
    g0: f64,
    dg: Vec<f64>,
    boundaries: Vec<f64>,
    boundary_start: Vec<f64>,
    below: Vec<usize>,
    top_start: f64,
}

impl GridState {
    fn start_window(comp: &CompetitionMechanism, delta: f64, row: &[f64]) -> Self {
        let top = row.last().copied().unwrap_or(0.0);
        let mut boundary_start = Vec::new();
        let mut l = 1usize;
        while (l as f64) * delta < top {
            boundary_start.push(l as f64 * delta);
            l += 1;
        }
        let g: Vec<f64> = (0..=boundary_start.len())
            .map(|l| comp.g_unchecked(l as f64 * delta))
            .collect();
        let dg = g.windows(2).map(|w| w[1] - w[0]).collect();
        let below = row
            .iter()
            .map(|&y| boundary_start.partition_point(|&b| b < y))
            .collect();
        GridState {
            g0: g[0],
            dg,
            boundaries: boundary_start.clone(),
            boundary_start,
            below,
            top_start: top,
        }
    }

    fn frozen_drift(&self, y: f64, below: usize) -> f64 {
        let mut d = self.g0 * y;
        for l in 0..below {
            d += self.dg[l] * (y - self.boundaries[l]);
        }
        d
    }

    fn step(&mut self, stepper: &Stepper, row: &[f64], cell: &StepNoise<'_>, k: u64) -> Result<(Vec<f64>, usize)> {
        let mut next_b = Vec::with_capacity(self.boundaries.len());
        for (l, &b) in self.boundaries.iter().enumerate() {
            next_b.push(stepper.advance(b, self.frozen_drift(b, l), cell, k)?);
        }
        let mut next = Vec::with_capacity(row.len());
        for (i, &z) in row.iter().enumerate() {
            next.push(stepper.advance(z, self.frozen_drift(z, self.below[i]), cell, k)?);
        }
        monotone(&mut next_b);
        let bound = monotone(&mut next);
        self.boundaries = next_b;
        Ok((next, bound))
    }

    /// Block masses at the window's end, given the top level's track.
    fn records(&self, window: usize, top_end: f64) -> Vec<BlockRecord> {
        let n = self.boundary_start.len();
        (0..=n)
            .map(|b| {
                let lo_s = if b == 0 { 0.0 } else { self.boundary_start[b - 1] };
                let lo_e = if b == 0 { 0.0 } else { self.boundaries[b - 1] };
                let hi_s = if b < n { self.boundary_start[b] } else { self.top_start };
                let hi_e = if b < n { self.boundaries[b] } else { top_end };
                BlockRecord {
                    window,
                    block: b,
                    start: hi_s - lo_s,
                    end: hi_e - lo_e,
                }
            })
            .collect()
    }
}

fn grid_setup(noise: &NoiseField, levels: &[f64], eps: f64, delta: f64, t_end: f64) -> Result<(u64, u64)> {
    check_levels(levels, noise)?;
    if !(eps > 0.0 && delta > 0.0) {
        return Err(config("grid flow needs eps, delta > 0"));
    }
    let window = whole_steps(eps, noise.dt(), "eps")?;
    if window == 0 {
        return Err(config("eps must be at least one time step"));
    }
    let end = whole_steps(t_end, noise.dt(), "t_end")?;
    if end > noise.steps() as u64 {
        return Err(config(format!("t_end = {t_end} exceeds the noise horizon {}", noise.horizon_t())));
    }
    Ok((window, end))
}

/// Z^{ε,δ}: blockwise ψ_{g(nδ)}-CSBPs on shifted noise, recut every ε.
pub fn simulate_grid_flow(
    mech: &BranchingMechanism,
    comp: &CompetitionMechanism,
    eps: f64,
    delta: f64,
    levels: &[f64],
    noise: &NoiseField,
    t_end: f64,
) -> Result<FlowPath> {
    run_grid(mech, comp, eps, delta, levels, noise, t_end, false).map(|g| g.path)
}

/// As [`simulate_grid_flow`], also returning the per-window block masses.
pub fn simulate_grid_flow_blocks(
    mech: &BranchingMechanism,
    comp: &CompetitionMechanism,
    eps: f64,
    delta: f64,
    levels: &[f64],
    noise: &NoiseField,
    t_end: f64,
) -> Result<GridFlow> {
    run_grid(mech, comp, eps, delta, levels, noise, t_end, true)
}

#[allow(clippy::too_many_arguments)]
fn run_grid(
    mech: &BranchingMechanism,
    comp: &CompetitionMechanism,
    eps: f64,
    delta: f64,
    levels: &[f64],
    noise: &NoiseField,
    t_end: f64,
    keep_blocks: bool,
) -> Result<GridFlow> {
    let (window, end) = grid_setup(noise, levels, eps, delta, t_end)?;
    let stepper = Stepper::new(mech, noise);
    let mut path = FlowPath::new(noise.dt(), 0, levels, levels.to_vec());
    let mut blocks = Vec::new();
    let mut row = levels.to_vec();
    let mut k = 0u64;
    while k < end {
        let mut state = GridState::start_window(comp, delta, &row);
        let stop = (k + window).min(end);
        while k < stop {
            let cell = noise.step(k);
            let (next, _) = state.step(&stepper, &row, &cell, k)?;
            path.push(k + 1, next.clone());
            row = next;
            k += 1;
        }
        if keep_blocks {
            let w = ((k - 1) / window) as usize;
            blocks.extend(state.records(w, row.last().copied().unwrap_or(0.0)));
        }
    }
    Ok(GridFlow { path, blocks })
}

/// How often, and by how much, the coupled scheme had to project.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ProjectionStats {
    /// Level-steps checked.
    pub checks: usize,
    /// Level-steps where the competition track was pulled down to the CSBP track.
    pub competition_clamped: usize,
    pub grid_clamped: usize,
    /// Largest excess removed by those clamps.
    pub competition_max_excess: f64,
    pub grid_max_excess: f64,
    /// Level-steps where a running maximum across levels was applied.
    pub monotone_fixes: usize,
}

/// Y (ψ-CSBP), Z (competition) and Z^{ε,δ} on one noise field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledFlow {
    pub base: FlowPath,
    pub competition: FlowPath,
    pub grid: FlowPath,
    pub projection: ProjectionStats,
}

fn clamp_below(row: &mut [f64], cap: &[f64], count: &mut usize, excess: &mut f64) {
    for (z, &y) in row.iter_mut().zip(cap) {
        if *z > y {
            *excess = excess.max(*z - y);
            *z = y;
            *count += 1;
        }
    }
}

/// Joint Euler scheme keeping Z_t(v) ≤ Y_t(v) and Z^{ε,δ}_t(v) ≤ Y_t(v) at every step.
/// The explicit scheme can cross by O(√dt) when two tracks are within O(dt) of each
/// other; those crossings are clamped and counted in [`ProjectionStats`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled(
    mech: &BranchingMechanism,
    comp: &CompetitionMechanism,
    eps: f64,
    delta: f64,
    levels: &[f64],
    noise: &NoiseField,
    t_end: f64,
) -> Result<CoupledFlow> {
    let (window, end) = grid_setup(noise, levels, eps, delta, t_end)?;
    let stepper = Stepper::new(mech, noise);
    let mut base = FlowPath::new(noise.dt(), 0, levels, levels.to_vec());
    let mut competition = base.clone();
    let mut grid = base.clone();
    let mut stats = ProjectionStats::default();
    let (mut y, mut z, mut zg) = (levels.to_vec(), levels.to_vec(), levels.to_vec());
    let mut state = GridState::start_window(comp, delta, &zg);
    for k in 0..end {
        if k % window == 0 {
            state = GridState::start_window(comp, delta, &zg);
        }
        let cell = noise.step(k);
        let mut ny = Vec::with_capacity(y.len());
        let mut nz = Vec::with_capacity(z.len());
        for (&yv, &zv) in y.iter().zip(&z) {
            ny.push(stepper.advance(yv, 0.0, &cell, k)?);
            nz.push(stepper.advance(zv, comp.big_g_unchecked(zv), &cell, k)?);
        }
        stats.monotone_fixes += monotone(&mut ny) + monotone(&mut nz);
        let (mut ng, fixes) = state.step(&stepper, &zg, &cell, k)?;
        stats.monotone_fixes += fixes;
        clamp_below(&mut nz, &ny, &mut stats.competition_clamped, &mut stats.competition_max_excess);
        clamp_below(&mut ng, &ny, &mut stats.grid_clamped, &mut stats.grid_max_excess);
        stats.checks += levels.len();
        base.push(k + 1, ny.clone());
        competition.push(k + 1, nz.clone());
        grid.push(k + 1, ng.clone());
        y = ny;
        z = nz;
        zg = ng;
    }
    Ok(CoupledFlow {
        base,
        competition,
        grid,
        projection: stats,
    })
}

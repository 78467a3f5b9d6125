//! Brownian height process, Poisson snake marks and pruned local times.

mod field;
mod fixed_point;
mod marks;
mod profile;
mod prune;

pub use field::{LevelSeries, LocalTimeField};
pub use fixed_point::{fixed_point_nu_cap, prune_fixed_point, FixedPoint, FixedPointOptions};
pub use marks::{generate_snake_marks, MarkAtom, MarkSet};
pub use profile::{breve_t, excursions_above, flow_property_gap, ray_knight_profile, Excursion};
pub use prune::{prune_constant, prune_grid, prune_with_field, GridIntensity, IntensityField};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::mechanism::BranchingMechanism;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// L⁰ reached the target mass.
    ReachedTx,
    /// The exploration horizon ran out first.
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightOptions {
    pub ds: f64,
    /// Local-time bin width; defaults to √ds.
    pub level_bin: Option<f64>,
    /// Maximal exploration time.
    pub horizon: f64,
    /// Reflect H below this height. Local times and marks below the cap keep their law.
    pub height_cap: Option<f64>,
    pub seed: u64,
}

impl HeightOptions {
    pub fn new(ds: f64, horizon: f64, seed: u64) -> Self {
        HeightOptions {
            ds,
            level_bin: None,
            horizon,
            height_cap: None,
            seed,
        }
    }

    pub fn bin(&self) -> f64 {
        self.level_bin.unwrap_or_else(|| self.ds.sqrt())
    }
}

/// Discretised height process H = (2/σ²)(X − I) of X_s = −αs + σB_s, stopped at T_x.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeightPath {
    pub ds: f64,
    pub x: f64,
    /// H at steps 0..=N.
    pub heights: Vec<f64>,
    /// Minimum of H over the transition n → n+1, from the exact bridge minimum of X.
    pub step_min: Vec<f64>,
    pub level_bin: f64,
    /// Unpruned local times; level 0 is L⁰ = −I.
    pub local_time: LocalTimeField,
    pub height_cap: Option<f64>,
    pub stop_reason: StopReason,
}

impl HeightPath {
    pub fn n_steps(&self) -> usize {
        self.step_min.len()
    }

    pub fn zero_local_time(&self, step: usize) -> f64 {
        self.local_time.value(0, step)
    }

    pub fn truncated(&self) -> bool {
        self.stop_reason == StopReason::Horizon
    }

    /// Smallest H over the exploration interval [s, s′], including within-step minima.
    pub fn min_between(&self, s: usize, s2: usize) -> f64 {
        let (a, b) = if s <= s2 { (s, s2) } else { (s2, s) };
        let inner = self.step_min[a..b].iter().copied().fold(f64::INFINITY, f64::min);
        inner.min(self.heights[a]).min(self.heights[b])
    }
}

/// Simulate H until L⁰ reaches `x` or the horizon runs out.
pub fn simulate_height_path(mech: &BranchingMechanism, x: f64, opts: &HeightOptions) -> Result<HeightPath> {
    if !mech.jumps().is_empty() {
        return Err(domain("the height process is only implemented for Brownian mechanisms"));
    }
    if !(mech.sigma() > 0.0) {
        return Err(domain("the height process needs sigma > 0"));
    }
    if !(x >= 0.0 && x.is_finite()) {
        return Err(domain(format!("target local time must be >= 0, got {x}")));
    }
    if !(opts.ds > 0.0 && opts.horizon >= 0.0 && opts.bin() > 0.0) {
        return Err(config("height path needs ds > 0, level_bin > 0 and horizon >= 0"));
    }
    if let Some(cap) = opts.height_cap {
        if !(cap > 0.0) {
            return Err(config("height cap must be positive"));
        }
    }
    let sigma = mech.sigma();
    let scale = 2.0 / (sigma * sigma);
    let drift = -mech.alpha() * opts.ds;
    let sd = sigma * opts.ds.sqrt();
    let two_var = 2.0 * sigma * sigma * opts.ds;
    let cap_x = opts.height_cap.map(|c| c / scale);
    let max_steps = (opts.horizon / opts.ds).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut heights = vec![0.0];
    let mut step_min = Vec::new();
    let mut zero = vec![0.0];
    let mut y = 0.0f64;
    let mut neg_inf = 0.0f64;
    let mut stop_reason = StopReason::ReachedTx;
    while neg_inf < x {
        if step_min.len() >= max_steps {
            stop_reason = StopReason::Horizon;
            break;
        }
        let dx = drift + sd * rng.sample::<f64, _>(StandardNormal);
        let u: f64 = 1.0 - rng.random::<f64>();
        let bridge_min = 0.5 * (dx - (dx * dx - two_var * u.ln()).sqrt());
        let low = y + bridge_min;
        let push = (-low).max(0.0);
        neg_inf += push;
        let mut next = y + dx + push;
        if let Some(c) = cap_x {
            next = next.min(c);
        }
        if !next.is_finite() {
            return Err(Error::Numerical {
                step: step_min.len(),
                msg: "non-finite height".into(),
            });
        }
        step_min.push(scale * low.max(0.0).min(next));
        heights.push(scale * next);
        zero.push(neg_inf);
        y = next;
    }
    let level_bin = opts.bin();
    let local_time = prune::unpruned_field(&heights, &step_min, &zero, opts.ds, level_bin);
    Ok(HeightPath {
        ds: opts.ds,
        x,
        heights,
        step_min,
        level_bin,
        local_time,
        height_cap: opts.height_cap,
        stop_reason,
    })
}

/// Simulate with the horizon doubled up to three times until T_x is reached.
pub fn simulate_height_path_extending(mech: &BranchingMechanism, x: f64, opts: &HeightOptions) -> Result<HeightPath> {
    let mut o = *opts;
    for _ in 0..4 {
        let p = simulate_height_path(mech, x, &o)?;
        if !p.truncated() {
            return Ok(p);
        }
        o.horizon *= 2.0;
    }
    Err(Error::Truncated(format!(
        "T_x not reached within exploration time {} (seed {})",
        o.horizon / 2.0,
        opts.seed
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brownian(alpha: f64) -> BranchingMechanism {
        BranchingMechanism::brownian(alpha, 2f64.sqrt()).unwrap()
    }

    fn opts(seed: u64) -> HeightOptions {
        HeightOptions {
            ds: 1e-4,
            level_bin: Some(0.01),
            horizon: 50.0,
            height_cap: Some(1.5),
            seed,
        }
    }

    #[test]
    fn zero_target_is_empty() {
        let p = simulate_height_path(&brownian(0.0), 0.0, &opts(1)).unwrap();
        assert_eq!(p.n_steps(), 0);
        assert_eq!(p.stop_reason, StopReason::ReachedTx);
        assert_eq!(p.heights, vec![0.0]);
    }

    #[test]
    fn path_invariants() {
        let p = simulate_height_path(&brownian(0.5), 1.0, &opts(3)).unwrap();
        assert_eq!(p.stop_reason, StopReason::ReachedTx);
        assert!(p.heights.iter().all(|&h| (0.0..=1.5 + 1e-12).contains(&h)));
        for n in 0..p.n_steps() {
            assert!(p.step_min[n] <= p.heights[n] && p.step_min[n] <= p.heights[n + 1]);
            assert!((p.heights[n + 1] - p.heights[n]).abs() < 12.0 * (p.ds).sqrt() * 2f64.sqrt());
        }
        // L⁰ only moves on steps whose minimum touches 0.
        for n in 0..p.n_steps() {
            if p.zero_local_time(n + 1) > p.zero_local_time(n) {
                assert_eq!(p.step_min[n], 0.0);
            }
        }
        assert!(p.zero_local_time(p.n_steps()) >= 1.0);
        // Occupation identity: Σ_j L^j ε_L = total time minus nothing (bins cover all heights > 0).
        let total: f64 = (1..p.local_time.n_levels()).map(|j| p.local_time.final_value(j)).sum::<f64>() * p.level_bin;
        assert!((total - p.ds * p.n_steps() as f64).abs() < 1e-6 * total.max(1.0));
        for j in 0..p.local_time.n_levels() {
            let pts: Vec<_> = p.local_time.level(j).unwrap().points().collect();
            assert!(pts.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].0 < w[1].0));
        }
    }

    #[test]
    fn horizon_truncates_and_extends() {
        let mut o = opts(4);
        o.horizon = 1e-2;
        let p = simulate_height_path(&brownian(0.0), 1.0, &o).unwrap();
        assert!(p.truncated());
        assert_eq!(p.n_steps(), 100);
        o.horizon = 1.0;
        let q = simulate_height_path_extending(&brownian(0.0), 0.2, &o).unwrap();
        assert!(!q.truncated());
        assert!(simulate_height_path_extending(&brownian(0.0), 1e6, &o).is_err());
    }

    #[test]
    fn rejects_jump_mechanisms() {
        use crate::mechanism::Jump;
        let m = BranchingMechanism::new(0.0, 1.0, vec![Jump { size: 1.0, rate: 1.0 }]).unwrap();
        assert!(simulate_height_path(&m, 1.0, &opts(0)).is_err());
        assert!(simulate_height_path(&BranchingMechanism::brownian(0.0, 0.0).unwrap(), 1.0, &opts(0)).is_err());
    }

    #[test]
    fn deterministic() {
        let a = simulate_height_path(&brownian(0.3), 0.5, &opts(11)).unwrap();
        let b = simulate_height_path(&brownian(0.3), 0.5, &opts(11)).unwrap();
        assert_eq!(a, b);
    }
}

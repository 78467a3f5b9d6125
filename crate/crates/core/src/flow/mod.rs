//! Euler schemes for flows of CSBPs driven by a shared [`NoiseField`].

mod grid;
mod lamperti;

pub use grid::{simulate_coupled, simulate_grid_flow, simulate_grid_flow_blocks, BlockRecord, CoupledFlow, GridFlow, ProjectionStats};
pub use lamperti::{simulate_lamperti, LampertiOptions, LampertiPath};

use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::mechanism::{BranchingMechanism, CompetitionMechanism};
use crate::noise::{NoiseField, StepNoise};

/// Z[time][level] on the grid start·dt, (start+1)·dt, …
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowPath {
    pub dt: f64,
    pub start_step: u64,
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl FlowPath {
    fn new(dt: f64, start_step: u64, levels: &[f64], initial: Vec<f64>) -> Self {
        FlowPath {
            dt,
            start_step,
            times: vec![start_step as f64 * dt],
            levels: levels.to_vec(),
            values: vec![initial],
        }
    }

    fn push(&mut self, step: u64, row: Vec<f64>) {
        self.times.push(step as f64 * self.dt);
        self.values.push(row);
    }

    pub fn terminal(&self) -> &[f64] {
        self.values.last().expect("flow path has at least its initial row")
    }

    /// Row closest to absolute time `t`.
    pub fn at_time(&self, t: f64) -> Option<&[f64]> {
        let idx = (t / self.dt).round() as i64 - self.start_step as i64;
        if idx < 0 {
            return None;
        }
        self.values.get(idx as usize).map(Vec::as_slice)
    }
}

/// Number of dt-steps in `t`, which must be a whole multiple of dt.
pub(crate) fn whole_steps(t: f64, dt: f64, what: &str) -> Result<u64> {
    let r = t / dt;
    if !(r >= 0.0) || (r - r.round()).abs() > 1e-6 * r.max(1.0) {
        return Err(config(format!("{what} = {t} is not a whole multiple of dt = {dt}")));
    }
    Ok(r.round() as u64)
}

pub(crate) fn check_levels(levels: &[f64], noise: &NoiseField) -> Result<()> {
    if levels.is_empty() {
        return Err(config("at least one level is required"));
    }
    for w in levels.windows(2) {
        if !(w[0] <= w[1]) {
            return Err(config("levels must be sorted"));
        }
    }
    if levels[0] < 0.0 {
        return Err(config("levels must be nonnegative"));
    }
    let top = *levels.last().unwrap();
    if top > noise.nu_max() {
        return Err(config(format!("level {top} exceeds the noise mass range {}", noise.nu_max())));
    }
    Ok(())
}

/// One Euler step shared by every flow simulator so that equal drifts give equal bits.
pub(crate) struct Stepper {
    alpha: f64,
    sigma: f64,
    compensator: f64,
    dt: f64,
    nu_max: f64,
    has_jumps: bool,
}

impl Stepper {
    pub(crate) fn new(mech: &BranchingMechanism, noise: &NoiseField) -> Self {
        Stepper {
            alpha: mech.alpha(),
            sigma: mech.sigma(),
            compensator: mech.jump_compensator(),
            dt: noise.dt(),
            nu_max: noise.nu_max(),
            has_jumps: !mech.jumps().is_empty(),
        }
    }

    /// z − (αz + extra)dt − z·Σwr·dt + σ∫₀ᶻW + Σ jumps with ν ≤ z, clipped at 0.
    pub(crate) fn advance(&self, z: f64, extra: f64, cell: &StepNoise<'_>, step: u64) -> Result<f64> {
        if z <= 0.0 {
            return Ok(0.0);
        }
        if self.has_jumps && z > self.nu_max {
            return Err(Error::Numerical {
                step: step as usize,
                msg: format!("mass {z} left the jump-noise range [0, {}]", self.nu_max),
            });
        }
        let mut next = z - (self.alpha * z + extra) * self.dt;
        if self.has_jumps {
            next += cell.jump_sum(z) - z * self.compensator * self.dt;
        }
        if self.sigma > 0.0 {
            next += self.sigma * cell.sheet_integral(z);
        }
        if !next.is_finite() {
            return Err(Error::Numerical {
                step: step as usize,
                msg: "non-finite flow value".into(),
            });
        }
        Ok(next.max(0.0))
    }
}

/// Running maximum: keeps a row nondecreasing in the level index.
pub(crate) fn monotone(row: &mut [f64]) -> usize {
    let mut bound = 0;
    for i in 1..row.len() {
        if row[i] < row[i - 1] {
            row[i] = row[i - 1];
            bound += 1;
        }
    }
    bound
}

fn run_flow(
    mech: &BranchingMechanism,
    comp: Option<&CompetitionMechanism>,
    levels: &[f64],
    initial: Vec<f64>,
    start_step: u64,
    noise: &NoiseField,
    t_end: f64,
) -> Result<FlowPath> {
    check_levels(levels, noise)?;
    let end = whole_steps(t_end, noise.dt(), "t_end")?;
    if end > noise.steps() as u64 {
        return Err(config(format!("t_end = {t_end} exceeds the noise horizon {}", noise.horizon_t())));
    }
    let stepper = Stepper::new(mech, noise);
    let mut path = FlowPath::new(noise.dt(), start_step, levels, initial);
    let mut row = path.terminal().to_vec();
    for k in start_step..end {
        let cell = noise.step(k);
        let mut next = Vec::with_capacity(row.len());
        for &z in &row {
            let extra = comp.map_or(0.0, |c| c.big_g_unchecked(z));
            next.push(stepper.advance(z, extra, &cell, k)?);
        }
        monotone(&mut next);
        path.push(k + 1, next.clone());
        row = next;
    }
    Ok(path)
}

/// Flow of ψ-CSBPs Y_t(v), one track per level.
pub fn simulate_csbp_flow(mech: &BranchingMechanism, levels: &[f64], noise: &NoiseField, t_end: f64) -> Result<FlowPath> {
    run_flow(mech, None, levels, levels.to_vec(), 0, noise, t_end)
}

/// Flow with competition: the CSBP drift plus −G(Z)dt.
pub fn simulate_competition_flow(
    mech: &BranchingMechanism,
    comp: &CompetitionMechanism,
    levels: &[f64],
    noise: &NoiseField,
    t_end: f64,
) -> Result<FlowPath> {
    run_flow(mech, Some(comp), levels, levels.to_vec(), 0, noise, t_end)
}

/// Continue a competition flow from `state` at time `start_step·dt` on the same noise.
pub fn restart_competition_flow(
    mech: &BranchingMechanism,
    comp: &CompetitionMechanism,
    levels: &[f64],
    state: &[f64],
    start_step: u64,
    noise: &NoiseField,
    t_end: f64,
) -> Result<FlowPath> {
    if state.len() != levels.len() {
        return Err(config("restart state must have one value per level"));
    }
    run_flow(mech, Some(comp), levels, state.to_vec(), start_step, noise, t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::Jump;
    use proptest::prelude::*;

    fn noise(seed: u64, jumps: &[Jump]) -> NoiseField {
        NoiseField::new(seed, 1e-3, 1e-3, 1.0, 8.0, jumps).unwrap()
    }

    #[test]
    fn zero_level_stays_zero() {
        let m = BranchingMechanism::brownian(0.0, 1.0).unwrap();
        let p = simulate_csbp_flow(&m, &[0.0, 1.0], &noise(1, &[]), 1.0).unwrap();
        assert!(p.values.iter().all(|r| r[0] == 0.0));
        assert_eq!(p.values.len(), 1001);
    }

    #[test]
    fn deterministic_decay() {
        let m = BranchingMechanism::brownian(1.0, 0.0).unwrap();
        let p = simulate_csbp_flow(&m, &[1.0], &noise(1, &[]), 1.0).unwrap();
        let z1 = p.terminal()[0];
        assert!((z1 - (-1f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn zero_competition_is_pathwise_identical() {
        let m = BranchingMechanism::new(0.3, 1.2, vec![Jump { size: 0.4, rate: 1.5 }]).unwrap();
        let n = noise(9, m.jumps());
        let a = simulate_csbp_flow(&m, &[0.5, 1.0, 2.0], &n, 1.0).unwrap();
        let b = simulate_competition_flow(&m, &CompetitionMechanism::constant(0.0).unwrap(), &[0.5, 1.0, 2.0], &n, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_competition_is_psi_theta() {
        // α = 0 makes the two drift expressions bit-identical.
        let m = BranchingMechanism::brownian(0.0, 1.0).unwrap();
        let n = noise(3, &[]);
        let a = simulate_competition_flow(&m, &CompetitionMechanism::constant(0.7).unwrap(), &[1.0, 2.0], &n, 1.0).unwrap();
        let b = simulate_csbp_flow(&m.psi_theta(0.7).unwrap(), &[1.0, 2.0], &n, 1.0).unwrap();
        assert_eq!(a, b);
        // With α > 0 the drifts are rounded differently, so compare closely.
        let m = BranchingMechanism::brownian(0.5, 1.0).unwrap();
        let a = simulate_competition_flow(&m, &CompetitionMechanism::constant(0.7).unwrap(), &[1.0, 2.0], &n, 1.0).unwrap();
        let b = simulate_csbp_flow(&m.psi_theta(0.7).unwrap(), &[1.0, 2.0], &n, 1.0).unwrap();
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn config_errors() {
        let m = BranchingMechanism::brownian(0.0, 1.0).unwrap();
        let n = noise(1, &[]);
        assert!(matches!(simulate_csbp_flow(&m, &[9.0], &n, 1.0), Err(Error::Config(_))));
        assert!(matches!(simulate_csbp_flow(&m, &[1.0], &n, 2.0), Err(Error::Config(_))));
        assert!(matches!(simulate_csbp_flow(&m, &[2.0, 1.0], &n, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn restart_reproduces_tail() {
        let m = BranchingMechanism::new(0.2, 1.0, vec![Jump { size: 0.3, rate: 1.0 }]).unwrap();
        let c = CompetitionMechanism::new(vec![(0.0, 0.1), (1.0, 1.0), (2.0, 1.5)]).unwrap();
        let n = noise(21, m.jumps());
        let levels = [0.4, 1.3];
        let full = simulate_competition_flow(&m, &c, &levels, &n, 1.0).unwrap();
        let s = 400;
        let tail = restart_competition_flow(&m, &c, &levels, &full.values[s], s as u64, &n, 1.0).unwrap();
        assert_eq!(&full.values[s..], &tail.values[..]);
        assert_eq!(&full.times[s..], &tail.times[..]);
        // Single level restarted from its own value.
        let single = simulate_competition_flow(&m, &c, &[1.3], &n, 1.0).unwrap();
        let tail = restart_competition_flow(&m, &c, &[1.3], &single.values[s], s as u64, &n, 1.0).unwrap();
        assert_eq!(&single.values[s..], &tail.values[..]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rows_are_monotone_and_absorbing(seed in any::<u64>(), a in 0.0..1.0f64, s in 0.2..2.0f64,
                                           l0 in 0.0..1.0f64, dl in 0.0..1.0f64, slope in 0.0..3.0f64) {
            let m = BranchingMechanism::new(a, s, vec![Jump { size: 0.5, rate: 1.0 }]).unwrap();
            let c = CompetitionMechanism::linear(slope).unwrap();
            let n = noise(seed, m.jumps());
            let p = simulate_competition_flow(&m, &c, &[l0, l0 + dl, l0 + 2.0 * dl], &n, 0.5).unwrap();
            for (t, row) in p.values.iter().enumerate() {
                prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                if t > 0 {
                    for (i, &v) in row.iter().enumerate() {
                        if p.values[t - 1][i] == 0.0 { prop_assert_eq!(v, 0.0); }
                    }
                }
            }
            let again = simulate_competition_flow(&m, &c, &[l0, l0 + dl, l0 + 2.0 * dl], &n, 0.5).unwrap();
            prop_assert_eq!(p, again);
        }
    }
}

//! Lamperti representation: run dU = dX − G(U)/U dt on an internal clock and read
//! V_t = U_{C_t}, where C is the inverse of η_s = ∫₀ˢ dr/U_r.
//!
//! The internal step shrinks to dt·U below U = 1, so one step never costs more
//! than about dt of external time. With a fixed step a path hovering just above 0
//! burns dt/U of external time per step and absorption comes far too late.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;

use crate::error::{config, domain, Error, Result};
use crate::mechanism::{BranchingMechanism, CompetitionMechanism};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LampertiOptions {
    /// Largest internal step; the step used at U < 1 is dt_internal·U.
    pub dt_internal: f64,
    /// Spacing of the external output grid.
    pub dt_out: f64,
    /// U at or below this counts as having hit 0.
    pub zero_tol: f64,
    pub max_internal_steps: usize,
    pub seed: u64,
}

impl LampertiOptions {
    pub fn new(dt_internal: f64, seed: u64) -> Self {
        LampertiOptions {
            dt_internal,
            dt_out: dt_internal,
            zero_tol: 1e-9,
            max_internal_steps: 50_000_000,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LampertiPath {
    pub dt_internal: f64,
    /// Internal times of the steps.
    pub internal_times: Vec<f64>,
    /// U at `internal_times`.
    pub ou_path: Vec<f64>,
    /// η at the same internal times.
    pub clock: Vec<f64>,
    pub dt_out: f64,
    /// V on the external grid 0, dt_out, …
    pub output: Vec<f64>,
    /// η at the hitting time of 0, or +∞.
    pub absorption_time: f64,
}

impl LampertiPath {
    pub fn terminal(&self) -> f64 {
        *self.output.last().expect("output has its initial value")
    }
}

/// ∫ dr/U over one step when U is linear from u to v (both > 0), per unit time.
fn inverse_log_mean(u: f64, v: f64) -> f64 {
    if (u - v).abs() <= 1e-12 * u {
        2.0 / (u + v)
    } else {
        (u.ln() - v.ln()) / (u - v)
    }
}

pub fn simulate_lamperti(
    mech: &BranchingMechanism,
    comp: &CompetitionMechanism,
    x: f64,
    opts: &LampertiOptions,
    t_end: f64,
) -> Result<LampertiPath> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(domain(format!("Lamperti start needs x > 0, got {x}")));
    }
    if !(opts.dt_internal > 0.0 && opts.dt_out > 0.0 && t_end >= 0.0) {
        return Err(config("Lamperti needs positive steps and t_end >= 0"));
    }
    let dt = opts.dt_internal;
    let sigma = mech.sigma();
    let compensated = mech.alpha() + mech.jump_compensator();
    for j in mech.jumps() {
        Poisson::new(j.rate * dt).map_err(|e| config(format!("jump rate: {e}")))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut u = x;
    let mut eta = 0.0;
    let mut s_int = 0.0;
    let mut internal_times = vec![0.0];
    let mut ou_path = vec![x];
    let mut clock = vec![0.0];
    let mut absorption_time = f64::INFINITY;
    let mut step = 0usize;
    while eta < t_end {
        if step >= opts.max_internal_steps {
            return Err(Error::Truncated(format!(
                "internal clock reached {step} steps with eta = {eta} < t_end = {t_end}"
            )));
        }
        let h = dt * u.min(1.0);
        let mut next = u - (compensated + comp.big_g_unchecked(u) / u) * h;
        if sigma > 0.0 {
            next += sigma * h.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        for j in mech.jumps() {
            let rate = j.rate * h;
            if rate > 0.0 {
                let n: f64 = Poisson::new(rate).map_err(|e| config(format!("jump rate: {e}")))?.sample(&mut rng);
                next += j.size * n;
            }
        }
        if !next.is_finite() {
            return Err(Error::Numerical {
                step,
                msg: "non-finite internal value".into(),
            });
        }
        step += 1;
        s_int += h;
        internal_times.push(s_int);
        if next <= opts.zero_tol {
            // Close the clock with a square-root approach to 0 over the crossing fraction.
            let frac = (u / (u - next)).min(1.0);
            eta += 2.0 * frac * h / u;
            ou_path.push(0.0);
            clock.push(eta);
            absorption_time = eta;
            break;
        }
        eta += h * inverse_log_mean(u, next);
        ou_path.push(next);
        clock.push(eta);
        u = next;
    }

    let n_out = (t_end / opts.dt_out).round() as usize;
    let mut output = Vec::with_capacity(n_out + 1);
    let mut i = 0usize;
    for j in 0..=n_out {
        let t = j as f64 * opts.dt_out;
        if t >= absorption_time {
            output.push(0.0);
            continue;
        }
        while i + 1 < clock.len() && clock[i + 1] <= t {
            i += 1;
        }
        let v = if i + 1 < clock.len() {
            let w = (t - clock[i]) / (clock[i + 1] - clock[i]);
            ou_path[i] + w * (ou_path[i + 1] - ou_path[i])
        } else {
            ou_path[i]
        };
        output.push(v.max(0.0));
    }
    Ok(LampertiPath {
        dt_internal: dt,
        internal_times,
        ou_path,
        clock,
        dt_out: opts.dt_out,
        output,
        absorption_time,
    })
}

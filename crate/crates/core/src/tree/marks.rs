//! Poisson snake of marks on the current lineage [0, H_s).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::HeightPath;
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkAtom {
    /// First step at which the atom is on the lineage.
    pub birth_step: usize,
    pub height: f64,
    pub nu: f64,
    /// First step at which the atom is gone; `None` if alive at the end.
    pub death_step: Option<usize>,
}

impl MarkAtom {
    pub fn alive_at(&self, step: usize) -> bool {
        self.birth_step <= step && self.death_step.is_none_or(|d| step < d)
    }
}

/// Atoms ordered by (birth_step, height), generated with intensity dh ⊗ dν on [0, nu_cap].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkSet {
    pub nu_cap: f64,
    pub atoms: Vec<MarkAtom>,
}

impl MarkSet {
    pub fn empty() -> Self {
        MarkSet {
            nu_cap: 0.0,
            atoms: Vec::new(),
        }
    }

    pub fn alive_at(&self, step: usize) -> impl Iterator<Item = &MarkAtom> + '_ {
        self.atoms.iter().filter(move |a| a.alive_at(step))
    }
}

/// Walk the path once, spawning Poisson(nu_cap·dh) atoms on every newly explored
/// segment (step minimum, H_{n+1}] and killing atoms the path descends below.
pub fn generate_snake_marks(path: &HeightPath, nu_cap: f64, seed: u64) -> Result<MarkSet> {
    if !(nu_cap >= 0.0 && nu_cap.is_finite()) {
        return Err(domain(format!("nu_cap must be >= 0, got {nu_cap}")));
    }
    let mut atoms: Vec<MarkAtom> = Vec::new();
    if nu_cap == 0.0 {
        return Ok(MarkSet { nu_cap, atoms });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stack: Vec<usize> = Vec::new();
    let mut fresh: Vec<(f64, f64)> = Vec::new();
    for n in 0..path.n_steps() {
        let low = path.step_min[n];
        while let Some(&top) = stack.last() {
            if atoms[top].height >= low {
                atoms[top].death_step = Some(n + 1);
                stack.pop();
            } else {
                break;
            }
        }
        let rise = path.heights[n + 1] - low;
        if rise <= 0.0 {
            continue;
        }
        let count = Poisson::new(nu_cap * rise)
            .map(|p| p.sample(&mut rng) as usize)
            .map_err(|e| domain(format!("mark intensity: {e}")))?;
        if count == 0 {
            continue;
        }
        fresh.clear();
        for _ in 0..count {
            let h = low + rise * (1.0 - rng.random::<f64>());
            let nu = nu_cap * rng.random::<f64>();
            fresh.push((h, nu));
        }
        fresh.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(height, nu) in &fresh {
            stack.push(atoms.len());
            atoms.push(MarkAtom {
                birth_step: n + 1,
                height,
                nu,
                death_step: None,
            });
        }
    }
    Ok(MarkSet { nu_cap, atoms })
}

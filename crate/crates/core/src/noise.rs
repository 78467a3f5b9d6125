//! Shared driving noise: a Gaussian white-noise sheet on (time cell, mass cell) and
//! Poisson jump atoms, both regenerated on demand from counters.
//!
//! Sheet cells are grouped in blocks of `2^DEPTH` mass cells. A block total is drawn
//! first and split down a dyadic Brownian-bridge tree, so any prefix sum ∫₀ᶻ W over a
//! time cell costs O(DEPTH) normal draws and every draw is a pure function of its
//! position in the tree.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson, StandardNormal};
use rand_xoshiro::SplitMix64;

use crate::error::{config, Result};
use crate::mechanism::Jump;

const DEPTH: u32 = 10;
const BLOCK: u64 = 1 << DEPTH;

const TAG_SHEET: u64 = 0x5348_4545_5400_0001;
const TAG_JUMPS: u64 = 0x4a55_4d50_5300_0002;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash an ordered list of words into one seed.
pub fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x243f_6a88_85a3_08d3, |h, &w| mix64(h ^ mix64(w)))
}

fn normal_at(words: &[u64]) -> f64 {
    let mut rng = SplitMix64::seed_from_u64(hash_words(words));
    rng.sample(StandardNormal)
}

/// One atom of the jump noise inside a time cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAtom {
    /// Absolute time of the atom.
    pub time: f64,
    /// Mass coordinate ν; the atom hits every track with Z_{s−} ≥ ν.
    pub nu: f64,
    pub size: f64,
}

/// White-noise sheet plus jump atoms shared by every simulator that reads it.
#[derive(Debug, Clone)]
pub struct NoiseField {
    dt: f64,
    du: f64,
    horizon_t: f64,
    seed: u64,
    nu_max: f64,
    jumps: Vec<Jump>,
}

impl NoiseField {
    pub fn new(seed: u64, dt: f64, du: f64, horizon_t: f64, nu_max: f64, jumps: &[Jump]) -> Result<Self> {
        if !(dt > 0.0 && du > 0.0 && dt.is_finite() && du.is_finite()) {
            return Err(config(format!("noise needs dt, du > 0, got dt={dt}, du={du}")));
        }
        if !(horizon_t >= 0.0 && nu_max > 0.0) {
            return Err(config("noise needs horizon >= 0 and nu_max > 0"));
        }
        Ok(NoiseField {
            dt,
            du,
            horizon_t,
            seed,
            nu_max,
            jumps: jumps.to_vec(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn du(&self) -> f64 {
        self.du
    }

    pub fn horizon_t(&self) -> f64 {
        self.horizon_t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nu_max(&self) -> f64 {
        self.nu_max
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// Number of whole time cells covering [0, horizon].
    pub fn steps(&self) -> usize {
        (self.horizon_t / self.dt).round() as usize
    }

    /// Sheet value of a single cell, N(0, dt·du).
    pub fn cell(&self, k: u64, j: u64) -> f64 {
        self.sheet_prefix(k, j).1
    }

    /// (Σ_{i<j} W(k, i), W(k, j)).
    fn sheet_prefix(&self, k: u64, j: u64) -> (f64, f64) {
        let block = j / BLOCK;
        let mut acc: f64 = (0..block).map(|b| self.block_total(k, b)).sum();
        let (within, leaf) = self.descend(k, block, j % BLOCK);
        acc += within;
        (acc, leaf)
    }

    fn block_total(&self, k: u64, b: u64) -> f64 {
        (BLOCK as f64 * self.dt * self.du).sqrt() * normal_at(&[self.seed, TAG_SHEET, k, b, 1])
    }

    fn descend(&self, k: u64, b: u64, leaf: u64) -> (f64, f64) {
        let var = self.dt * self.du;
        let mut total = self.block_total(k, b);
        let mut node = 1u64;
        let mut lo = 0u64;
        let mut n = BLOCK;
        let mut prefix = 0.0;
        while n > 1 {
            let half = n / 2;
            let left = 0.5 * total
                + (n as f64 * var / 4.0).sqrt() * normal_at(&[self.seed, TAG_SHEET, k, b, 2 * node]);
            if leaf < lo + half {
                total = left;
                node *= 2;
            } else {
                prefix += left;
                total -= left;
                node = 2 * node + 1;
                lo += half;
            }
            n = half;
        }
        (prefix, total)
    }

    /// Read-only view of time cell `k`, with its jump atoms materialised.
    pub fn step(&self, k: u64) -> StepNoise<'_> {
        let mut atoms = Vec::new();
        for (i, jump) in self.jumps.iter().enumerate() {
            let mut rng = SplitMix64::seed_from_u64(hash_words(&[self.seed, TAG_JUMPS, k, i as u64]));
            let mean = jump.rate * self.dt * self.nu_max;
            let count = if mean > 0.0 {
                Poisson::new(mean).map(|p| p.sample(&mut rng) as usize).unwrap_or(0)
            } else {
                0
            };
            for _ in 0..count {
                let time = (k as f64 + rng.random::<f64>()) * self.dt;
                let nu = rng.random::<f64>() * self.nu_max;
                atoms.push(JumpAtom { time, nu, size: jump.size });
            }
        }
        atoms.sort_by(|a, b| a.nu.total_cmp(&b.nu));
        StepNoise { field: self, k, atoms }
    }
}

/// Noise restricted to one time cell.
#[derive(Debug, Clone)]
pub struct StepNoise<'a> {
    field: &'a NoiseField,
    k: u64,
    atoms: Vec<JumpAtom>,
}

impl StepNoise<'_> {
    pub fn atoms(&self) -> &[JumpAtom] {
        &self.atoms
    }

    /// ∫₀ᶻ W(k, du) with the partial last cell scaled by √fraction.
    pub fn sheet_integral(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        let pos = z / self.field.du;
        let j = pos.floor();
        let frac = pos - j;
        let (prefix, leaf) = self.field.sheet_prefix(self.k, j as u64);
        if frac > 0.0 {
            prefix + frac.sqrt() * leaf
        } else {
            prefix
        }
    }

    /// Σ sizes of atoms with ν ≤ z.
    pub fn jump_sum(&self, z: f64) -> f64 {
        self.atoms.iter().take_while(|a| a.nu <= z).map(|a| a.size).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sheet() -> NoiseField {
        NoiseField::new(7, 1e-3, 1e-3, 1.0, 4.0, &[Jump { size: 0.5, rate: 2.0 }]).unwrap()
    }

    #[test]
    fn regeneration_is_bit_exact() {
        let a = sheet();
        let b = sheet();
        for k in [0u64, 3, 999] {
            for j in [0u64, 1, 1023, 1024, 5000] {
                assert_eq!(a.cell(k, j).to_bits(), b.cell(k, j).to_bits());
            }
            assert_eq!(a.step(k).atoms(), b.step(k).atoms());
        }
    }

    #[test]
    fn prefix_matches_sum_of_cells() {
        let n = sheet();
        let s = n.step(4);
        let z = 1500.0 * n.du();
        let direct: f64 = (0..1500).map(|j| n.cell(4, j)).sum();
        assert!((s.sheet_integral(z) - direct).abs() < 1e-12);
        assert_eq!(s.sheet_integral(0.0), 0.0);
    }

    #[test]
    fn cells_have_the_right_variance() {
        let n = sheet();
        let v = n.dt() * n.du();
        let xs: Vec<f64> = (0..20_000u64).map(|i| n.cell(i / 3000, i % 3000) / v.sqrt()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(mean.abs() < 4.0 / (xs.len() as f64).sqrt());
        assert!((var - 1.0).abs() < 0.05);
        // Adjacent cells are uncorrelated.
        let corr: f64 = xs.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(corr.abs() < 4.0 / (xs.len() as f64).sqrt());
    }

    #[test]
    fn integral_variance_is_z_dt() {
        let n = sheet();
        let z = 2.3;
        let xs: Vec<f64> = (0..4000).map(|k| n.step(k).sheet_integral(z)).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let expected = z * n.dt();
        assert!((var / expected - 1.0).abs() < 0.1, "var ratio {}", var / expected);
    }

    #[test]
    fn jump_counts_are_poisson() {
        let n = sheet();
        let total: usize = (0..1000).map(|k| n.step(k).atoms().len()).sum();
        // rate 2 per unit area over [0,1] × [0,4]
        let mean = 8.0;
        assert!((total as f64 - mean).abs() < 4.0 * mean.sqrt() + 1.0);
        let s = n.step(17);
        for a in s.atoms() {
            assert!(a.time >= 17.0 * n.dt() && a.time < 18.0 * n.dt());
        }
        assert_eq!(s.jump_sum(-1.0), 0.0);
    }
}

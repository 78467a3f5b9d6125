//! Level-binned local-time fields stored sparsely per level.

use serde::Serialize;

use crate::error::{domain, Result};

/// Cumulative local time of one level, recorded at the steps where it changed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LevelSeries {
    steps: Vec<u32>,
    values: Vec<f64>,
}

impl LevelSeries {
    /// Value after `step` exploration steps.
    pub fn value_at(&self, step: usize) -> f64 {
        let i = self.steps.partition_point(|&s| s as usize <= step);
        if i == 0 {
            0.0
        } else {
            self.values[i - 1]
        }
    }

    pub fn last(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// (step, cumulative value) pairs in increasing step order.
    pub fn points(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.steps.iter().map(|&s| s as usize).zip(self.values.iter().copied())
    }

    /// First step at which the value exceeds `x`.
    pub fn first_above(&self, x: f64) -> Option<usize> {
        let i = self.values.partition_point(|&v| v <= x);
        self.steps.get(i).map(|&s| s as usize)
    }

    /// First step at which the value reaches `x`.
    pub fn first_reaching(&self, x: f64) -> Option<usize> {
        let i = self.values.partition_point(|&v| v < x);
        self.steps.get(i).map(|&s| s as usize)
    }

    fn record(&mut self, step: usize, value: f64) {
        match self.steps.last() {
            Some(&s) if s as usize == step => *self.values.last_mut().unwrap() = value,
            _ => {
                self.steps.push(step as u32);
                self.values.push(value);
            }
        }
    }
}

/// L[level][step]: level j ≥ 1 is the occupation of ((j−1)ε_L, jε_L] divided by ε_L,
/// level 0 is the exact local time at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTimeField {
    pub level_bin: f64,
    pub n_steps: usize,
    levels: Vec<LevelSeries>,
}

impl LocalTimeField {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, j: usize) -> Option<&LevelSeries> {
        self.levels.get(j)
    }

    pub fn value(&self, j: usize, step: usize) -> f64 {
        self.levels.get(j).map_or(0.0, |l| l.value_at(step))
    }

    pub fn final_value(&self, j: usize) -> f64 {
        self.levels.get(j).map_or(0.0, LevelSeries::last)
    }

    /// Level index of height `a`, which must lie on the bin grid.
    pub fn level_index(&self, a: f64) -> Result<usize> {
        level_index(a, self.level_bin)
    }

    pub fn height_of(&self, j: usize) -> f64 {
        j as f64 * self.level_bin
    }

    /// Values of every level after `step`.
    pub fn column(&self, step: usize) -> Vec<f64> {
        self.levels.iter().map(|l| l.value_at(step)).collect()
    }

    pub fn max_value(&self) -> f64 {
        self.levels.iter().map(LevelSeries::last).fold(0.0, f64::max)
    }

    /// Componentwise a ≤ b at every recorded step of either field.
    pub fn dominated_by(&self, other: &LocalTimeField) -> bool {
        let n = self.levels.len().max(other.levels.len());
        let empty = LevelSeries::default();
        (0..n).all(|j| {
            let a = self.levels.get(j).unwrap_or(&empty);
            let b = other.levels.get(j).unwrap_or(&empty);
            merged_steps(a, b).all(|s| a.value_at(s) <= b.value_at(s))
        })
    }

    /// sup over levels and steps of |f(self) − f(other)|.
    pub fn sup_distance(&self, other: &LocalTimeField, f: impl Fn(f64) -> f64) -> f64 {
        let n = self.levels.len().max(other.levels.len());
        let mut sup: f64 = 0.0;
        let empty = LevelSeries::default();
        for j in 0..n {
            let a = self.levels.get(j).unwrap_or(&empty);
            let b = other.levels.get(j).unwrap_or(&empty);
            for s in merged_steps(a, b) {
                sup = sup.max((f(a.value_at(s)) - f(b.value_at(s))).abs());
            }
        }
        sup
    }
}

fn merged_steps<'a>(a: &'a LevelSeries, b: &'a LevelSeries) -> impl Iterator<Item = usize> + 'a {
    let mut all: Vec<usize> = a.steps.iter().chain(&b.steps).map(|&s| s as usize).collect();
    all.sort_unstable();
    all.dedup();
    all.into_iter()
}

pub(crate) fn level_index(a: f64, bin: f64) -> Result<usize> {
    let r = a / bin;
    if !(r >= 0.0) || (r - r.round()).abs() > 1e-6 {
        return Err(domain(format!("height {a} is not on the level grid of width {bin}")));
    }
    Ok(r.round() as usize)
}

/// Accumulates a field step by step.
#[derive(Debug, Clone)]
pub(crate) struct FieldBuilder {
    pub(crate) bin: f64,
    pub(crate) current: Vec<f64>,
    levels: Vec<LevelSeries>,
}

impl FieldBuilder {
    pub(crate) fn new(bin: f64) -> Self {
        FieldBuilder {
            bin,
            current: vec![0.0],
            levels: vec![LevelSeries::default()],
        }
    }

    pub(crate) fn add(&mut self, j: usize, amount: f64, step: usize) {
        if amount <= 0.0 {
            return;
        }
        if j >= self.current.len() {
            self.current.resize(j + 1, 0.0);
            self.levels.resize(j + 1, LevelSeries::default());
        }
        self.current[j] += amount;
        self.levels[j].record(step, self.current[j]);
    }

    /// Overwrite level 0 with an exactly known cumulative value.
    pub(crate) fn set_zero(&mut self, value: f64, step: usize) {
        if value != self.current[0] {
            self.current[0] = value;
            self.levels[0].record(step, value);
        }
    }

    pub(crate) fn get(&self, j: usize) -> f64 {
        self.current.get(j).copied().unwrap_or(0.0)
    }

    /// Occupation of the heights [lo, min(hi, cap)] at time density `rho`, binned.
    /// `on_bin` runs before each bin j is filled and may lower `cap`.
    pub(crate) fn deposit_with(
        &mut self,
        lo: f64,
        hi: f64,
        rho: f64,
        step: usize,
        mut cap: f64,
        mut on_bin: impl FnMut(&mut Self, usize, &mut f64),
    ) {
        let bin = self.bin;
        let first = (lo / bin).floor() as usize + 1;
        let last = ((hi / bin).ceil() as usize).max(first);
        for j in first..=last {
            on_bin(self, j, &mut cap);
            let top = j as f64 * bin;
            let upper = hi.min(cap).min(top);
            let lower = lo.max((j - 1) as f64 * bin);
            let overlap = upper - lower;
            if overlap > 0.0 {
                self.add(j, rho * overlap / bin, step);
            }
        }
    }

    pub(crate) fn finish(self, n_steps: usize) -> LocalTimeField {
        LocalTimeField {
            level_bin: self.bin,
            n_steps,
            levels: self.levels,
        }
    }
}

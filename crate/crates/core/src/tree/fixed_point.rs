//! Picard iteration ϑ⁰ ≡ 0, ϑⁿ⁺¹ = g(L(m^{ϑⁿ})) on a fixed path and mark set.

use serde::Serialize;

use super::field::LocalTimeField;
use super::marks::MarkSet;
use super::field::FieldBuilder;
use super::prune::{mark_level, run_pass, IntensityField, Rule};
use super::HeightPath;
use crate::error::{config, Result};
use crate::mechanism::CompetitionMechanism;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Keep every iterate's local times and mark thresholds.
    pub keep_iterates: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            max_iter: 200,
            tol: 1e-6,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    /// L(m*), the pruned local times of the last iterate.
    pub field: LocalTimeField,
    /// ϑ* = g(L(m*)).
    pub intensity: IntensityField,
    /// gaps[n] = sup over the grid of |ϑⁿ⁺¹ − ϑⁿ|.
    pub gaps: Vec<f64>,
    /// n such that L(m^{ϑⁿ}) is returned.
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// L(m^{ϑⁿ}) for n = 0, 1, … when requested.
    pub iterates: Vec<LocalTimeField>,
    /// ϑⁿ at every atom for n = 0, 1, … when requested.
    pub thresholds: Vec<Vec<f64>>,
}

/// Mark cap for fixed-point pruning: g(1.05 · largest unpruned local time).
pub fn fixed_point_nu_cap(path: &HeightPath, comp: &CompetitionMechanism) -> f64 {
    comp.g_unchecked(1.05 * path.local_time.max_value())
}

struct Zero;

impl Rule for Zero {
    fn threshold(&mut self, _birth_step: usize, _height: f64, _field: &FieldBuilder) -> f64 {
        0.0
    }
}

pub fn prune_fixed_point(
    path: &HeightPath,
    marks: &MarkSet,
    comp: &CompetitionMechanism,
    opts: &FixedPointOptions,
) -> Result<FixedPoint> {
    let need = comp.g_unchecked(path.local_time.max_value());
    if need > marks.nu_cap && !marks.atoms.is_empty() {
        return Err(config(format!(
            "mark cap {} is below g(max unpruned local time) = {need}",
            marks.nu_cap
        )));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(config("fixed point needs tol > 0 and max_iter >= 1"));
    }
    let g = |v: f64| comp.g_unchecked(v);
    let first = run_pass(path, marks, &mut Zero);
    let mut iterates = Vec::new();
    let mut thresholds = Vec::new();
    if opts.keep_iterates {
        iterates.push(first.field.clone());
        thresholds.push(first.thresholds.clone());
    }
    // gap₀ = sup g(L(m⁰)) since ϑ⁰ ≡ 0.
    let mut gaps = vec![sup_g(&first.field, &g)];
    let mut older: Option<LocalTimeField> = None;
    let mut current = first.field;
    let mut n = 0usize;
    let mut converged = gaps[0] < opts.tol;
    while !converged && n < opts.max_iter {
        let pass = run_pass(path, marks, &mut cached(comp, &current));
        n += 1;
        let gap = pass.field.sup_distance(&current, g);
        if opts.keep_iterates {
            iterates.push(pass.field.clone());
            thresholds.push(pass.thresholds.clone());
        }
        gaps.push(gap);
        let cycling = older.as_ref().is_some_and(|o| *o == pass.field);
        older = Some(std::mem::replace(&mut current, pass.field));
        converged = gap < opts.tol;
        if cycling && !converged {
            break;
        }
    }
    let residual = *gaps.last().unwrap();
    Ok(FixedPoint {
        intensity: IntensityField::LocalTime {
            competition: comp.clone(),
            field: current.clone(),
        },
        field: current,
        gaps,
        iterations: n,
        converged,
        residual,
        iterates,
        thresholds,
    })
}

fn sup_g(f: &LocalTimeField, g: &impl Fn(f64) -> f64) -> f64 {
    (0..f.n_levels())
        .flat_map(|j| f.level(j).into_iter().flat_map(|l| l.points().map(|(_, v)| v)))
        .map(g)
        .fold(g(0.0), f64::max)
}

/// Threshold rule reading g(L^h_s) from the previous iterate without cloning it per atom.
struct Cached<'a> {
    comp: &'a CompetitionMechanism,
    field: &'a LocalTimeField,
}

fn cached<'a>(comp: &'a CompetitionMechanism, field: &'a LocalTimeField) -> Cached<'a> {
    Cached { comp, field }
}

impl Rule for Cached<'_> {
    fn threshold(&mut self, birth_step: usize, height: f64, _field: &FieldBuilder) -> f64 {
        let j = mark_level(height, self.field.level_bin);
        self.comp.g_unchecked(self.field.value(j, birth_step))
    }
}

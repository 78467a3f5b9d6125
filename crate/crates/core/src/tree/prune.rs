//! Pruned local times for constant, grid and prescribed intensities.
//!
//! Each exploration step is replaced by the piecewise-linear path H_n → min → H_{n+1},
//! with the step's time split in proportion to the two lengths. Occupation of the
//! descending piece counts up to the lowest active mark alive before the step; the
//! ascending piece is filled bin by bin from the bottom, switching on the new marks as
//! it passes them, so a mark's activation can read the finished value of the bin
//! right below it. That bin is frozen for as long as the mark lives.

use serde::Serialize;

use super::field::{level_index, FieldBuilder, LocalTimeField};
use super::marks::MarkSet;
use super::HeightPath;
use crate::error::{config, Result};
use crate::mechanism::CompetitionMechanism;

/// Blockwise-constant intensity realised by grid pruning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridIntensity {
    pub eps: f64,
    pub delta: f64,
    /// thresholds[k][n−1] = first step at which band k's base local time reached nδ.
    pub thresholds: Vec<Vec<usize>>,
    /// rates[k][n] = rate in block n of band k.
    pub rates: Vec<Vec<f64>>,
}

impl GridIntensity {
    fn band(&self, height: f64) -> usize {
        ((height / self.eps).ceil() as usize).saturating_sub(1)
    }

    pub fn rate(&self, step: usize, height: f64) -> f64 {
        let k = self.band(height);
        let (Some(th), Some(rates)) = (self.thresholds.get(k), self.rates.get(k)) else {
            return self.rates.first().and_then(|r| r.first()).copied().unwrap_or(0.0);
        };
        let n = th.partition_point(|&s| s <= step);
        rates[n.min(rates.len() - 1)]
    }
}

/// ϑ(s, h) for the pruning rules.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum IntensityField {
    Constant(f64),
    Grid(GridIntensity),
    /// ϑ(s, h) = g(L^h_s) for a given local-time field.
    LocalTime {
        competition: CompetitionMechanism,
        field: LocalTimeField,
    },
}

impl IntensityField {
    pub fn rate(&self, step: usize, height: f64) -> f64 {
        match self {
            IntensityField::Constant(t) => *t,
            IntensityField::Grid(g) => g.rate(step, height),
            IntensityField::LocalTime { competition, field } => {
                competition.g_unchecked(field.value(mark_level(height, field.level_bin), step))
            }
        }
    }

    /// A copy with every rate multiplied by `factor`; the grid's thresholds stay put.
    pub fn scaled(&self, factor: f64) -> IntensityField {
        match self {
            IntensityField::Constant(t) => IntensityField::Constant(t * factor),
            IntensityField::Grid(g) => IntensityField::Grid(GridIntensity {
                rates: g.rates.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect(),
                ..g.clone()
            }),
            IntensityField::LocalTime { competition, field } => {
                let knots = competition.knots().iter().map(|&(x, y)| (x, y * factor)).collect();
                IntensityField::LocalTime {
                    competition: CompetitionMechanism::new(knots).expect("scaled knots stay valid"),
                    field: field.clone(),
                }
            }
        }
    }
}

/// The level whose bin lies entirely below `height`.
pub(crate) fn mark_level(height: f64, bin: f64) -> usize {
    ((height / bin).ceil() as usize).saturating_sub(1)
}

/// Decides each new mark's activation threshold when the ascending fill reaches it.
pub(crate) trait Rule {
    fn threshold(&mut self, birth_step: usize, height: f64, field: &FieldBuilder) -> f64;
    fn end_step(&mut self, _step: usize, _field: &FieldBuilder) {}
}

struct Fixed<'a>(&'a IntensityField);

impl Rule for Fixed<'_> {
    fn threshold(&mut self, birth_step: usize, height: f64, _field: &FieldBuilder) -> f64 {
        self.0.rate(birth_step, height)
    }
}

struct AdaptiveGrid<'a> {
    comp: &'a CompetitionMechanism,
    delta: f64,
    eps: f64,
    ratio: usize,
    thresholds: Vec<Vec<usize>>,
}

impl AdaptiveGrid<'_> {
    fn block(&self, field: &FieldBuilder, band: usize) -> usize {
        (field.get(band * self.ratio) / self.delta).floor() as usize
    }
}

impl Rule for AdaptiveGrid<'_> {
    fn threshold(&mut self, _birth_step: usize, height: f64, field: &FieldBuilder) -> f64 {
        let band = ((height / self.eps).ceil() as usize).saturating_sub(1);
        let n = self.block(field, band);
        self.comp.g_unchecked(n as f64 * self.delta)
    }

    fn end_step(&mut self, step: usize, field: &FieldBuilder) {
        let bands = field.current.len().div_ceil(self.ratio).max(1);
        if self.thresholds.len() < bands {
            self.thresholds.resize(bands, Vec::new());
        }
        for band in 0..bands {
            let n = self.block(field, band);
            while self.thresholds[band].len() < n {
                self.thresholds[band].push(step);
            }
        }
    }
}

struct Entry {
    height: f64,
    lowest_active: f64,
}

/// Output of one pruning pass.
pub(crate) struct Pass {
    pub(crate) field: LocalTimeField,
    /// Threshold used for every atom, in atom order.
    pub(crate) thresholds: Vec<f64>,
}

pub(crate) fn run_pass(path: &HeightPath, marks: &MarkSet, rule: &mut dyn Rule) -> Pass {
    let bin = path.level_bin;
    let mut b = FieldBuilder::new(bin);
    let mut stack: Vec<Entry> = Vec::new();
    let mut thresholds = vec![0.0; marks.atoms.len()];
    let mut next_atom = 0usize;
    let zero = path.local_time.level(0);
    for n in 0..path.n_steps() {
        let step = n + 1;
        let (h0, lo, h1) = (path.heights[n], path.step_min[n], path.heights[step]);
        let (d1, d2) = (h0 - lo, h1 - lo);
        let lowest = |s: &Vec<Entry>| s.last().map_or(f64::INFINITY, |e| e.lowest_active);
        if d1 + d2 > 0.0 {
            let t1 = path.ds * d1 / (d1 + d2);
            let t2 = path.ds - t1;
            if d1 > 0.0 {
                b.deposit_with(lo, h0, t1 / d1, step, lowest(&stack), |_, _, _| {});
            }
            while stack.last().is_some_and(|e| e.height >= lo) {
                stack.pop();
            }
            if let Some(z) = zero {
                b.set_zero(z.value_at(step), step);
            }
            let first = next_atom;
            while next_atom < marks.atoms.len() && marks.atoms[next_atom].birth_step == step {
                next_atom += 1;
            }
            let fresh = &marks.atoms[first..next_atom];
            let mut p = 0usize;
            let mut activate = |b: &mut FieldBuilder, limit: f64, cap: &mut f64, stack: &mut Vec<Entry>| {
                while p < fresh.len() && fresh[p].height <= limit {
                    let a = &fresh[p];
                    let th = rule.threshold(step, a.height, b);
                    thresholds[first + p] = th;
                    let below = lowest(stack);
                    let lowest_active = if a.nu < th { below.min(a.height) } else { below };
                    stack.push(Entry {
                        height: a.height,
                        lowest_active,
                    });
                    *cap = lowest_active;
                    p += 1;
                }
            };
            if d2 > 0.0 {
                let cap0 = lowest(&stack);
                b.deposit_with(lo, h1, t2 / d2, step, cap0, |b, j, cap| {
                    activate(b, j as f64 * bin, cap, &mut stack)
                });
            }
            let mut cap = 0.0;
            activate(&mut b, f64::INFINITY, &mut cap, &mut stack);
        } else {
            // Degenerate step: all time at one height.
            if h0 > 0.0 && h0 <= lowest(&stack) {
                b.add(((h0 / bin).ceil() as usize).max(1), path.ds / bin, step);
            }
            if let Some(z) = zero {
                b.set_zero(z.value_at(step), step);
            }
        }
        rule.end_step(step, &b);
    }
    Pass {
        field: b.finish(path.n_steps()),
        thresholds,
    }
}

/// Local times with no marks.
pub(crate) fn unpruned_field(heights: &[f64], step_min: &[f64], zero: &[f64], ds: f64, bin: f64) -> LocalTimeField {
    let mut b = FieldBuilder::new(bin);
    for n in 0..step_min.len() {
        let step = n + 1;
        let (h0, lo, h1) = (heights[n], step_min[n], heights[step]);
        let (d1, d2) = (h0 - lo, h1 - lo);
        if d1 + d2 > 0.0 {
            let t1 = ds * d1 / (d1 + d2);
            let t2 = ds - t1;
            if d1 > 0.0 {
                b.deposit_with(lo, h0, t1 / d1, step, f64::INFINITY, |_, _, _| {});
            }
            b.set_zero(zero[step], step);
            if d2 > 0.0 {
                b.deposit_with(lo, h1, t2 / d2, step, f64::INFINITY, |_, _, _| {});
            }
        } else {
            if h0 > 0.0 {
                b.add(((h0 / bin).ceil() as usize).max(1), ds / bin, step);
            }
            b.set_zero(zero[step], step);
        }
    }
    b.finish(step_min.len())
}

fn check_cap(marks: &MarkSet, thresholds: &[f64]) -> Result<()> {
    let used = thresholds.iter().copied().fold(0.0, f64::max);
    if used > marks.nu_cap && !marks.atoms.is_empty() {
        return Err(config(format!(
            "activation rate {used} exceeds the mark cap {}; marks are undersampled",
            marks.nu_cap
        )));
    }
    Ok(())
}

/// Accumulate local time only while no alive mark has ν < θ.
pub fn prune_constant(path: &HeightPath, marks: &MarkSet, theta: f64) -> Result<LocalTimeField> {
    if !(theta >= 0.0) {
        return Err(config(format!("theta must be >= 0, got {theta}")));
    }
    if theta > marks.nu_cap && !(marks.atoms.is_empty() && marks.nu_cap == 0.0 && theta == 0.0) {
        return Err(config(format!("theta = {theta} exceeds the mark cap {}", marks.nu_cap)));
    }
    let field = IntensityField::Constant(theta);
    Ok(run_pass(path, marks, &mut Fixed(&field)).field)
}

/// Pruning with a prescribed intensity that does not depend on the pruned output.
pub fn prune_with_field(path: &HeightPath, marks: &MarkSet, field: &IntensityField) -> Result<LocalTimeField> {
    let pass = run_pass(path, marks, &mut Fixed(field));
    check_cap(marks, &pass.thresholds)?;
    Ok(pass.field)
}

/// Grid pruning: in the band (kε, (k+1)ε] the rate is g(nδ) between the steps where
/// the pruned local time at kε first reaches nδ and (n+1)δ.
pub fn prune_grid(
    path: &HeightPath,
    marks: &MarkSet,
    eps: f64,
    delta: f64,
    comp: &CompetitionMechanism,
) -> Result<(LocalTimeField, IntensityField)> {
    if !(eps > 0.0 && delta > 0.0) {
        return Err(config("grid pruning needs eps, delta > 0"));
    }
    let ratio = level_index(eps, path.level_bin)
        .map_err(|_| config(format!("eps = {eps} must be a multiple of the level bin {}", path.level_bin)))?;
    if ratio == 0 {
        return Err(config("eps must be at least one level bin"));
    }
    let eps = ratio as f64 * path.level_bin;
    let mut rule = AdaptiveGrid {
        comp,
        delta,
        eps,
        ratio,
        thresholds: Vec::new(),
    };
    let pass = run_pass(path, marks, &mut rule);
    check_cap(marks, &pass.thresholds)?;
    let rates = rule
        .thresholds
        .iter()
        .map(|th| (0..=th.len()).map(|n| comp.g_unchecked(n as f64 * delta)).collect())
        .collect();
    let intensity = IntensityField::Grid(GridIntensity {
        eps,
        delta,
        thresholds: rule.thresholds,
        rates,
    });
    Ok((pass.field, intensity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::BranchingMechanism;
    use crate::tree::{generate_snake_marks, simulate_height_path, HeightOptions};
    use proptest::prelude::*;

    fn path(seed: u64, x: f64) -> HeightPath {
        let m = BranchingMechanism::brownian(0.2, 2f64.sqrt()).unwrap();
        let o = HeightOptions {
            ds: 1e-4,
            level_bin: Some(0.01),
            horizon: 100.0,
            height_cap: Some(1.0),
            seed,
        };
        simulate_height_path(&m, x, &o).unwrap()
    }

    #[test]
    fn theta_zero_is_unpruned() {
        let p = path(1, 0.5);
        let m = generate_snake_marks(&p, 3.0, 2).unwrap();
        assert_eq!(prune_constant(&p, &m, 0.0).unwrap(), p.local_time);
        assert_eq!(prune_constant(&p, &MarkSet::empty(), 0.0).unwrap(), p.local_time);
    }

    #[test]
    fn nested_thresholds_are_ordered() {
        let p = path(2, 0.5);
        let m = generate_snake_marks(&p, 3.0, 3).unwrap();
        let l1 = prune_constant(&p, &m, 1.0).unwrap();
        let l2 = prune_constant(&p, &m, 2.0).unwrap();
        assert!(l2.dominated_by(&l1));
        assert!(l1.dominated_by(&p.local_time));
        assert_eq!(l1.final_value(0), p.local_time.final_value(0));
        assert!(matches!(prune_constant(&p, &m, 3.5), Err(crate::Error::Config(_))));
    }

    #[test]
    fn grid_with_constant_g_is_constant_pruning() {
        let p = path(3, 0.5);
        let m = generate_snake_marks(&p, 2.0, 4).unwrap();
        let c = CompetitionMechanism::constant(1.5).unwrap();
        let (g, _) = prune_grid(&p, &m, 0.1, 0.05, &c).unwrap();
        assert_eq!(g, prune_constant(&p, &m, 1.5).unwrap());
    }

    #[test]
    fn huge_delta_uses_g0() {
        let p = path(5, 0.5);
        let m = generate_snake_marks(&p, 4.0, 6).unwrap();
        let c = CompetitionMechanism::new(vec![(0.0, 0.7), (1.0, 3.0)]).unwrap();
        let (g, i) = prune_grid(&p, &m, 0.2, 1e6, &c).unwrap();
        assert_eq!(g, prune_constant(&p, &m, 0.7).unwrap());
        if let IntensityField::Grid(gi) = i {
            assert!(gi.thresholds.iter().all(Vec::is_empty));
        }
    }

    #[test]
    fn realised_grid_reapplies_exactly() {
        let p = path(6, 1.0);
        let c = CompetitionMechanism::linear(2.0).unwrap();
        let m = generate_snake_marks(&p, c.g_unchecked(1.05 * p.local_time.max_value()), 7).unwrap();
        let (g, i) = prune_grid(&p, &m, 0.1, 0.1, &c).unwrap();
        assert_eq!(prune_with_field(&p, &m, &i).unwrap(), g);
    }

    #[test]
    fn block_increments_are_delta() {
        let p = path(8, 1.0);
        let c = CompetitionMechanism::linear(2.0).unwrap();
        let m = generate_snake_marks(&p, c.g_unchecked(1.05 * p.local_time.max_value()), 9).unwrap();
        let (g, i) = prune_grid(&p, &m, 0.1, 0.05, &c).unwrap();
        let IntensityField::Grid(gi) = i else { unreachable!() };
        let mut checked = 0;
        for (k, th) in gi.thresholds.iter().enumerate() {
            let series = g.level(k * 10).unwrap();
            // The threshold step overshoots nδ by at most its own increment.
            let jump = |s: usize| series.value_at(s) - series.value_at(s - 1);
            for w in th.windows(2) {
                let inc = series.value_at(w[1]) - series.value_at(w[0]);
                assert!(inc - 0.05 <= jump(w[1]) + 1e-12 && 0.05 - inc <= jump(w[0]) + 1e-12, "band {k}: {inc}");
                if k > 0 {
                    assert!(jump(w[0]).max(jump(w[1])) <= p.ds / p.level_bin + 1e-12);
                }
                checked += 1;
            }
        }
        assert!(checked > 0);
        assert!(prune_grid(&p, &m, 0.105, 0.05, &c).is_err());
    }

    #[test]
    fn grid_intensity_semi_snake() {
        let p = path(10, 1.0);
        let c = CompetitionMechanism::linear(2.0).unwrap();
        let m = generate_snake_marks(&p, c.g_unchecked(1.05 * p.local_time.max_value()), 11).unwrap();
        let (_, i) = prune_grid(&p, &m, 0.1, 0.05, &c).unwrap();
        let mut checked = 0;
        for s in (0..p.n_steps().saturating_sub(300)).step_by(97) {
            let s2 = s + 300;
            let floor = p.min_between(s, s2);
            for q in 0..20 {
                let h = floor * q as f64 / 20.0;
                if h >= floor {
                    continue;
                }
                assert_eq!(i.rate(s, h), i.rate(s2, h), "s {s} s2 {s2} h {h} floor {floor}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn raising_rates_thins(seed in 0u64..1000, theta in 0.1..1.0f64, factor in 1.0..2.0f64) {
            let p = path(seed, 0.4);
            let c = CompetitionMechanism::new(vec![(0.0, theta), (0.5, theta + 1.0)]).unwrap();
            let m = generate_snake_marks(&p, 2.0 * c.g_unchecked(1.05 * p.local_time.max_value()), seed + 1).unwrap();
            let (_, i) = prune_grid(&p, &m, 0.1, 0.1, &c).unwrap();
            let lo = prune_with_field(&p, &m, &i).unwrap();
            let hi = prune_with_field(&p, &m, &i.scaled(factor)).unwrap();
            prop_assert!(hi.dominated_by(&lo));
            prop_assert!(lo.dominated_by(&p.local_time));
        }
    }
}

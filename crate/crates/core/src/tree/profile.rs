//! Ray-Knight profiles, excursions above a level and inverse local times.

use serde::Serialize;

use super::field::LocalTimeField;
use super::HeightPath;
use crate::error::{Error, Result};

/// L^a_{T_x} for every level of `field`, read at the last step of `path`.
pub fn ray_knight_profile(field: &LocalTimeField, path: &HeightPath) -> Result<Vec<f64>> {
    if path.truncated() {
        return Err(Error::Truncated(format!(
            "path stopped at the horizon after {} steps, before T_x",
            path.n_steps()
        )));
    }
    Ok(field.column(path.n_steps()))
}

/// A maximal run of steps `start..end` on which H stays above the level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Excursion {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    /// L^a at the start step.
    pub local_time: f64,
}

impl Excursion {
    pub fn steps(&self) -> usize {
        self.end - self.start
    }
}

/// Runs of grid steps with H > a. A run breaks when H dips to a within a step.
pub fn excursions_above(path: &HeightPath, a: f64) -> Result<Vec<Excursion>> {
    let j = path.local_time.level_index(a)?;
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for s in 0..path.heights.len() {
        let above = path.heights[s] > a;
        let linked = s > 0 && path.step_min[s - 1] > a;
        match (start, above) {
            (Some(b), true) if !linked => {
                out.push(excursion(path, j, b, s));
                start = Some(s);
            }
            (Some(b), false) => {
                out.push(excursion(path, j, b, s));
                start = None;
            }
            (None, true) => start = Some(s),
            _ => {}
        }
    }
    if let Some(b) = start {
        out.push(excursion(path, j, b, path.heights.len()));
    }
    Ok(out)
}

fn excursion(path: &HeightPath, j: usize, start: usize, end: usize) -> Excursion {
    Excursion {
        start,
        end,
        local_time: path.local_time.value(j, start),
    }
}

/// Inverse local time: the first step at which level `j` of `field` exceeds `x`.
pub fn breve_t(field: &LocalTimeField, j: usize, x: f64) -> Option<usize> {
    field.level(j).and_then(|l| l.first_above(x))
}

/// |L^c(T̆^a_x) − L^c(T̆^b_y)| with y = L^b(T̆^a_x), for levels a < b < c of a field
/// built on `path`.
///
/// T̆^a_x falls inside step s₁. If that step ends at or above the floor of b's bin,
/// the path reaches b after T̆^a_x within the same step, so T̆^b_y is read at s₁ too;
/// otherwise it is the first later step at which L^b moves. An inverse time that
/// never happens is read as the end of the path. Returns `None` when level `a`
/// never exceeds `x`.
pub fn flow_property_gap(field: &LocalTimeField, path: &HeightPath, a: usize, b: usize, c: usize, x: f64) -> Option<f64> {
    let s1 = breve_t(field, a, x)?;
    let s2 = if path.heights[s1] > field.height_of(b) - field.level_bin {
        s1
    } else {
        breve_t(field, b, field.value(b, s1)).unwrap_or(field.n_steps)
    };
    Some((field.value(c, s1) - field.value(c, s2)).abs())
}

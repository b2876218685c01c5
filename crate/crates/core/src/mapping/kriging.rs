use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GridSpec, RasterGrid, VariogramModel, NODATA};
use crate::error::{Error, Result};

/// Offset applied to repeated sample locations so that the kriging matrix
/// keeps distinct rows.
const DUPLICATE_JITTER_M: f64 = 1e-3;
const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrigeOptions {
    /// Nearest samples used per cell.
    pub neighbors: usize,
    /// Use every sample for every cell, ignoring `neighbors`.
    pub dense: bool,
}

impl Default for KrigeOptions {
    fn default() -> Self {
        KrigeOptions {
            neighbors: 32,
            dense: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigeSolution {
    pub value: f64,
    /// `(sample index, weight)` sorted by distance to the target.
    pub weights: Vec<(usize, f64)>,
    pub lagrange: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigeOutput {
    pub raster: RasterGrid,
    /// Cells left at nodata because their system could not be solved.
    pub singular_cells: usize,
    pub jittered_points: usize,
    pub neighbors: usize,
}

fn jitter_duplicates(points: &[(f64, f64, f64)]) -> (Vec<(f64, f64, f64)>, usize) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[a].1.total_cmp(&points[b].1))
            .then(a.cmp(&b))
    });
    let mut out = points.to_vec();
    let mut jittered = 0;
    let mut run = 0;
    for w in 1..order.len() {
        let (p, q) = (points[order[w - 1]], points[order[w]]);
        if p.0 == q.0 && p.1 == q.1 {
            run += 1;
            out[order[w]].0 += run as f64 * DUPLICATE_JITTER_M;
            jittered += 1;
        } else {
            run = 0;
        }
    }
    (out, jittered)
}

fn nearest(points: &[(f64, f64, f64)], x: f64, y: f64, m: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.0 - x).powi(2) + (p.1 - y).powi(2), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if m < d.len() {
        d.select_nth_unstable_by(m - 1, cmp);
        d.truncate(m);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

/// Ordinary kriging estimate at `(x, y)` from the `neighbors` nearest
/// samples. `None` when the system is singular.
pub fn krige_at(points: &[(f64, f64, f64)], model: &VariogramModel, x: f64, y: f64, neighbors: usize) -> Option<KrigeSolution> {
    let idx = nearest(points, x, y, neighbors.min(points.len()));
    let m = idx.len();
    if model.sill == 0.0 {
        // no spatial variance at all: every sample is equally informative
        let w = 1.0 / m as f64;
        let value = idx.iter().map(|&i| points[i].2).sum::<f64>() / m as f64;
        return Some(KrigeSolution {
            value,
            weights: idx.iter().map(|&i| (i, w)).collect(),
            lagrange: 0.0,
        });
    }
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut b = DVector::<f64>::zeros(m + 1);
    for r in 0..m {
        let pr = (points[idx[r]].0, points[idx[r]].1);
        for c in r + 1..m {
            let g = model.gamma_matrix(d(pr, (points[idx[c]].0, points[idx[c]].1)));
            a[(r, c)] = g;
            a[(c, r)] = g;
        }
        a[(r, m)] = 1.0;
        a[(m, r)] = 1.0;
        b[r] = model.gamma_matrix(d(pr, (x, y)));
    }
    b[m] = 1.0;
    let sol = a.lu().solve(&b)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sum: f64 = sol.iter().take(m).sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return None;
    }
    let value = (0..m).map(|r| sol[r] * points[idx[r]].2).sum();
    Some(KrigeSolution {
        value,
        weights: (0..m).map(|r| (idx[r], sol[r])).collect(),
        lagrange: sol[m],
    })
}

/// Kriges every cell center of `grid`. Cells are solved in parallel and
/// assembled by index.
pub fn ordinary_krige(points: &[(f64, f64, f64)], model: &VariogramModel, grid: GridSpec, opts: KrigeOptions) -> Result<KrigeOutput> {
    model.validate()?;
    grid.validate()?;
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("kriging needs at least 3 points, got {}", points.len())));
    }
    if !opts.dense && opts.neighbors == 0 {
        return Err(Error::InvalidArgument("neighbors must be positive".into()));
    }
    if let Some(p) = points.iter().find(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite())) {
        return Err(Error::NonFinite(format!("kriging input {p:?}")));
    }
    let (pts, jittered_points) = jitter_duplicates(points);
    let m = if opts.dense { pts.len() } else { opts.neighbors.min(pts.len()) };
    let values: Vec<Option<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|cell| {
            let (x, y) = grid.cell_center(cell / grid.ncols, cell % grid.ncols);
            krige_at(&pts, model, x, y, m).map(|s| s.value)
        })
        .collect();
    let singular_cells = values.iter().filter(|v| v.is_none()).count();
    let raster = RasterGrid {
        spec: grid,
        nodata: NODATA,
        values: values.into_iter().map(|v| v.unwrap_or(NODATA)).collect(),
    };
    Ok(KrigeOutput {
        raster,
        singular_cells,
        jittered_points,
        neighbors: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::VariogramFamily;

    fn model(nugget: f64) -> VariogramModel {
        VariogramModel {
            family: VariogramFamily::Spherical,
            nugget,
            sill: 1.0,
            range: 500.0,
        }
    }

    #[test]
    fn exact_at_samples() {
        let pts = [(0.0, 0.0, 1.0), (100.0, 0.0, 2.0), (0.0, 100.0, 3.0), (70.0, 80.0, -1.0)];
        for p in &pts {
            let s = krige_at(&pts, &model(0.0), p.0, p.1, 4).unwrap();
            assert!((s.value - p.2).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_sum_to_one_with_nugget() {
        let pts = [(0.0, 0.0, 1.0), (100.0, 0.0, 2.0), (0.0, 100.0, 3.0), (70.0, 80.0, -1.0)];
        let s = krige_at(&pts, &model(0.3), 40.0, 40.0, 4).unwrap();
        let sum: f64 = s.weights.iter().map(|w| w.1).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_are_jittered() {
        let pts = [(0.0, 0.0, 1.0), (0.0, 0.0, 2.0), (50.0, 0.0, 3.0), (0.0, 50.0, 4.0)];
        let grid = GridSpec {
            x_ll: 0.0,
            y_ll: 0.0,
            cell_size: 25.0,
            ncols: 2,
            nrows: 2,
        };
        let out = ordinary_krige(&pts, &model(0.0), grid, KrigeOptions::default()).unwrap();
        assert_eq!(out.jittered_points, 1);
        assert_eq!(out.singular_cells, 0);
    }

    #[test]
    fn zero_sill_returns_constant() {
        let pts: Vec<_> = (0..5).map(|i| (i as f64, 0.0, 7.5)).collect();
        let m = VariogramModel {
            family: VariogramFamily::Spherical,
            nugget: 0.0,
            sill: 0.0,
            range: 1.0,
        };
        assert_eq!(krige_at(&pts, &m, 10.0, 3.0, 3).unwrap().value, 7.5);
    }
}

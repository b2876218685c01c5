use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariogramFamily {
    #[default]
    Spherical,
    Exponential,
    Gaussian,
}

impl VariogramFamily {
    /// Normalized structure `0 → 1` at lag `h` for range `r`. Exponential
    /// and Gaussian use the practical range (95% of the sill at `r`).
    fn shape(self, h: f64, r: f64) -> f64 {
        let t = h / r;
        match self {
            VariogramFamily::Spherical => {
                if t >= 1.0 {
                    1.0
                } else {
                    1.5 * t - 0.5 * t * t * t
                }
            }
            VariogramFamily::Exponential => 1.0 - (-3.0 * t).exp(),
            VariogramFamily::Gaussian => 1.0 - (-3.0 * t * t).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub family: VariogramFamily,
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.nugget >= 0.0 && self.sill >= self.nugget && self.range > 0.0 && self.sill.is_finite() && self.range.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid variogram model {self:?}")))
        }
    }

    pub fn partial_sill(&self) -> f64 {
        self.sill - self.nugget
    }

    /// Semivariance at lag `h > 0`; `gamma(0)` returns the nugget (the
    /// right limit). Kriging systems use [`VariogramModel::gamma_matrix`].
    pub fn gamma(&self, h: f64) -> f64 {
        self.nugget + self.partial_sill() * self.family.shape(h, self.range)
    }

    /// Semivariance with the discontinuity at the origin: exactly 0 at `h = 0`.
    pub fn gamma_matrix(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            self.gamma(h)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBin {
    pub lag: f64,
    pub gamma: f64,
    pub pairs: usize,
}

/// Semivariances in `n_bins` equal-width bins over `(0, max_distance / 2]`;
/// each bin reports the mean pair distance. Empty bins are dropped.
pub fn empirical_variogram(points: &[(f64, f64, f64)], n_bins: usize) -> Result<Vec<EmpiricalBin>> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be positive".into()));
    }
    let n = points.len();
    let max_d = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| dist(points[i], points[j]))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let cutoff = max_d / 2.0;
    if !(cutoff > 0.0) {
        return Err(Error::Geometry("all points coincide".into()));
    }
    let width = cutoff / n_bins as f64;
    // per-row partial sums, combined in row order for reproducibility
    let rows: Vec<Vec<(f64, f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![(0.0, 0.0, 0usize); n_bins];
            for j in i + 1..n {
                let d = dist(points[i], points[j]);
                if d == 0.0 || d > cutoff {
                    continue;
                }
                let b = ((d / width).ceil() as usize).clamp(1, n_bins) - 1;
                let dz = points[i].2 - points[j].2;
                acc[b].0 += d;
                acc[b].1 += dz * dz;
                acc[b].2 += 1;
            }
            acc
        })
        .collect();
    let mut total = vec![(0.0, 0.0, 0usize); n_bins];
    for row in rows {
        for (t, r) in total.iter_mut().zip(row) {
            t.0 += r.0;
            t.1 += r.1;
            t.2 += r.2;
        }
    }
    Ok(total
        .into_iter()
        .filter(|t| t.2 > 0)
        .map(|(sd, sz, c)| EmpiricalBin {
            lag: sd / c as f64,
            gamma: sz / (2.0 * c as f64),
            pairs: c,
        })
        .collect())
}

fn dist(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Pair-count weighted least squares for `(nugget, partial sill) >= 0` at a
/// fixed range. Returns `(sse, nugget, partial_sill)`.
fn fit_at_range(bins: &[EmpiricalBin], family: VariogramFamily, range: f64) -> (f64, f64, f64) {
    let f: Vec<f64> = bins.iter().map(|b| family.shape(b.lag, range)).collect();
    let sse = |c0: f64, c1: f64| -> f64 {
        bins.iter()
            .zip(&f)
            .map(|(b, fb)| b.pairs as f64 * (b.gamma - c0 - c1 * fb).powi(2))
            .sum()
    };
    let (mut sw, mut swf, mut swff, mut swg, mut swfg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (b, &fb) in bins.iter().zip(&f) {
        let w = b.pairs as f64;
        sw += w;
        swf += w * fb;
        swff += w * fb * fb;
        swg += w * b.gamma;
        swfg += w * fb * b.gamma;
    }
    let mut candidates = Vec::with_capacity(3);
    let det = sw * swff - swf * swf;
    if det.abs() > 1e-12 * sw * swff {
        let c0 = (swff * swg - swf * swfg) / det;
        let c1 = (sw * swfg - swf * swg) / det;
        if c0 >= 0.0 && c1 >= 0.0 {
            candidates.push((c0, c1));
        }
    }
    if swff > 0.0 {
        candidates.push((0.0, (swfg / swff).max(0.0)));
    }
    candidates.push(((swg / sw).max(0.0), 0.0));
    candidates
        .into_iter()
        .map(|(c0, c1)| (sse(c0, c1), c0, c1))
        .fold((f64::INFINITY, 0.0, 0.0), |best, c| if c.0 < best.0 { c } else { best })
}

/// Fits `family` to the empirical variogram: grid search over the range,
/// golden-section refinement around the best grid point, and constrained
/// weighted least squares for nugget and sill at each trial range.
/// A constant field yields a pure-nugget model with zero sill.
pub fn fit_variogram(points: &[(f64, f64, f64)], n_bins: usize, family: VariogramFamily) -> Result<VariogramModel> {
    if points.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "variogram fitting needs at least 10 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite())) {
        return Err(Error::NonFinite(format!("variogram input {p:?}")));
    }
    let bins = empirical_variogram(points, n_bins)?;
    let max_lag = bins.iter().map(|b| b.lag).fold(0.0, f64::max);
    let first = points[0].2;
    if points.iter().all(|p| p.2 == first) || bins.iter().all(|b| b.gamma == 0.0) {
        return Ok(VariogramModel {
            family,
            nugget: 0.0,
            sill: 0.0,
            range: max_lag.max(f64::MIN_POSITIVE),
        });
    }

    const GRID: usize = 60;
    let lo = max_lag / 50.0;
    let hi = 2.5 * max_lag;
    let ranges: Vec<f64> = (0..GRID)
        .map(|i| lo * (hi / lo).powf(i as f64 / (GRID - 1) as f64))
        .collect();
    let scores: Vec<f64> = ranges.iter().map(|&r| fit_at_range(&bins, family, r).0).collect();
    let best = (0..GRID).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
    let mut a = ranges[best.saturating_sub(1)];
    let mut b = ranges[(best + 1).min(GRID - 1)];

    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let obj = |r: f64| fit_at_range(&bins, family, r).0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (obj(c), obj(d));
    for _ in 0..60 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = obj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = obj(d);
        }
    }
    let refined = 0.5 * (a + b);
    let range = if obj(refined) <= scores[best] { refined } else { ranges[best] };
    let (_, nugget, psill) = fit_at_range(&bins, family, range);
    let model = VariogramModel {
        family,
        nugget,
        sill: nugget + psill,
        range,
    };
    model.validate()?;
    Ok(model)
}

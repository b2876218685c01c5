use serde::{Deserialize, Serialize};

use super::{RasterGrid, NODATA};
use crate::error::{Error, Result};

pub const CLASS_NAMES: [&str; 5] = ["very_low", "low", "moderate", "high", "very_high"];

/// Class edges `b_0 .. b_k`. Class `c` (1-based) holds `b_{c-1} <= v < b_c`;
/// the top class is closed above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBreaks {
    pub edges: Vec<f64>,
}

impl ClassBreaks {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        let b = ClassBreaks { edges };
        b.validate()?;
        Ok(b)
    }

    /// Edges must ascend strictly, except that the last class may be a single
    /// value (`b_{k-1} == b_k`).
    pub fn validate(&self) -> Result<()> {
        let e = &self.edges;
        if e.len() < 2 || e.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid class edges {e:?}")));
        }
        let k = e.len() - 1;
        let inner_ok = e[..k].windows(2).all(|w| w[0] < w[1]);
        if !inner_ok || e[k - 1] > e[k] || (k == 1 && e[0] == e[1]) {
            return Err(Error::InvalidArgument(format!("class edges not ascending: {e:?}")));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.edges.len() - 1
    }

    /// Widens the outer edges to cover `[0, 1]`, for probability rasters.
    pub fn with_unit_span(mut self) -> Self {
        let k = self.k();
        self.edges[0] = self.edges[0].min(0.0);
        self.edges[k] = self.edges[k].max(1.0);
        self
    }

    /// 1-based class of `v`, `None` outside `[b_0, b_k]`.
    pub fn class_of(&self, v: f64) -> Option<u8> {
        let k = self.k();
        if !(v >= self.edges[0] && v <= self.edges[k]) {
            return None;
        }
        let above = self.edges[1..k].partition_point(|&b| b <= v);
        Some(above as u8 + 1)
    }
}

/// Exact Fisher-Jenks: minimizes the total within-class sum of squared
/// deviations over contiguous classes of the sorted values. Equal values are
/// never split across classes.
pub fn jenks_breaks(values: &[f64], k: usize) -> Result<ClassBreaks> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("jenks input {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniq: Vec<(f64, f64)> = Vec::new();
    for v in sorted {
        match uniq.last_mut() {
            Some(last) if last.0 == v => last.1 += 1.0,
            _ => uniq.push((v, 1.0)),
        }
    }
    let m = uniq.len();
    if m < k {
        return Err(Error::TooFewDistinct { distinct: m, k });
    }
    // shifted prefix sums limit cancellation in the class cost
    let shift = uniq[m / 2].0;
    let mut pw = vec![0.0; m + 1];
    let mut ps = vec![0.0; m + 1];
    let mut pq = vec![0.0; m + 1];
    for (i, &(v, w)) in uniq.iter().enumerate() {
        let x = v - shift;
        pw[i + 1] = pw[i] + w;
        ps[i + 1] = ps[i] + w * x;
        pq[i + 1] = pq[i] + w * x * x;
    }
    let cost = |i: usize, j: usize| -> f64 {
        let w = pw[j + 1] - pw[i];
        let s = ps[j + 1] - ps[i];
        (pq[j + 1] - pq[i] - s * s / w).max(0.0)
    };

    let mut prev: Vec<f64> = (0..m).map(|j| cost(0, j)).collect();
    let mut starts = vec![vec![0usize; m]; k];
    for c in 1..k {
        let mut cur = vec![f64::INFINITY; m];
        for j in c..m {
            let mut best = f64::INFINITY;
            let mut arg = c;
            for i in c..=j {
                let v = prev[i - 1] + cost(i, j);
                if v < best {
                    best = v;
                    arg = i;
                }
            }
            cur[j] = best;
            starts[c][j] = arg;
        }
        prev = cur;
    }
    let mut class_starts = vec![0usize; k];
    let mut j = m - 1;
    for c in (1..k).rev() {
        let s = starts[c][j];
        class_starts[c] = s;
        j = s - 1;
    }
    let mut edges: Vec<f64> = class_starts.iter().map(|&s| uniq[s].0).collect();
    edges.push(uniq[m - 1].0);
    ClassBreaks::new(edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classified {
    /// Class codes `1..=k` or nodata.
    pub raster: RasterGrid,
    pub out_of_range: usize,
}

pub fn classify(raster: &RasterGrid, breaks: &ClassBreaks) -> Result<Classified> {
    breaks.validate()?;
    let mut out_of_range = 0;
    let values = raster
        .values
        .iter()
        .map(|&v| {
            if raster.is_nodata(v) {
                return NODATA;
            }
            match breaks.class_of(v) {
                Some(c) => f64::from(c),
                None => {
                    out_of_range += 1;
                    NODATA
                }
            }
        })
        .collect();
    Ok(Classified {
        raster: RasterGrid {
            spec: raster.spec,
            nodata: NODATA,
            values,
        },
        out_of_range,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAreas {
    pub counts: Vec<usize>,
    pub percentages: Vec<f64>,
    pub n_valid: usize,
}

/// Share of data cells per class of a `1..=k` class raster.
pub fn class_area_report(classes: &RasterGrid, k: usize) -> Result<ClassAreas> {
    let mut counts = vec![0usize; k];
    for &v in &classes.values {
        if classes.is_nodata(v) {
            continue;
        }
        let c = v as usize;
        if v != c as f64 || c == 0 || c > k {
            return Err(Error::Raster(format!("cell value {v} is not a class in 1..={k}")));
        }
        counts[c - 1] += 1;
    }
    let n_valid: usize = counts.iter().sum();
    if n_valid == 0 {
        return Err(Error::AllNodata);
    }
    let percentages = counts.iter().map(|&c| c as f64 * 100.0 / n_valid as f64).collect();
    Ok(ClassAreas {
        counts,
        percentages,
        n_valid,
    })
}

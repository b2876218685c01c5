//! Distance-band spatial weights and global autocorrelation statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const DEFAULT_THRESHOLD_M: f64 = 2000.0;

/// Binary symmetric weights: `w_ij = 1` iff `0 < d_ij < threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeights {
    pub n: usize,
    pub threshold_m: f64,
    pub neighbors: Vec<Vec<usize>>,
    /// Nodes without any neighbor.
    pub isolated: Vec<usize>,
}

impl SpatialWeights {
    /// Sum of all weights.
    pub fn s0(&self) -> f64 {
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }
}

pub fn build_weights(coords: &[(f64, f64)], threshold_m: f64) -> Result<SpatialWeights> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::InvalidArgument("spatial weights need at least two points".into()));
    }
    let t2 = threshold_m * threshold_m;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (xi, yi) = coords[i];
            (0..n)
                .filter(|&j| {
                    let dx = coords[j].0 - xi;
                    let dy = coords[j].1 - yi;
                    let d2 = dx * dx + dy * dy;
                    d2 > 0.0 && d2 < t2
                })
                .collect()
        })
        .collect();
    let isolated = (0..n).filter(|&i| neighbors[i].is_empty()).collect();
    Ok(SpatialWeights {
        n,
        threshold_m,
        neighbors,
        isolated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Inference {
    AnalyticalNormal,
    Permutation { n_perm: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    AnalyticalNormal,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrResult {
    pub statistic: f64,
    pub expected: f64,
    pub z_score: f64,
    pub p_value: f64,
    pub s0: f64,
    pub method: InferenceMethod,
}

/// Moran scatterplot coordinates: standardized values and their spatial lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranScatter {
    pub standardized: Vec<f64>,
    pub lagged: Vec<f64>,
}

impl MoranScatter {
    /// CSV `id,z,lag[,class]`.
    pub fn write_csv<W: std::io::Write>(&self, ids: &[i64], classes: Option<&[u8]>, mut w: W) -> std::io::Result<()> {
        if classes.is_some() {
            writeln!(w, "id,z,lag,class")?;
        } else {
            writeln!(w, "id,z,lag")?;
        }
        for i in 0..self.standardized.len() {
            match classes {
                Some(c) => writeln!(w, "{},{},{},{}", ids[i], self.standardized[i], self.lagged[i], c[i])?,
                None => writeln!(w, "{},{},{}", ids[i], self.standardized[i], self.lagged[i])?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranOutput {
    pub result: AutocorrResult,
    pub scatter: MoranScatter,
}

fn check_inputs(values: &[f64], w: &SpatialWeights) -> Result<f64> {
    if values.len() != w.n {
        return Err(Error::InvalidArgument(format!(
            "{} values for {} weight rows",
            values.len(),
            w.n
        )));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::ConstantField);
    }
    let s0 = w.s0();
    if s0 == 0.0 {
        return Err(Error::NoNeighbors);
    }
    Ok(s0)
}

fn deviations(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss = dev.iter().map(|d| d * d).sum();
    (dev, ss)
}

fn moran_statistic(values: &[f64], w: &SpatialWeights, s0: f64) -> f64 {
    let (dev, ss) = deviations(values);
    let cross: f64 = (0..w.n)
        .map(|i| dev[i] * w.neighbors[i].iter().map(|&j| dev[j]).sum::<f64>())
        .sum();
    (w.n as f64 / s0) * cross / ss
}

fn geary_statistic(values: &[f64], w: &SpatialWeights, s0: f64) -> f64 {
    let (_, ss) = deviations(values);
    let diff: f64 = (0..w.n)
        .map(|i| {
            w.neighbors[i]
                .iter()
                .map(|&j| (values[i] - values[j]).powi(2))
                .sum::<f64>()
        })
        .sum();
    (w.n as f64 - 1.0) * diff / (2.0 * s0 * ss)
}

/// `S1 = 1/2 sum (w_ij + w_ji)^2` and `S2 = sum_i (w_i. + w_.i)^2`.
fn s1_s2(w: &SpatialWeights) -> (f64, f64) {
    let mut in_deg = vec![0usize; w.n];
    let mut s1 = 0.0;
    for i in 0..w.n {
        for &j in &w.neighbors[i] {
            in_deg[j] += 1;
            let wji: f64 = if w.contains(j, i) { 1.0 } else { 0.0 };
            s1 += 0.5 * (1.0 + wji).powi(2);
        }
    }
    // pairs with only w_ji set were counted from row j
    let s2 = (0..w.n)
        .map(|i| ((w.neighbors[i].len() + in_deg[i]) as f64).powi(2))
        .sum();
    (s1, s2)
}

fn two_sided_p(z: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0)
}

fn permutation_inference<F>(values: &[f64], observed: f64, n_perm: usize, seed: u64, stat: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let sims: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, p as u64));
            let mut shuffled = values.to_vec();
            shuffled.shuffle(&mut rng);
            stat(&shuffled)
        })
        .collect();
    let m = n_perm as f64;
    let mean = sims.iter().sum::<f64>() / m;
    let sd = (sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0)).sqrt();
    let z = if sd > 0.0 { (observed - mean) / sd } else { 0.0 };
    // folded one-sided pseudo p-value
    let mut larger = sims.iter().filter(|&&s| s >= observed).count();
    if n_perm - larger < larger {
        larger = n_perm - larger;
    }
    let p = (larger as f64 + 1.0) / (m + 1.0);
    (z, p)
}

/// Global Moran's I with `(n / S0)` scaling, its inference and the Moran
/// scatterplot data.
pub fn morans_i(values: &[f64], w: &SpatialWeights, inference: Inference) -> Result<MoranOutput> {
    let s0 = check_inputs(values, w)?;
    let n = w.n as f64;
    let statistic = moran_statistic(values, w, s0);
    let expected = -1.0 / (n - 1.0);
    let (z_score, p_value, method) = match inference {
        Inference::AnalyticalNormal => {
            let (s1, s2) = s1_s2(w);
            let var = (n * n * s1 - n * s2 + 3.0 * s0 * s0) / ((n * n - 1.0) * s0 * s0) - expected * expected;
            let z = (statistic - expected) / var.sqrt();
            (z, two_sided_p(z), InferenceMethod::AnalyticalNormal)
        }
        Inference::Permutation { n_perm, seed } => {
            if n_perm == 0 {
                return Err(Error::InvalidArgument("n_perm must be positive".into()));
            }
            let (z, p) = permutation_inference(values, statistic, n_perm, seed, |v| moran_statistic(v, w, s0));
            (z, p, InferenceMethod::Permutation)
        }
    };

    let (dev, ss) = deviations(values);
    let sigma = (ss / n).sqrt();
    let standardized: Vec<f64> = dev.iter().map(|d| d / sigma).collect();
    let lagged = (0..w.n)
        .map(|i| w.neighbors[i].iter().map(|&j| standardized[j]).sum())
        .collect();
    Ok(MoranOutput {
        result: AutocorrResult {
            statistic,
            expected,
            z_score,
            p_value,
            s0,
            method,
        },
        scatter: MoranScatter { standardized, lagged },
    })
}

/// Global Geary's C.
pub fn gearys_c(values: &[f64], w: &SpatialWeights, inference: Inference) -> Result<AutocorrResult> {
    let s0 = check_inputs(values, w)?;
    let n = w.n as f64;
    let statistic = geary_statistic(values, w, s0);
    let expected = 1.0;
    let (z_score, p_value, method) = match inference {
        Inference::AnalyticalNormal => {
            let (s1, s2) = s1_s2(w);
            let var = ((2.0 * s1 + s2) * (n - 1.0) - 4.0 * s0 * s0) / (2.0 * (n + 1.0) * s0 * s0);
            let z = (statistic - expected) / var.sqrt();
            (z, two_sided_p(z), InferenceMethod::AnalyticalNormal)
        }
        Inference::Permutation { n_perm, seed } => {
            if n_perm == 0 {
                return Err(Error::InvalidArgument("n_perm must be positive".into()));
            }
            let (z, p) = permutation_inference(values, statistic, n_perm, seed, |v| geary_statistic(v, w, s0));
            (z, p, InferenceMethod::Permutation)
        }
    };
    Ok(AutocorrResult {
        statistic,
        expected,
        z_score,
        p_value,
        s0,
        method,
    })
}

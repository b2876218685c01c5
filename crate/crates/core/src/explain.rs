//! Permutation feature importance and one-at-a-time hyperparameter
//! sensitivity.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::auc_roc;
use crate::model::{forward_trace, GtConfig, GtModel, Mode, ModelInput};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportanceOptions {
    /// Independent shuffles per input column.
    pub n_perm: usize,
    /// When positive, the interval is a percentile bootstrap of the mean
    /// drop; otherwise percentiles of the individual drops.
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        ImportanceOptions {
            n_perm: 100,
            n_bootstrap: 0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub name: String,
    pub importance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean AUC drop before flooring and normalization.
    pub raw_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
    pub threshold: f64,
    pub base_auc: f64,
    pub n_perm: usize,
    /// No column lowered the metric; importances are all zero.
    pub no_signal: bool,
}

impl ImportanceReport {
    /// Entry names, most important first (ties by input order).
    pub fn ranking(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by(|&a, &b| self.entries[b].importance.total_cmp(&self.entries[a].importance).then(a.cmp(&b)));
        idx.into_iter().map(|i| self.entries[i].name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ImportanceEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "feature,importance,ci_low,ci_high,threshold,raw_drop")?;
        for e in &self.entries {
            writeln!(w, "{},{},{},{},{},{}", e.name, e.importance, e.ci_low, e.ci_high, self.threshold, e.raw_drop)?;
        }
        Ok(())
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a, so a column keeps its stream when inputs are reordered
    let h = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
    derive_seed(seed, h)
}

/// Shuffles each input column (features and PE columns alike) across all
/// nodes and measures the AUC drop on the evaluation nodes. Shuffling only
/// the evaluation rows would let neighbours' intact values carry the signal
/// back through attention. Graph structure is left untouched.
pub fn permutation_importance(
    model: &GtModel,
    input: &ModelInput,
    labels: &[u8],
    eval_mask: &[usize],
    names: &[String],
    opts: ImportanceOptions,
) -> Result<ImportanceReport> {
    let d = input.input_dim();
    if names.len() != d {
        return Err(Error::InvalidArgument(format!("{} names for {d} input columns", names.len())));
    }
    if opts.n_perm == 0 {
        return Err(Error::InvalidArgument("n_perm must be positive".into()));
    }
    if eval_mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let eval_labels: Vec<u8> = eval_mask.iter().map(|&i| labels[i]).collect();
    let score = |inp: &ModelInput| -> Result<f64> {
        let probs = forward_trace(inp, model, Mode::Eval, 0)?.probs;
        let s: Vec<f64> = eval_mask.iter().map(|&i| probs[i]).collect();
        auc_roc(&s, &eval_labels)
    };
    let base_auc = score(input)?;

    let jobs: Vec<(usize, usize)> = (0..d).flat_map(|j| (0..opts.n_perm).map(move |r| (j, r))).collect();
    let drops: Vec<f64> = jobs
        .par_iter()
        .map(|&(j, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(name_seed(opts.seed, &names[j]), r as u64));
            let mut col: Vec<f64> = input.x.column(j).iter().copied().collect();
            col.shuffle(&mut rng);
            let mut permuted = input.clone();
            permuted.x.column_mut(j).copy_from_slice(&col);
            Ok(base_auc - score(&permuted)?)
        })
        .collect::<Result<_>>()?;

    let mut raw = Vec::with_capacity(d);
    for j in 0..d {
        let mut dj = drops[j * opts.n_perm..(j + 1) * opts.n_perm].to_vec();
        let mean = dj.iter().sum::<f64>() / opts.n_perm as f64;
        let (lo, hi) = if opts.n_bootstrap > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(name_seed(opts.seed, &names[j]), u64::MAX));
            let mut means: Vec<f64> = (0..opts.n_bootstrap)
                .map(|_| (0..dj.len()).map(|_| dj[rng.random_range(0..dj.len())]).sum::<f64>() / dj.len() as f64)
                .collect();
            means.sort_by(f64::total_cmp);
            (percentile(&means, 0.025), percentile(&means, 0.975))
        } else {
            dj.sort_by(f64::total_cmp);
            (percentile(&dj, 0.025), percentile(&dj, 0.975))
        };
        raw.push((mean, lo, hi));
    }
    let total: f64 = raw.iter().map(|r| r.0.max(0.0)).sum();
    let no_signal = total <= 0.0;
    let scale = if no_signal { 0.0 } else { 1.0 / total };
    let entries = raw
        .iter()
        .zip(names)
        .map(|(&(mean, lo, hi), name)| {
            let importance = mean.max(0.0) * scale;
            ImportanceEntry {
                name: name.clone(),
                importance,
                ci_low: (lo.max(0.0) * scale).min(importance),
                ci_high: (hi.max(0.0) * scale).max(importance),
                raw_drop: mean,
            }
        })
        .collect();
    Ok(ImportanceReport {
        entries,
        threshold: 1.0 / d as f64,
        base_auc,
        n_perm: opts.n_perm,
        no_signal,
    })
}

/// Names accepted by [`with_param`].
pub const TUNABLE_PARAMS: [&str; 11] = [
    "num_eigenvectors",
    "k_neighbours",
    "num_heads",
    "hidden_dim",
    "num_layers",
    "dropout",
    "learning_rate",
    "ff_multiplier",
    "max_epochs",
    "patience",
    "pca_variance",
];

/// Copy of `base` with one hyperparameter replaced.
pub fn with_param(base: &GtConfig, name: &str, value: f64) -> Result<GtConfig> {
    let int = || -> Result<usize> {
        if value >= 0.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(Error::InvalidArgument(format!("{name} needs a non-negative integer, got {value}")))
        }
    };
    let mut c = base.clone();
    match name {
        "num_eigenvectors" => c.num_eigenvectors = int()?,
        "k_neighbours" => c.k_neighbours = int()?,
        "num_heads" => c.num_heads = int()?,
        "hidden_dim" => c.hidden_dim = int()?,
        "num_layers" => c.num_layers = int()?,
        "dropout" => c.dropout = value,
        "learning_rate" => c.learning_rate = value,
        "ff_multiplier" => c.ff_multiplier = int()?,
        "max_epochs" => c.max_epochs = int()?,
        "patience" => c.patience = int()?,
        "pca_variance" => c.pca_variance = value,
        _ => return Err(Error::InvalidArgument(format!("unknown hyperparameter '{name}'"))),
    }
    Ok(c)
}

pub fn get_param(c: &GtConfig, name: &str) -> Result<f64> {
    Ok(match name {
        "num_eigenvectors" => c.num_eigenvectors as f64,
        "k_neighbours" => c.k_neighbours as f64,
        "num_heads" => c.num_heads as f64,
        "hidden_dim" => c.hidden_dim as f64,
        "num_layers" => c.num_layers as f64,
        "dropout" => c.dropout,
        "learning_rate" => c.learning_rate,
        "ff_multiplier" => c.ff_multiplier as f64,
        "max_epochs" => c.max_epochs as f64,
        "patience" => c.patience as f64,
        "pca_variance" => c.pca_variance,
        _ => return Err(Error::InvalidArgument(format!("unknown hyperparameter '{name}'"))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepMetrics {
    pub auc: f64,
    pub moran_i: f64,
    pub geary_c: f64,
}

/// Trains and evaluates one configuration end to end.
pub trait SensitivityPipeline: Sync {
    fn evaluate(&self, config: &GtConfig) -> Result<SweepMetrics>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// `None` when the run failed; see `error`.
    pub metrics: Option<SweepMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub param: String,
    pub max_delta_auc: f64,
    pub max_delta_moran: f64,
    pub max_delta_geary: f64,
    pub points: Vec<SweepPoint>,
}

impl SensitivityRow {
    pub fn n_missing(&self) -> usize {
        self.points.iter().filter(|p| p.metrics.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub baseline: SweepMetrics,
    /// Sorted by `max_delta_auc`, largest first.
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "param,max_delta_auc,max_delta_moran,max_delta_geary,n_points,n_missing")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.param,
                r.max_delta_auc,
                r.max_delta_moran,
                r.max_delta_geary,
                r.points.len(),
                r.n_missing()
            )?;
        }
        Ok(())
    }
}

/// One-parameter-at-a-time sweep: every value is evaluated with all other
/// parameters at `base`; a failed run is recorded as missing.
pub fn oat_sensitivity<P: SensitivityPipeline>(
    base: &GtConfig,
    sweeps: &[(String, Vec<f64>)],
    pipeline: &P,
) -> Result<SensitivityReport> {
    let baseline = pipeline.evaluate(base)?;
    let mut rows = Vec::with_capacity(sweeps.len());
    for (param, values) in sweeps {
        get_param(base, param)?;
        let points: Vec<SweepPoint> = values
            .par_iter()
            .map(|&value| {
                let run = with_param(base, param, value).and_then(|cfg| pipeline.evaluate(&cfg));
                match run {
                    Ok(m) => SweepPoint {
                        value,
                        metrics: Some(m),
                        error: None,
                    },
                    Err(e) => SweepPoint {
                        value,
                        metrics: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
        let ok = points.iter().filter_map(|p| p.metrics);
        let (mut da, mut dm, mut dg) = (0.0f64, 0.0f64, 0.0f64);
        for m in ok {
            da = da.max((m.auc - baseline.auc).abs());
            dm = dm.max((m.moran_i - baseline.moran_i).abs());
            dg = dg.max((m.geary_c - baseline.geary_c).abs());
        }
        rows.push(SensitivityRow {
            param: param.clone(),
            max_delta_auc: da,
            max_delta_moran: dm,
            max_delta_geary: dg,
            points,
        });
    }
    rows.sort_by(|a, b| b.max_delta_auc.total_cmp(&a.max_delta_auc));
    Ok(SensitivityReport { baseline, rows })
}

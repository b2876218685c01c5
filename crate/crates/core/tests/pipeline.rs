mod common;

use common::rng;
use floodgt::explain::{oat_sensitivity, permutation_importance, ImportanceOptions, SensitivityPipeline};
use floodgt::ingest::{min_max_normalize, FactorMeta, FeatureTable, NormalizationParams};
use floodgt::mapping::{fit_variogram, GridSpec, VariogramFamily};
use floodgt::model::{GtConfig, GtModel};
use floodgt::pipeline::*;
use floodgt::sampling::{balanced_sample, DataSplit, SplitSpec};
use floodgt::scenario::{apply_scenario, run_scenario, GraphMode, Quantile, Rcp, ScenarioSpec};
use floodgt::spatial::{build_weights, morans_i, Inference};
use floodgt::synth::{generate, railway, SynthConfig};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Prepared {
    raw: FeatureTable,
    norm: FeatureTable,
    params: NormalizationParams,
    split: DataSplit,
}

fn prepare(n_per_class: usize, seed: u64) -> Prepared {
    let raw_pool = generate(&SynthConfig {
        n_per_class: n_per_class + n_per_class / 4,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = balanced_sample(
        &raw_pool,
        &SplitSpec {
            n_per_class,
            ratios: (0.7, 0.15, 0.15),
            seed,
        },
    )
    .unwrap();
    let raw = raw_pool.select_ids(&split.all_ids()).unwrap();
    let (norm, params) = min_max_normalize(&raw).unwrap();
    Prepared { raw, norm, params, split }
}

fn small_config() -> GtConfig {
    GtConfig {
        max_epochs: 120,
        patience: 25,
        ..GtConfig::default()
    }
}

/// Appends `leak` (a copy of the label) and `noise` columns.
fn with_leak_and_noise(t: &FeatureTable, seed: u64) -> FeatureTable {
    let mut r = rng(seed);
    let mut out = t.clone();
    out.factors.push(FactorMeta::continuous("leak"));
    out.factors.push(FactorMeta::continuous("noise"));
    for p in &mut out.points {
        p.features.push(f64::from(p.label.unwrap()));
        p.features.push(r.random_range(0.0..1.0));
    }
    out.validate().unwrap();
    out
}

#[test]
fn leaked_feature_ranks_first_and_noise_stays_below_threshold() {
    for seed in 0..5u64 {
        let p = prepare(150, 100 + seed);
        let table = with_leak_and_noise(&p.norm, seed);
        let cfg = GtConfig { seed, ..small_config() };
        let b = fit_baseline(&table, &p.split, &cfg).unwrap();
        let mut names = table.feature_names();
        names.extend((1..=cfg.num_eigenvectors).map(|i| format!("pe_{i}")));
        let opts = ImportanceOptions {
            n_perm: 30,
            seed,
            ..ImportanceOptions::default()
        };
        let rep = permutation_importance(&b.model, &b.input, &b.labels, &b.masks.test, &names, opts).unwrap();
        assert_eq!(rep.ranking()[0], "leak", "seed {seed}");
        let noise = rep.get("noise").unwrap();
        assert!(noise.importance < rep.threshold, "seed {seed}: {noise:?}");
        assert!(noise.ci_low <= 1e-3, "seed {seed}: {noise:?}");
        let total: f64 = rep.entries.iter().map(|e| e.importance).sum();
        assert!((total - 1.0).abs() < 1e-9);
        for e in &rep.entries {
            assert!(e.ci_low <= e.importance && e.importance <= e.ci_high);
        }
    }
}

#[test]
fn unread_column_has_zero_importance_and_constant_model_has_no_signal() {
    let p = prepare(60, 3);
    let cfg = GtConfig {
        max_epochs: 10,
        ..small_config()
    };
    let mut b = fit_baseline(&p.norm, &p.split, &cfg).unwrap();
    // sever the input projection from column 2
    b.model.params.input_w.row_mut(2).fill(0.0);
    let mut names = p.norm.feature_names();
    names.extend((1..=cfg.num_eigenvectors).map(|i| format!("pe_{i}")));
    let opts = ImportanceOptions {
        n_perm: 10,
        ..ImportanceOptions::default()
    };
    let rep = permutation_importance(&b.model, &b.input, &b.labels, &b.masks.test, &names, opts).unwrap();
    assert_eq!(rep.entries[2].raw_drop, 0.0);
    assert_eq!(rep.entries[2].importance, 0.0);

    // zero classifier weights: output is constant
    let mut flat = b.model.clone();
    flat.params.cls_w.fill(0.0);
    let rep = permutation_importance(&flat, &b.input, &b.labels, &b.masks.test, &names, opts).unwrap();
    assert!(rep.no_signal);
    assert!(rep.entries.iter().all(|e| e.importance == 0.0));
}

#[test]
fn importance_is_invariant_to_column_order() {
    let p = prepare(60, 4);
    let cfg = GtConfig {
        max_epochs: 15,
        ..small_config()
    };
    let b = fit_baseline(&p.norm, &p.split, &cfg).unwrap();
    let d = b.input.input_dim();
    let mut names = p.norm.feature_names();
    names.extend((1..=cfg.num_eigenvectors).map(|i| format!("pe_{i}")));
    let opts = ImportanceOptions {
        n_perm: 8,
        ..ImportanceOptions::default()
    };
    let rep = permutation_importance(&b.model, &b.input, &b.labels, &b.masks.test, &names, opts).unwrap();

    let perm: Vec<usize> = (0..d).rev().collect();
    let mut input = b.input.clone();
    let mut model = b.model.clone();
    for (new, &old) in perm.iter().enumerate() {
        input.x.set_column(new, &b.input.x.column(old));
        model.params.input_w.set_row(new, &b.model.params.input_w.row(old));
    }
    let names_r: Vec<String> = perm.iter().map(|&i| names[i].clone()).collect();
    let rep_r = permutation_importance(&model, &input, &b.labels, &b.masks.test, &names_r, opts).unwrap();
    for e in &rep.entries {
        let f = rep_r.get(&e.name).unwrap();
        assert!((e.importance - f.importance).abs() < 1e-9, "{}", e.name);
    }
}

#[test]
fn identity_scenario_reproduces_baseline_map() {
    let p = prepare(120, 5);
    let cfg = GtConfig {
        max_epochs: 40,
        ..small_config()
    };
    let b = fit_baseline(&p.norm, &p.split, &cfg).unwrap();
    let map_cfg = MapConfig {
        cell_size: 1000.0,
        ..MapConfig::default()
    };
    let pred = predict_with_uncertainty(&b.input, &b.model, 30, 8).unwrap();
    let breaks = baseline_breaks(&pred.mean).unwrap();
    let base = map_predictions(pred, &coords_of(&p.norm), &breaks, &map_cfg).unwrap();

    let spec = ScenarioSpec::identity(&p.raw, Rcp::Rcp45, Quantile::Q50).unwrap();
    let scen = apply_scenario(&p.norm, &spec, &p.params).unwrap();
    let track = railway(&SynthConfig::default());
    for mode in [GraphMode::Rebuild, GraphMode::Frozen] {
        let run = run_scenario(&b.model, &b.bundle, &scen, &spec, mode, &breaks, &map_cfg, 30, 8, Some(&track)).unwrap();
        for (a, c) in run.map.areas.percentages.iter().zip(&base.areas.percentages) {
            assert!((a - c).abs() <= 0.5);
        }
        assert!(run.map.uncertainty.raster.values.iter().all(|&v| (0.0..=0.5).contains(&v)));
        let sum: f64 = run.map.areas.percentages.iter().sum();
        assert!((sum - 100.0).abs() < 1e-9);
        let e = run.exposure.unwrap();
        let total = e.lengths.iter().sum::<f64>() + e.nodata_length + e.outside_length;
        assert!((total - e.total_length).abs() <= 1e-9 * e.total_length);
        let again = run_scenario(&b.model, &b.bundle, &scen, &spec, mode, &breaks, &map_cfg, 30, 8, None).unwrap();
        assert_eq!(again.map, run.map);
    }
}

#[test]
fn zero_learning_rate_sweep_measures_the_untrained_model() {
    let p = prepare(80, 6);
    let base = GtConfig {
        max_epochs: 30,
        ..small_config()
    };
    let pipe = TablePipeline {
        sampled: p.norm.clone(),
        split: p.split.clone(),
        map: MapConfig {
            cell_size: 2000.0,
            ..MapConfig::default()
        },
        threshold_m: 5000.0,
    };
    let sweeps = vec![
        ("learning_rate".to_string(), vec![0.0]),
        ("num_layers".to_string(), vec![base.num_layers as f64]),
    ];
    let rep = oat_sensitivity(&base, &sweeps, &pipe).unwrap();
    let b = fit_baseline(&p.norm, &p.split, &base).unwrap();
    let untrained = Baseline {
        model: GtModel::new(base.clone(), b.input.input_dim()).unwrap(),
        ..b.clone()
    };
    let want = (rep.baseline.auc - untrained.test_metrics(0.5).unwrap().auc_roc).abs();
    let lr = rep.rows.iter().find(|r| r.param == "learning_rate").unwrap();
    assert_eq!(lr.max_delta_auc, want);
    let same = rep.rows.iter().find(|r| r.param == "num_layers").unwrap();
    assert_eq!((same.max_delta_auc, same.max_delta_moran, same.max_delta_geary), (0.0, 0.0, 0.0));
    assert_eq!(pipe.evaluate(&base).unwrap(), rep.baseline);
}

#[test]
fn variogram_recovers_known_range() {
    // Gaussian field with spherical covariance (range 1000 m, sill 1)
    for seed in 0..3 {
        let mut r = rng(40 + seed);
        let n = 500;
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (r.random_range(0.0..4000.0), r.random_range(0.0..4000.0))).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let h = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
            let t = h / 1000.0;
            let c = if t >= 1.0 { 0.0 } else { 1.0 - 1.5 * t + 0.5 * t.powi(3) };
            c + if i == j { 1e-9 } else { 0.0 }
        });
        let l = cov.cholesky().unwrap().l();
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let field = l * nalgebra::DVector::from_vec(z);
        let data: Vec<(f64, f64, f64)> = (0..n).map(|i| (pts[i].0, pts[i].1, field[i])).collect();
        let m = fit_variogram(&data, 15, VariogramFamily::Spherical).unwrap();
        assert!((m.range - 1000.0).abs() <= 300.0, "seed {seed}: {m:?}");
    }
}

#[test]
fn permutation_p_values_are_calibrated_for_iid_fields() {
    let mut r = rng(77);
    let coords: Vec<(f64, f64)> = (0..80).map(|_| (r.random_range(0.0..5000.0), r.random_range(0.0..5000.0))).collect();
    let w = build_weights(&coords, 1200.0).unwrap();
    let mut above = 0;
    for trial in 0..100 {
        let y: Vec<f64> = (0..80).map(|_| r.random_range(0.0..1.0)).collect();
        let m = morans_i(&y, &w, Inference::Permutation { n_perm: 199, seed: trial }).unwrap();
        if m.result.p_value > 0.01 {
            above += 1;
        }
    }
    assert!(above >= 95, "{above} of 100");
}

#[test]
fn end_to_end_synthetic_watershed() {
    let p = prepare(400, 7);
    let b = fit_baseline(&p.norm, &p.split, &GtConfig::default()).unwrap();
    let m = b.test_metrics(0.5).unwrap();
    assert!(m.auc_roc >= 0.95, "{m:?}");
    let pred = predict_with_uncertainty(&b.input, &b.model, 100, 1).unwrap();
    assert!(pred.std.iter().all(|&s| s <= 0.5));
    let coords = coords_of(&p.norm);
    let grid = GridSpec::covering(&coords, 500.0).unwrap();
    let field = krige_field(&coords, &pred.mean, grid, &MapConfig::default(), (0.0, 1.0)).unwrap();
    let (moran, geary) = raster_autocorrelation(&field.raster, 2000.0).unwrap();
    assert!(moran.statistic > moran.expected && geary.statistic < 1.0);

    // same values scattered over the sample locations at random
    let mut shuffled = pred.mean.clone();
    shuffled.shuffle(&mut rng(99));
    let noise = krige_field(&coords, &shuffled, grid, &MapConfig::default(), (0.0, 1.0)).unwrap();
    let (moran_shuffled, _) = raster_autocorrelation(&noise.raster, 2000.0).unwrap();
    assert!(moran.statistic > moran_shuffled.statistic, "{moran:?} vs {moran_shuffled:?}");
}

//! Synthetic watershed: flooded points form a Gaussian band around a
//! meandering channel, dry points lie on the surrounding slopes, and the
//! conditioning factors follow from terrain trends plus noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FactorMeta, FeatureTable, PointRecord};
use crate::rng::derive_seed;
use crate::scenario::{Quantile, Rcp, ScenarioFile, ScenarioSpec, TrackGeometry, LULC, PRECIPITATION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub width_m: f64,
    pub height_m: f64,
    /// Standard deviation of the flooded band's distance to the channel.
    pub flood_band_m: f64,
    /// Dry points keep at least this distance to the channel.
    pub dry_min_m: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 500,
            width_m: 40_000.0,
            height_m: 30_000.0,
            flood_band_m: 900.0,
            dry_min_m: 2_500.0,
            seed: 7,
        }
    }
}

pub fn schema() -> Vec<FactorMeta> {
    vec![
        FactorMeta::continuous("elevation"),
        FactorMeta::continuous("slope"),
        FactorMeta::continuous("dist_river"),
        FactorMeta::continuous("twi"),
        FactorMeta::continuous(PRECIPITATION),
        FactorMeta::categorical(LULC),
        FactorMeta::continuous("noise_a"),
        FactorMeta::continuous("noise_b"),
    ]
}

impl SynthConfig {
    fn channel_y(&self, x: f64) -> f64 {
        0.5 * self.height_m + 0.15 * self.height_m * (2.0 * std::f64::consts::PI * x / self.width_m).sin()
    }

    /// Vertical offset to the channel; a cheap stand-in for the distance.
    fn channel_offset(&self, x: f64, y: f64) -> f64 {
        (y - self.channel_y(x)).abs()
    }
}

/// Labelled point table with `n_per_class` points per class.
pub fn generate(cfg: &SynthConfig) -> Result<FeatureTable> {
    if cfg.n_per_class == 0 || !(cfg.width_m > 0.0 && cfg.height_m > 0.0) {
        return Err(Error::InvalidArgument("empty synthetic domain".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let band = Normal::new(0.0, cfg.flood_band_m).expect("positive sd");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut points = Vec::with_capacity(2 * cfg.n_per_class);
    let mut id = 1i64;
    for label in [1u8, 0u8] {
        let mut made = 0;
        while made < cfg.n_per_class {
            let x = rng.random_range(0.0..cfg.width_m);
            let y = if label == 1 {
                cfg.channel_y(x) + band.sample(&mut rng)
            } else {
                rng.random_range(0.0..cfg.height_m)
            };
            if !(0.0..cfg.height_m).contains(&y) {
                continue;
            }
            let d = cfg.channel_offset(x, y);
            if label == 0 && d < cfg.dry_min_m {
                continue;
            }
            let dk = d / 1000.0;
            let elevation = 20.0 + 3.0 * x / 1000.0 + 14.0 * dk + 4.0 * unit.sample(&mut rng);
            let slope = (1.0 + 1.6 * dk + 1.5 * unit.sample(&mut rng)).max(0.05);
            let dist_river = (d + 150.0 * unit.sample(&mut rng)).max(0.0);
            let twi = 14.0 - 1.1 * dk.min(8.0) + 0.8 * unit.sample(&mut rng);
            let precipitation = (650.0 + 0.9 * elevation + 6.0 * y / 1000.0 + 25.0 * unit.sample(&mut rng)).max(50.0);
            let urban_p = if label == 1 { 0.45 } else { 0.15 };
            let lulc = if rng.random_bool(urban_p) {
                1.0
            } else {
                f64::from(rng.random_range(2u8..=5))
            };
            let noise_a = unit.sample(&mut rng);
            let noise_b = rng.random_range(0.0..1.0);
            points.push(PointRecord {
                id,
                x: (x * 100.0).round() / 100.0,
                y: (y * 100.0).round() / 100.0,
                features: vec![elevation, slope, dist_river, twi, precipitation, lulc, noise_a, noise_b],
                label: Some(label),
            });
            id += 1;
            made += 1;
        }
    }
    FeatureTable::new(points, schema(), "synthetic, projected meters")
}

/// A railway that follows the lower valley and crosses the channel twice.
pub fn railway(cfg: &SynthConfig) -> TrackGeometry {
    let steps = 40;
    let line = (0..=steps)
        .map(|i| {
            let x = 0.02 * cfg.width_m + 0.96 * cfg.width_m * i as f64 / steps as f64;
            let y = 0.42 * cfg.height_m + 0.2 * cfg.height_m * (2.0 * std::f64::consts::PI * x / cfg.width_m + 0.6).sin();
            (x, y)
        })
        .collect();
    let spur = vec![(0.6 * cfg.width_m, 0.1 * cfg.height_m), (0.7 * cfg.width_m, 0.9 * cfg.height_m)];
    TrackGeometry::new(vec![line, spur]).expect("valid synthetic track")
}

fn precipitation_factor(rcp: Rcp, q: Quantile) -> f64 {
    let base = match rcp {
        Rcp::Rcp26 => 1.0,
        Rcp::Rcp45 => 1.05,
        Rcp::Rcp85 => 1.12,
    };
    let spread = match q {
        Quantile::Q05 => 0.8,
        Quantile::Q50 => 1.0,
        Quantile::Q95 => 1.55,
    };
    base * spread
}

/// Scenario for the synthetic table: scaled precipitation and partial
/// urbanization of the land cover.
pub fn scenario(raw: &FeatureTable, rcp: Rcp, q: Quantile, seed: u64) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::identity(raw, rcp, q)?;
    let factor = precipitation_factor(rcp, q);
    let urbanize = match rcp {
        Rcp::Rcp26 => 0.03,
        Rcp::Rcp45 => 0.06,
        Rcp::Rcp85 => 0.1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, (rcp as u64) * 3 + q as u64));
    let mut ids: Vec<i64> = spec.precipitation.keys().copied().collect();
    ids.sort_unstable();
    for id in ids {
        *spec.precipitation.get_mut(&id).expect("id present") *= factor;
        if rng.random_bool(urbanize) {
            spec.lulc.insert(id, 1.0);
        }
    }
    spec.note = format!("synthetic {} {}", rcp.label(), q.label());
    Ok(spec)
}

/// Writes `features.csv`, `track.geojson` and one scenario JSON plus its two
/// replacement CSVs per RCP and quantile into `dir`.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table = generate(cfg)?;
    table.write_csv(&dir.join("features.csv"))?;
    let track = railway(cfg);
    let track_path = dir.join("track.geojson");
    std::fs::write(&track_path, serde_json::to_string_pretty(&track.to_geojson())?).map_err(|e| Error::io(&track_path, e))?;
    let mut scenario_files = Vec::new();
    for rcp in [Rcp::Rcp26, Rcp::Rcp45, Rcp::Rcp85] {
        for q in [Quantile::Q05, Quantile::Q50, Quantile::Q95] {
            let spec = scenario(&table, rcp, q, cfg.seed)?;
            let stem = format!("scenario_{}_{}", rcp.label().replace('.', "").to_lowercase(), q.label().to_lowercase());
            let write_values = |name: &str, map: &std::collections::HashMap<i64, f64>| -> Result<()> {
                let mut rows: Vec<(i64, f64)> = map.iter().map(|(k, v)| (*k, *v)).collect();
                rows.sort_by_key(|r| r.0);
                let mut s = String::from("id,value\n");
                for (id, v) in rows {
                    s.push_str(&format!("{id},{v}\n"));
                }
                let p = dir.join(name);
                std::fs::write(&p, s).map_err(|e| Error::io(&p, e))
            };
            let precip = format!("{stem}_precipitation.csv");
            let lulc = format!("{stem}_lulc.csv");
            write_values(&precip, &spec.precipitation)?;
            write_values(&lulc, &spec.lulc)?;
            let file = ScenarioFile {
                rcp,
                quantile: q,
                precipitation_csv: precip,
                lulc_csv: lulc,
                note: spec.note.clone(),
            };
            let json = format!("{stem}.json");
            let p = dir.join(&json);
            std::fs::write(&p, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&p, e))?;
            scenario_files.push(json);
        }
    }
    Ok(scenario_files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let cfg = SynthConfig {
            n_per_class: 50,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        let pos = a.points.iter().filter(|p| p.label == Some(1)).count();
        assert_eq!((a.n(), pos), (100, 50));
        let j = a.feature_index(PRECIPITATION).unwrap();
        assert!(a.points.iter().all(|p| p.features[j] > 0.0));
    }

    #[test]
    fn wet_quantile_exceeds_baseline() {
        let cfg = SynthConfig {
            n_per_class: 20,
            ..SynthConfig::default()
        };
        let t = generate(&cfg).unwrap();
        let s = scenario(&t, Rcp::Rcp85, Quantile::Q95, 1).unwrap();
        let j = t.feature_index(PRECIPITATION).unwrap();
        for p in &t.points {
            assert!(s.precipitation[&p.id] > p.features[j]);
        }
    }
}

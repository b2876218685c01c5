use std::path::{Path, PathBuf};

use floodgt::explain::{ImportanceOptions, TUNABLE_PARAMS};
use floodgt::ingest::FactorMeta;
use floodgt::model::GtConfig;
use floodgt::pipeline::MapConfig;
use floodgt::sampling::SplitSpec;
use floodgt::scenario::GraphMode;
use floodgt::spatial::{Inference, DEFAULT_THRESHOLD_M};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub features: PathBuf,
    #[serde(default)]
    pub track: Option<PathBuf>,
    #[serde(default)]
    pub scenarios: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollinearityConfig {
    pub vif_max: f64,
    /// Never dropped, whatever their VIF.
    pub keep: Vec<String>,
}

impl Default for CollinearityConfig {
    fn default() -> Self {
        CollinearityConfig {
            vif_max: 10.0,
            keep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyConfig {
    pub passes: usize,
    pub seed: u64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig { passes: 100, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    /// Feature columns, in CSV order.
    pub factors: Vec<FactorMeta>,
    #[serde(default)]
    pub collinearity: CollinearityConfig,
    #[serde(default)]
    pub sampling: SplitSpec,
    #[serde(default)]
    pub model: GtConfig,
    #[serde(default = "default_threshold")]
    pub weights_threshold_m: f64,
    #[serde(default = "default_inference")]
    pub autocorr: Inference,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub importance: ImportanceOptions,
    #[serde(default)]
    pub sensitivity: Vec<Sweep>,
    #[serde(default)]
    pub graph_mode: GraphMode,
    #[serde(default = "default_decision_threshold")]
    pub decision_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD_M
}

fn default_inference() -> Inference {
    Inference::Permutation { n_perm: 999, seed: 1 }
}

fn default_decision_threshold() -> f64 {
    0.5
}

/// A parsed configuration plus the digest of its canonical serialization.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
}

impl RunConfig {
    /// Parses, resolves relative paths against the config's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        // hashed as written, so moving a run directory keeps its provenance
        let hash = config.hash();
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.validate()?;
        Ok(LoadedConfig { config, hash })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.features);
        fix(&mut self.paths.output_dir);
        if let Some(t) = &mut self.paths.track {
            fix(t);
        }
        self.paths.scenarios.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut inputs = vec![&self.paths.features];
        inputs.extend(self.paths.track.as_ref());
        inputs.extend(&self.paths.scenarios);
        for p in inputs {
            if !p.is_file() {
                return Err(CliError::config(format!("input file does not exist: {}", p.display())));
            }
        }
        if self.factors.is_empty() {
            return Err(CliError::config("at least one factor is required"));
        }
        let bad = |e: floodgt::Error| CliError::config(e.to_string());
        self.model.validate().map_err(bad)?;
        self.sampling.validate().map_err(bad)?;
        if !self.map.krige.dense && self.map.krige.neighbors < 3 {
            return Err(CliError::config("map.krige.neighbors must be at least 3"));
        }
        if !(self.map.cell_size > 0.0) || self.map.n_bins == 0 {
            return Err(CliError::config("map.cell_size and map.n_bins must be positive"));
        }
        if let Some(g) = self.map.grid {
            g.validate().map_err(bad)?;
        }
        if !(self.weights_threshold_m > 0.0) {
            return Err(CliError::config("weights_threshold_m must be positive"));
        }
        if !(self.collinearity.vif_max >= 1.0) {
            return Err(CliError::config("collinearity.vif_max must be at least 1"));
        }
        if self.uncertainty.passes == 0 {
            return Err(CliError::config("uncertainty.passes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(CliError::config("decision_threshold must lie in [0, 1]"));
        }
        for s in &self.sensitivity {
            if !TUNABLE_PARAMS.contains(&s.param.as_str()) {
                return Err(CliError::config(format!(
                    "unknown sweep parameter '{}'; expected one of {TUNABLE_PARAMS:?}",
                    s.param
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Machine-readable description of the config file.
pub fn schema() -> serde_json::Value {
    let field = |name: &str, ty: &str, required: bool, doc: &str| json!({"name": name, "type": ty, "required": required, "description": doc});
    json!({
        "format": "json",
        "fields": [
            field("paths.features", "path", true, "point CSV: id,x,y,<factors...>[,label]"),
            field("paths.track", "path", false, "GeoJSON LineString/MultiLineString in raster CRS metres"),
            field("paths.scenarios", "path[]", false, "scenario JSON files (rcp, quantile, precipitation_csv, lulc_csv)"),
            field("paths.output_dir", "path", true, "directory receiving every artifact"),
            field("factors", "[{name, kind: continuous|categorical}]", true, "feature columns in CSV order"),
            field("collinearity.vif_max", "number", false, "VIF ceiling for dropped features (default 10)"),
            field("collinearity.keep", "string[]", false, "features never dropped"),
            field("sampling", "{n_per_class, ratios: [train, val, test], seed}", false, "balanced sample and split"),
            field("model", "object", false, "graph transformer hyperparameters and training seed"),
            field("weights_threshold_m", "number", false, "distance band for spatial weights (default 2000)"),
            field("autocorr", "{method: analytical_normal} | {method: permutation, n_perm, seed}", false, "autocorrelation inference"),
            field("map", "{cell_size, n_bins, family, krige: {neighbors, dense}, grid}", false, "variogram and kriging settings"),
            field("uncertainty", "{passes, seed}", false, "MC dropout passes"),
            field("importance", "{n_perm, n_bootstrap, seed}", false, "permutation importance"),
            field("sensitivity", "[{param, values}]", false, "one-at-a-time sweeps"),
            field("graph_mode", "rebuild|frozen", false, "scenario graph handling"),
            field("decision_threshold", "number", false, "probability cut for confusion metrics (default 0.5)"),
        ],
        "tunable_params": TUNABLE_PARAMS,
        "defaults": {
            "model": GtConfig::default(),
            "sampling": SplitSpec::default(),
            "map": MapConfig::default(),
            "uncertainty": UncertaintyConfig::default(),
            "importance": ImportanceOptions::default(),
            "autocorr": default_inference(),
        }
    })
}

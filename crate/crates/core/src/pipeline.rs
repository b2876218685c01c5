//! Glue between the stages: graph building from a feature table, baseline
//! training, uncertainty-aware prediction and rasterization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{SensitivityPipeline, SweepMetrics};
use crate::graph::{build_knn_graph, fit_pca, Graph, PcaModel};
use crate::ingest::FeatureTable;
use crate::mapping::{
    class_area_report, classify, fit_variogram, jenks_breaks, ordinary_krige, ClassAreas, ClassBreaks, GridSpec,
    KrigeOptions, RasterGrid, VariogramFamily, VariogramModel,
};
use crate::metrics::MetricReport;
use crate::model::{mc_dropout_predict, train, GtConfig, GtModel, Mat, McPrediction, ModelInput, NodeMasks, TrainHistory};
use crate::pe::{laplacian_pe, LaplacianPe};
use crate::sampling::DataSplit;
use crate::spatial::{build_weights, gearys_c, morans_i, AutocorrResult, Inference};

/// Everything derived from features alone.
#[derive(Debug, Clone)]
pub struct GraphBundle {
    pub pca: PcaModel,
    pub graph: Graph,
    pub pe: LaplacianPe,
}

impl GraphBundle {
    pub fn input(&self, features: &Mat) -> Result<ModelInput> {
        ModelInput::new(&self.graph, features, &self.pe)
    }
}

/// PCA to `pca_variance`, cosine k-NN graph and Laplacian PE.
pub fn build_graph_bundle(features: &Mat, config: &GtConfig) -> Result<GraphBundle> {
    let pca = fit_pca(features, config.pca_variance)?;
    let z = pca.transform(features);
    let graph = build_knn_graph(&z, config.k_neighbours)?;
    let pe = laplacian_pe(&graph, config.num_eigenvectors)?;
    Ok(GraphBundle { pca, graph, pe })
}

/// Labels of a fully labelled table.
pub fn labels_of(table: &FeatureTable) -> Result<Vec<u8>> {
    table
        .points
        .iter()
        .map(|p| {
            p.label
                .ok_or_else(|| Error::InvalidArgument(format!("point {} has no label", p.id)))
        })
        .collect()
}

pub fn node_ids(table: &FeatureTable) -> Vec<i64> {
    table.points.iter().map(|p| p.id).collect()
}

pub fn coords_of(table: &FeatureTable) -> Vec<(f64, f64)> {
    table.points.iter().map(|p| (p.x, p.y)).collect()
}

#[derive(Debug, Clone)]
pub struct Baseline {
    pub bundle: GraphBundle,
    pub input: ModelInput,
    pub labels: Vec<u8>,
    pub masks: NodeMasks,
    pub model: GtModel,
    pub history: TrainHistory,
}

/// Builds the graph over the sampled (normalized) table and trains the model.
pub fn fit_baseline(sampled: &FeatureTable, split: &DataSplit, config: &GtConfig) -> Result<Baseline> {
    let features = sampled.feature_matrix();
    let bundle = build_graph_bundle(&features, config)?;
    let input = bundle.input(&features)?;
    let labels = labels_of(sampled)?;
    let masks = NodeMasks::from_split(split, &node_ids(sampled))?;
    let (params, history) = train(&input, &labels, &masks, config)?;
    Ok(Baseline {
        bundle,
        input,
        labels,
        masks,
        model: GtModel {
            config: config.clone(),
            params,
        },
        history,
    })
}

impl Baseline {
    pub fn test_metrics(&self, threshold: f64) -> Result<MetricReport> {
        let probs = self.model.predict(&self.input)?;
        let p: Vec<f64> = self.masks.test.iter().map(|&i| probs[i]).collect();
        let y: Vec<u8> = self.masks.test.iter().map(|&i| self.labels[i]).collect();
        MetricReport::compute(&p, &y, threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub cell_size: f64,
    pub n_bins: usize,
    pub family: VariogramFamily,
    pub krige: KrigeOptions,
    /// Optional fixed grid; otherwise the grid covers the sample points.
    pub grid: Option<GridSpec>,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            cell_size: 500.0,
            n_bins: 15,
            family: VariogramFamily::Spherical,
            krige: KrigeOptions::default(),
            grid: None,
        }
    }
}

impl MapConfig {
    pub fn grid_for(&self, coords: &[(f64, f64)]) -> Result<GridSpec> {
        match self.grid {
            Some(g) => {
                g.validate()?;
                Ok(g)
            }
            None => GridSpec::covering(coords, self.cell_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigedField {
    pub raster: RasterGrid,
    pub variogram: VariogramModel,
    pub singular_cells: usize,
    pub clamped_cells: usize,
}

/// Fits a variogram to point values, kriges them onto `grid` and clamps the
/// result into `[lo, hi]`; kriging weights may be negative, so estimates can
/// overshoot the range of the inputs.
pub fn krige_field(
    coords: &[(f64, f64)],
    values: &[f64],
    grid: GridSpec,
    cfg: &MapConfig,
    (lo, hi): (f64, f64),
) -> Result<KrigedField> {
    if coords.len() != values.len() {
        return Err(Error::InvalidArgument("one value per coordinate is required".into()));
    }
    let pts: Vec<(f64, f64, f64)> = coords.iter().zip(values).map(|(&(x, y), &v)| (x, y, v)).collect();
    let variogram = fit_variogram(&pts, cfg.n_bins, cfg.family)?;
    let out = ordinary_krige(&pts, &variogram, grid, cfg.krige)?;
    let mut raster = out.raster;
    let mut clamped_cells = 0;
    for v in &mut raster.values {
        if *v == raster.nodata {
            continue;
        }
        let c = v.clamp(lo, hi);
        if c != *v {
            clamped_cells += 1;
            *v = c;
        }
    }
    Ok(KrigedField {
        raster,
        variogram,
        singular_cells: out.singular_cells,
        clamped_cells,
    })
}

/// Susceptibility and uncertainty rasters plus their classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusceptibilityMap {
    pub prediction: McPrediction,
    pub susceptibility: KrigedField,
    pub uncertainty: KrigedField,
    pub classes: RasterGrid,
    pub out_of_range: usize,
    pub areas: ClassAreas,
}

pub fn map_predictions(
    prediction: McPrediction,
    coords: &[(f64, f64)],
    breaks: &ClassBreaks,
    cfg: &MapConfig,
) -> Result<SusceptibilityMap> {
    let grid = cfg.grid_for(coords)?;
    let susceptibility = krige_field(coords, &prediction.mean, grid, cfg, (0.0, 1.0))?;
    let uncertainty = krige_field(coords, &prediction.std, grid, cfg, (0.0, 0.5))?;
    let classified = classify(&susceptibility.raster, breaks)?;
    let areas = class_area_report(&classified.raster, breaks.k())?;
    Ok(SusceptibilityMap {
        prediction,
        susceptibility,
        uncertainty,
        classes: classified.raster,
        out_of_range: classified.out_of_range,
        areas,
    })
}

/// Five natural-breaks classes of the point predictions, outer edges
/// widened to `[0, 1]`.
pub fn baseline_breaks(point_probs: &[f64]) -> Result<ClassBreaks> {
    Ok(jenks_breaks(point_probs, 5)?.with_unit_span())
}

pub fn predict_with_uncertainty(input: &ModelInput, model: &GtModel, passes: usize, seed: u64) -> Result<McPrediction> {
    mc_dropout_predict(input, model, passes, seed)
}

/// Moran's I and Geary's C (analytical inference) over the data cells of a
/// raster, with distance-band weights at `threshold_m`.
pub fn raster_autocorrelation(raster: &RasterGrid, threshold_m: f64) -> Result<(AutocorrResult, AutocorrResult)> {
    let cells = raster.valid_cells();
    let coords: Vec<(f64, f64)> = cells.iter().map(|c| (c.0, c.1)).collect();
    let values: Vec<f64> = cells.iter().map(|c| c.2).collect();
    let w = build_weights(&coords, threshold_m)?;
    let moran = morans_i(&values, &w, Inference::AnalyticalNormal)?.result;
    let geary = gearys_c(&values, &w, Inference::AnalyticalNormal)?;
    Ok((moran, geary))
}

/// Retrains on a fixed sample and split for each configuration; reports
/// test AUC and the autocorrelation of the kriged prediction field.
#[derive(Debug, Clone)]
pub struct TablePipeline {
    pub sampled: FeatureTable,
    pub split: DataSplit,
    pub map: MapConfig,
    pub threshold_m: f64,
}

impl SensitivityPipeline for TablePipeline {
    fn evaluate(&self, config: &GtConfig) -> Result<SweepMetrics> {
        let b = fit_baseline(&self.sampled, &self.split, config)?;
        let auc = b.test_metrics(0.5)?.auc_roc;
        let probs = b.model.predict(&b.input)?;
        let coords = coords_of(&self.sampled);
        let grid = self.map.grid_for(&coords)?;
        let field = krige_field(&coords, &probs, grid, &self.map, (0.0, 1.0))?;
        let (moran, geary) = raster_autocorrelation(&field.raster, self.threshold_m)?;
        Ok(SweepMetrics {
            auc,
            moran_i: moran.statistic,
            geary_c: geary.statistic,
        })
    }
}

//! One function per subcommand. Stages talk to each other only through the
//! artifact directory.

use std::path::Path;

use floodgt::explain::{oat_sensitivity, permutation_importance, ImportanceReport, SensitivityReport};
use floodgt::graph::{build_knn_graph, fit_pca, Graph, GraphHeader, PcaModel};
use floodgt::ingest::{
    compute_collinearity, filter_collinear, load_feature_table, min_max_normalize, read_feature_table, FactorMeta,
    FeatureTable, NormalizationParams,
};
use floodgt::mapping::{class_area_report, classify, ClassAreas, ClassBreaks, VariogramModel};
use floodgt::metrics::{MetricReport, TABLE_HEADER};
use floodgt::model::{mc_dropout_predict, train, GtModel, ModelInput, NodeMasks};
use floodgt::pe::{laplacian_pe, LaplacianPe};
use floodgt::pipeline::{
    baseline_breaks, krige_field, labels_of, node_ids, GraphBundle, TablePipeline,
};
use floodgt::sampling::{balanced_sample, DataSplit};
use floodgt::scenario::{
    apply_scenario, run_scenario, track_exposure, write_scenario_table, GraphMode, Quantile, Rcp, ScenarioSpec,
    TrackExposure, TrackGeometry,
};
use floodgt::spatial::{build_weights, gearys_c, morans_i, AutocorrResult};
use floodgt::synth::{self, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::artifacts::Store;
use crate::config::{CollinearityConfig, LoadedConfig, Paths, RunConfig, Sweep, UncertaintyConfig};
use crate::error::CliError;

pub mod names {
    pub const INGEST: &str = "ingest.json";
    pub const COLLINEARITY: &str = "collinearity.json";
    pub const FEATURES: &str = "features.csv";
    pub const SPLIT: &str = "split.json";
    pub const SAMPLED: &str = "sampled.csv";
    pub const NORMALIZATION: &str = "normalization.json";
    pub const GRAPH_TSV: &str = "graph.tsv";
    pub const GRAPH_HEADER: &str = "graph.json";
    pub const PCA: &str = "pca.json";
    pub const PE_JSON: &str = "pe.json";
    pub const PE_CSV: &str = "pe.csv";
    pub const MODEL: &str = "model.json";
    pub const HISTORY: &str = "history.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const METRICS: &str = "metrics.json";
    pub const TABLE2: &str = "table2.csv";
    pub const AUTOCORR: &str = "autocorr.json";
    pub const MORAN_SCATTER: &str = "moran_scatter.csv";
    pub const SUSCEPTIBILITY: &str = "susceptibility.asc";
    pub const UNCERTAINTY: &str = "uncertainty.asc";
    pub const VARIOGRAM: &str = "variogram.json";
    pub const BREAKS: &str = "breaks.json";
    pub const CLASSES: &str = "classes.asc";
    pub const CLASS_AREAS: &str = "class_areas.json";
    pub const EXPOSURE: &str = "exposure.json";
    pub const TABLE3: &str = "table3.csv";
    pub const IMPORTANCE_CSV: &str = "importance.csv";
    pub const IMPORTANCE_JSON: &str = "importance.json";
    pub const SENSITIVITY_CSV: &str = "sensitivity.csv";
    pub const SENSITIVITY_JSON: &str = "sensitivity.json";
    pub const SCENARIOS: &str = "scenarios.json";
    pub const TABLE4: &str = "table4.csv";
    pub const REPORT_DIR: &str = "report";
}

use names::*;

/// Seed recorded for stages that draw no random numbers.
const NO_SEED: u64 = 0;

fn store(cfg: &LoadedConfig, stage: &'static str) -> Result<Store, CliError> {
    Store::new(&cfg.config.paths.output_dir, &cfg.hash, stage)
}

#[derive(Debug, Serialize, Deserialize)]
struct IngestSummary {
    n_points: usize,
    factors: Vec<FactorMeta>,
    dropped: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitArtifact {
    split: DataSplit,
}

pub fn ingest(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let s = store(cfg, "ingest")?;
    let table = load_feature_table(&c.paths.features, &c.factors)?;
    let report = compute_collinearity(&table)?;
    let filtered = filter_collinear(&table, &report, c.collinearity.vif_max, &c.collinearity.keep)?;
    let kept = filtered.feature_names();
    let dropped = table.feature_names().into_iter().filter(|n| !kept.contains(n)).collect();
    s.write_json(COLLINEARITY, NO_SEED, &report)?;
    s.write_json(
        INGEST,
        NO_SEED,
        &IngestSummary {
            n_points: filtered.n(),
            factors: filtered.factors.clone(),
            dropped,
        },
    )?;
    let mut buf = Vec::new();
    filtered.write_csv_to(&mut buf)?;
    s.write_text(FEATURES, NO_SEED, &buf)
}

fn read_table(s: &Store, name: &str) -> Result<FeatureTable, CliError> {
    let summary: IngestSummary = s.read_json(INGEST)?;
    let text = s.read_text(name)?;
    Ok(read_feature_table(text.as_bytes(), &summary.factors, name.to_string())?)
}

pub fn sample(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let s = store(cfg, "sample")?;
    s.require(&[INGEST, FEATURES])?;
    let table = read_table(&s, FEATURES)?;
    let split = balanced_sample(&table, &c.sampling)?;
    let sampled = table.select_ids(&split.all_ids())?;
    let (norm, params) = min_max_normalize(&sampled)?;
    let seed = c.sampling.seed;
    s.write_json(SPLIT, seed, &SplitArtifact { split })?;
    s.write_json(NORMALIZATION, seed, &params)?;
    let mut buf = Vec::new();
    norm.write_csv_to(&mut buf)?;
    s.write_text(SAMPLED, seed, &buf)
}

fn read_split(s: &Store) -> Result<DataSplit, CliError> {
    Ok(s.read_json::<SplitArtifact>(SPLIT)?.split)
}

pub fn build_graph(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let s = store(cfg, "build-graph")?;
    s.require(&[INGEST, SAMPLED])?;
    let table = read_table(&s, SAMPLED)?;
    let features = table.feature_matrix();
    let pca = fit_pca(&features, c.model.pca_variance)?;
    let graph = build_knn_graph(&pca.transform(&features), c.model.k_neighbours)?;
    s.write_json(PCA, NO_SEED, &pca)?;
    s.write_json(
        GRAPH_HEADER,
        NO_SEED,
        &GraphHeader {
            n: graph.n,
            k: graph.k,
            node_ids: node_ids(&table),
        },
    )?;
    let mut buf = Vec::new();
    graph.write_tsv(&mut buf).map_err(|e| CliError::io(&s.path(GRAPH_TSV), e))?;
    s.write_text(GRAPH_TSV, NO_SEED, &buf)
}

fn read_graph(s: &Store) -> Result<Graph, CliError> {
    s.require(&[GRAPH_HEADER, GRAPH_TSV])?;
    let h: GraphHeader = s.read_json(GRAPH_HEADER)?;
    let text = s.read_text(GRAPH_TSV)?;
    Ok(Graph::read_tsv(text.as_bytes(), h.n, h.k)?)
}

pub fn pe(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let s = store(cfg, "pe")?;
    let graph = read_graph(&s)?;
    let h: GraphHeader = s.read_json(GRAPH_HEADER)?;
    let pe = laplacian_pe(&graph, c.model.num_eigenvectors)?;
    s.write_json(PE_JSON, NO_SEED, &pe)?;
    let mut buf = Vec::new();
    pe.write_csv(&h.node_ids, &mut buf).map_err(|e| CliError::io(&s.path(PE_CSV), e))?;
    s.write_text(PE_CSV, NO_SEED, &buf)
}

/// Sampled table, graph, PE and masks assembled into a model input.
struct Inputs {
    table: FeatureTable,
    input: ModelInput,
    labels: Vec<u8>,
    masks: NodeMasks,
    split: DataSplit,
}

fn read_inputs(s: &Store) -> Result<Inputs, CliError> {
    s.require(&[INGEST, SAMPLED, SPLIT, GRAPH_HEADER, GRAPH_TSV, PE_JSON])?;
    let table = read_table(s, SAMPLED)?;
    let split = read_split(s)?;
    let graph = read_graph(s)?;
    let pe: LaplacianPe = s.read_json(PE_JSON)?;
    let h: GraphHeader = s.read_json(GRAPH_HEADER)?;
    if h.node_ids != node_ids(&table) {
        return Err(CliError::Input("graph nodes do not match the sampled table; rerun build-graph".into()));
    }
    let input = ModelInput::new(&graph, &table.feature_matrix(), &pe)?;
    let labels = labels_of(&table)?;
    let masks = NodeMasks::from_split(&split, &h.node_ids)?;
    Ok(Inputs {
        table,
        input,
        labels,
        masks,
        split,
    })
}

pub fn train_stage(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let s = store(cfg, "train")?;
    let inp = read_inputs(&s)?;
    let (params, history) = train(&inp.input, &inp.labels, &inp.masks, &c.model)?;
    let model = GtModel {
        config: c.model.clone(),
        params,
    };
    s.write_json(MODEL, c.model.seed, &model)?;
    let mut buf = Vec::new();
    history.write_csv(&mut buf).map_err(|e| CliError::io(&s.path(HISTORY), e))?;
    s.write_text(HISTORY, c.model.seed, &buf)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRow {
    id: i64,
    x: f64,
    y: f64,
    label: u8,
    split: String,
    /// Deterministic (dropout off) probability.
    prob: f64,
    mc_mean: f64,
    mc_std: f64,
}

fn split_name(split: &DataSplit, id: i64) -> &'static str {
    if split.train.contains(&id) {
        "train"
    } else if split.val.contains(&id) {
        "val"
    } else {
        "test"
    }
}

pub fn predict(cfg: &LoadedConfig) -> Result<(), CliError> {
    let UncertaintyConfig { passes, seed } = cfg.config.uncertainty;
    let s = store(cfg, "predict")?;
    let inp = read_inputs(&s)?;
    let model: GtModel = s.read_json(MODEL)?;
    let prob = model.predict(&inp.input)?;
    let mc = mc_dropout_predict(&inp.input, &model, passes, seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, p) in inp.table.points.iter().enumerate() {
        w.serialize(PredictionRow {
            id: p.id,
            x: p.x,
            y: p.y,
            label: inp.labels[i],
            split: split_name(&inp.split, p.id).into(),
            prob: prob[i],
            mc_mean: mc.mean[i],
            mc_std: mc.std[i],
        })?;
    }
    let buf = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
    s.write_text(PREDICTIONS, seed, &buf)
}

fn read_predictions(s: &Store) -> Result<Vec<PredictionRow>, CliError> {
    let text = s.read_text(PREDICTIONS)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows = r.deserialize().collect::<Result<Vec<PredictionRow>, _>>()?;
    if rows.is_empty() {
        return Err(CliError::Input("predictions.csv has no rows".into()));
    }
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsArtifact {
    train: MetricReport,
    val: MetricReport,
    test: MetricReport,
}

pub fn metrics(cfg: &LoadedConfig) -> Result<(), CliError> {
    let s = store(cfg, "metrics")?;
    let rows = read_predictions(&s)?;
    let t = cfg.config.decision_threshold;
    let of = |name: &str| -> Result<MetricReport, CliError> {
        let sel: Vec<&PredictionRow> = rows.iter().filter(|r| r.split == name).collect();
        let p: Vec<f64> = sel.iter().map(|r| r.prob).collect();
        let y: Vec<u8> = sel.iter().map(|r| r.label).collect();
        Ok(MetricReport::compute(&p, &y, t)?)
    };
    let m = MetricsArtifact {
        train: of("train")?,
        val: of("val")?,
        test: of("test")?,
    };
    s.write_text(TABLE2, NO_SEED, format!("{TABLE_HEADER}\n{}\n", m.test.table_row("GT")).as_bytes())?;
    s.write_json(METRICS, NO_SEED, &m)
}

#[derive(Debug, Serialize, Deserialize)]
struct AutocorrArtifact {
    field: String,
    n: usize,
    threshold_m: f64,
    isolated: usize,
    moran: AutocorrResult,
    geary: AutocorrResult,
}

fn inference_seed(c: &RunConfig) -> u64 {
    match c.autocorr {
        floodgt::spatial::Inference::Permutation { seed, .. } => seed,
        floodgt::spatial::Inference::AnalyticalNormal => NO_SEED,
    }
}

pub fn autocorr(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let s = store(cfg, "autocorr")?;
    let rows = read_predictions(&s)?;
    let coords: Vec<(f64, f64)> = rows.iter().map(|r| (r.x, r.y)).collect();
    let values: Vec<f64> = rows.iter().map(|r| r.mc_mean).collect();
    let w = build_weights(&coords, c.weights_threshold_m)?;
    let moran = morans_i(&values, &w, c.autocorr)?;
    let geary = gearys_c(&values, &w, c.autocorr)?;
    let seed = inference_seed(c);
    let ids: Vec<i64> = rows.iter().map(|r| r.id).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let mut buf = Vec::new();
    moran
        .scatter
        .write_csv(&ids, Some(&labels), &mut buf)
        .map_err(|e| CliError::io(&s.path(MORAN_SCATTER), e))?;
    s.write_text(MORAN_SCATTER, seed, &buf)?;
    s.write_json(
        AUTOCORR,
        seed,
        &AutocorrArtifact {
            field: "mc_mean".into(),
            n: values.len(),
            threshold_m: c.weights_threshold_m,
            isolated: w.isolated.len(),
            moran: moran.result,
            geary,
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldSummary {
    variogram: VariogramModel,
    singular_cells: usize,
    clamped_cells: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct VariogramArtifact {
    susceptibility: FieldSummary,
    uncertainty: FieldSummary,
}

pub fn krige(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let s = store(cfg, "krige")?;
    let rows = read_predictions(&s)?;
    let coords: Vec<(f64, f64)> = rows.iter().map(|r| (r.x, r.y)).collect();
    let grid = c.map.grid_for(&coords)?;
    let mean: Vec<f64> = rows.iter().map(|r| r.mc_mean).collect();
    let std: Vec<f64> = rows.iter().map(|r| r.mc_std).collect();
    let sus = krige_field(&coords, &mean, grid, &c.map, (0.0, 1.0))?;
    let unc = krige_field(&coords, &std, grid, &c.map, (0.0, 0.5))?;
    s.write_raster(SUSCEPTIBILITY, NO_SEED, &sus.raster)?;
    s.write_raster(UNCERTAINTY, NO_SEED, &unc.raster)?;
    let summary = |f: floodgt::pipeline::KrigedField| FieldSummary {
        variogram: f.variogram,
        singular_cells: f.singular_cells,
        clamped_cells: f.clamped_cells,
    };
    s.write_json(
        VARIOGRAM,
        NO_SEED,
        &VariogramArtifact {
            susceptibility: summary(sus),
            uncertainty: summary(unc),
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassAreaArtifact {
    areas: ClassAreas,
    out_of_range: usize,
    class_names: Vec<String>,
}

pub fn classify_stage(cfg: &LoadedConfig) -> Result<(), CliError> {
    let s = store(cfg, "classify")?;
    let rows = read_predictions(&s)?;
    let raster = s.read_raster(SUSCEPTIBILITY)?;
    let mean: Vec<f64> = rows.iter().map(|r| r.mc_mean).collect();
    let breaks = baseline_breaks(&mean)?;
    let classified = classify(&raster, &breaks)?;
    let areas = class_area_report(&classified.raster, breaks.k())?;
    s.write_json(BREAKS, NO_SEED, &breaks)?;
    s.write_raster(CLASSES, NO_SEED, &classified.raster)?;
    s.write_json(
        CLASS_AREAS,
        NO_SEED,
        &ClassAreaArtifact {
            areas,
            out_of_range: classified.out_of_range,
            class_names: floodgt::mapping::CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        },
    )
}

fn track_of(paths: &Paths) -> Result<TrackGeometry, CliError> {
    let p = paths
        .track
        .as_ref()
        .ok_or_else(|| CliError::config("paths.track is not set"))?;
    Ok(TrackGeometry::load(p)?)
}

pub fn exposure(cfg: &LoadedConfig) -> Result<(), CliError> {
    let s = store(cfg, "exposure")?;
    let track = track_of(&cfg.config.paths)?;
    let classes = s.read_raster(CLASSES)?;
    let breaks: ClassBreaks = s.read_json(BREAKS)?;
    let areas: ClassAreaArtifact = s.read_json(CLASS_AREAS)?;
    let e = track_exposure(&track, &classes, breaks.k())?;
    let mut buf = Vec::new();
    write_scenario_table(&[("baseline".into(), "-".into(), &areas.areas, Some(&e))], &mut buf)
        .map_err(|e| CliError::io(&s.path(TABLE3), e))?;
    s.write_text(TABLE3, NO_SEED, &buf)?;
    s.write_json(EXPOSURE, NO_SEED, &e)
}

fn input_names(table: &FeatureTable, k_pe: usize) -> Vec<String> {
    let mut names = table.feature_names();
    names.extend((1..=k_pe).map(|i| format!("pe_{i}")));
    names
}

pub fn importance(cfg: &LoadedConfig) -> Result<(), CliError> {
    let opts = cfg.config.importance;
    let s = store(cfg, "importance")?;
    let inp = read_inputs(&s)?;
    let model: GtModel = s.read_json(MODEL)?;
    let names = input_names(&inp.table, inp.input.input_dim() - inp.input.n_features);
    let rep = permutation_importance(&model, &inp.input, &inp.labels, &inp.masks.test, &names, opts)?;
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).map_err(|e| CliError::io(&s.path(IMPORTANCE_CSV), e))?;
    s.write_text(IMPORTANCE_CSV, opts.seed, &buf)?;
    s.write_json(IMPORTANCE_JSON, opts.seed, &rep)
}

pub fn sensitivity(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let s = store(cfg, "sensitivity")?;
    s.require(&[INGEST, SAMPLED, SPLIT])?;
    let pipe = TablePipeline {
        sampled: read_table(&s, SAMPLED)?,
        split: read_split(&s)?,
        map: c.map,
        threshold_m: c.weights_threshold_m,
    };
    let sweeps: Vec<(String, Vec<f64>)> = c.sensitivity.iter().map(|Sweep { param, values }| (param.clone(), values.clone())).collect();
    let rep = oat_sensitivity(&c.model, &sweeps, &pipe)?;
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).map_err(|e| CliError::io(&s.path(SENSITIVITY_CSV), e))?;
    s.write_text(SENSITIVITY_CSV, c.model.seed, &buf)?;
    s.write_json(SENSITIVITY_JSON, c.model.seed, &rep)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioRow {
    rcp: Rcp,
    quantile: Quantile,
    source: String,
    classes_raster: String,
    areas: ClassAreas,
    exposure: Option<TrackExposure>,
    out_of_range_values: usize,
    singular_cells: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioArtifact {
    graph_mode: GraphMode,
    passes: usize,
    scenarios: Vec<ScenarioRow>,
}

pub fn scenario(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let s = store(cfg, "scenario")?;
    if c.paths.scenarios.is_empty() {
        return Err(CliError::config("paths.scenarios is empty"));
    }
    s.require(&[MODEL, NORMALIZATION, PCA, BREAKS])?;
    let inp = read_inputs(&s)?;
    let model: GtModel = s.read_json(MODEL)?;
    let params: NormalizationParams = s.read_json(NORMALIZATION)?;
    let pca: PcaModel = s.read_json(PCA)?;
    let breaks: ClassBreaks = s.read_json(BREAKS)?;
    let bundle = GraphBundle {
        pca,
        graph: read_graph(&s)?,
        pe: s.read_json(PE_JSON)?,
    };
    let track = match &c.paths.track {
        Some(_) => Some(track_of(&c.paths)?),
        None => None,
    };
    let UncertaintyConfig { passes, seed } = c.uncertainty;
    let mut out = Vec::new();
    for path in &c.paths.scenarios {
        let spec = ScenarioSpec::load(path)?;
        let table = apply_scenario(&inp.table, &spec, &params)?;
        let run = run_scenario(&model, &bundle, &table, &spec, c.graph_mode, &breaks, &c.map, passes, seed, track.as_ref())?;
        let stem = format!(
            "scenario_{}_{}",
            spec.rcp.label().replace('.', "").to_lowercase(),
            spec.quantile.label().to_lowercase()
        );
        let raster_name = format!("{stem}_classes.asc");
        s.write_raster(&raster_name, seed, &run.map.classes)?;
        s.write_raster(&format!("{stem}_susceptibility.asc"), seed, &run.map.susceptibility.raster)?;
        out.push(ScenarioRow {
            rcp: spec.rcp,
            quantile: spec.quantile,
            source: file_name(path),
            classes_raster: raster_name,
            areas: run.map.areas,
            exposure: run.exposure,
            out_of_range_values: run.out_of_range.len(),
            singular_cells: run.map.susceptibility.singular_cells,
        });
    }
    let rows: Vec<(String, String, &ClassAreas, Option<&TrackExposure>)> = out
        .iter()
        .map(|r| (r.rcp.label().to_string(), r.quantile.label().to_string(), &r.areas, r.exposure.as_ref()))
        .collect();
    let mut buf = Vec::new();
    write_scenario_table(&rows, &mut buf).map_err(|e| CliError::io(&s.path(TABLE4), e))?;
    s.write_text(TABLE4, seed, &buf)?;
    s.write_json(
        SCENARIOS,
        seed,
        &ScenarioArtifact {
            graph_mode: c.graph_mode,
            passes,
            scenarios: out,
        },
    )
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Artifacts `report` aggregates, given what the config asks for.
pub fn report_inputs(c: &RunConfig) -> Vec<&'static str> {
    let mut v = vec![
        COLLINEARITY,
        METRICS,
        TABLE2,
        AUTOCORR,
        MORAN_SCATTER,
        CLASS_AREAS,
        IMPORTANCE_CSV,
        IMPORTANCE_JSON,
    ];
    if c.paths.track.is_some() {
        v.extend([EXPOSURE, TABLE3]);
    }
    if !c.paths.scenarios.is_empty() {
        v.extend([SCENARIOS, TABLE4]);
    }
    if !c.sensitivity.is_empty() {
        v.extend([SENSITIVITY_CSV, SENSITIVITY_JSON]);
    }
    v
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    test_metrics: MetricReport,
    moran_i: f64,
    moran_p: f64,
    geary_c: f64,
    geary_p: f64,
    class_area_percentages: Vec<f64>,
    track_length_percentages: Option<Vec<f64>>,
    importance_ranking: Vec<String>,
    importance_threshold: f64,
    importance_no_signal: bool,
    sensitivity_ranking: Option<Vec<String>>,
    files: Vec<String>,
}

pub fn report(cfg: &LoadedConfig) -> Result<(), CliError> {
    let c = &cfg.config;
    let src = store(cfg, "report")?;
    src.require(&report_inputs(c))?;
    let out = Store::new(&c.paths.output_dir.join(REPORT_DIR), &cfg.hash, "report")?;
    let mut files = Vec::new();
    let mut copy = |name: &str, out_name: &str| -> Result<(), CliError> {
        let body = src.read_text(name)?;
        out.write_text(out_name, NO_SEED, body.as_bytes())?;
        files.push(out_name.to_string());
        Ok(())
    };
    copy(TABLE2, "table2_metrics.csv")?;
    copy(MORAN_SCATTER, "moran_scatter.csv")?;
    if c.paths.track.is_some() {
        copy(TABLE3, "table3_baseline_exposure.csv")?;
    }
    if !c.paths.scenarios.is_empty() {
        copy(TABLE4, "table4_scenarios.csv")?;
    }
    if !c.sensitivity.is_empty() {
        copy(SENSITIVITY_CSV, "sensitivity.csv")?;
    }

    // importance bars, most important first
    let imp: ImportanceReport = src.read_json(IMPORTANCE_JSON)?;
    let mut bars = String::from("feature,importance,ci_low,ci_high,threshold\n");
    for name in imp.ranking() {
        let e = imp.get(name).expect("ranked entry exists");
        bars.push_str(&format!("{},{},{},{},{}\n", e.name, e.importance, e.ci_low, e.ci_high, imp.threshold));
    }
    out.write_text("importance_bars.csv", NO_SEED, bars.as_bytes())?;
    files.push("importance_bars.csv".into());

    let metrics: MetricsArtifact = src.read_json(METRICS)?;
    let ac: AutocorrArtifact = src.read_json(AUTOCORR)?;
    let areas: ClassAreaArtifact = src.read_json(CLASS_AREAS)?;
    let exposure: Option<TrackExposure> = match c.paths.track {
        Some(_) => Some(src.read_json(EXPOSURE)?),
        None => None,
    };
    let sensitivity: Option<SensitivityReport> = match c.sensitivity.is_empty() {
        true => None,
        false => Some(src.read_json(SENSITIVITY_JSON)?),
    };
    files.push("report.json".into());
    let summary = ReportSummary {
        test_metrics: metrics.test,
        moran_i: ac.moran.statistic,
        moran_p: ac.moran.p_value,
        geary_c: ac.geary.statistic,
        geary_p: ac.geary.p_value,
        class_area_percentages: areas.areas.percentages,
        track_length_percentages: exposure.map(|e| e.percentages),
        importance_ranking: imp.ranking().iter().map(|s| s.to_string()).collect(),
        importance_threshold: imp.threshold,
        importance_no_signal: imp.no_signal,
        sensitivity_ranking: sensitivity.map(|r| r.rows.iter().map(|r| r.param.clone()).collect()),
        files,
    };
    out.write_json("report.json", NO_SEED, &summary)
}

/// Every stage in order; stages whose inputs are not configured are skipped.
pub fn run_all(cfg: &LoadedConfig) -> Result<Vec<&'static str>, CliError> {
    let c = &cfg.config;
    let mut done = Vec::new();
    let stages: [(&'static str, fn(&LoadedConfig) -> Result<(), CliError>, bool); 15] = [
        ("ingest", ingest, true),
        ("sample", sample, true),
        ("build-graph", build_graph, true),
        ("pe", pe, true),
        ("train", train_stage, true),
        ("predict", predict, true),
        ("metrics", metrics, true),
        ("autocorr", autocorr, true),
        ("krige", krige, true),
        ("classify", classify_stage, true),
        ("importance", importance, true),
        ("sensitivity", sensitivity, !c.sensitivity.is_empty()),
        ("exposure", exposure, c.paths.track.is_some()),
        ("scenario", scenario, !c.paths.scenarios.is_empty()),
        ("report", report, true),
    ];
    for (name, f, enabled) in stages {
        if enabled {
            f(cfg)?;
            done.push(name);
        }
    }
    Ok(done)
}

/// Writes the synthetic watershed plus a ready-to-run `config.json`.
pub fn synth_dataset(dir: &Path, n_per_class: usize, seed: u64) -> Result<Vec<String>, CliError> {
    let scfg = SynthConfig {
        n_per_class,
        seed,
        ..SynthConfig::default()
    };
    let scenarios = synth::write_dataset(&scfg, dir)?;
    let sample_n = n_per_class * 4 / 5;
    let config = RunConfig {
        paths: Paths {
            features: "features.csv".into(),
            track: Some("track.geojson".into()),
            scenarios: scenarios.iter().map(Into::into).collect(),
            output_dir: "out".into(),
        },
        factors: synth::schema(),
        collinearity: CollinearityConfig {
            keep: vec![floodgt::scenario::PRECIPITATION.into(), floodgt::scenario::LULC.into()],
            ..CollinearityConfig::default()
        },
        sampling: floodgt::sampling::SplitSpec {
            n_per_class: sample_n,
            seed,
            ..Default::default()
        },
        model: Default::default(),
        weights_threshold_m: floodgt::spatial::DEFAULT_THRESHOLD_M,
        autocorr: floodgt::spatial::Inference::Permutation { n_perm: 999, seed },
        map: Default::default(),
        uncertainty: Default::default(),
        importance: Default::default(),
        sensitivity: vec![
            Sweep {
                param: "learning_rate".into(),
                values: vec![0.001, 0.01],
            },
            Sweep {
                param: "num_layers".into(),
                values: vec![1.0, 3.0],
            },
        ],
        graph_mode: GraphMode::Rebuild,
        decision_threshold: 0.5,
    };
    let p = dir.join("config.json");
    let mut text = serde_json::to_string_pretty(&config)?;
    text.push('\n');
    std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    let mut written = vec!["features.csv".to_string(), "track.geojson".into(), "config.json".into()];
    written.extend(scenarios);
    Ok(written)
}

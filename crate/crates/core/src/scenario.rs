//! Future-scenario feature substitution and linear-infrastructure exposure.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FeatureTable, NormalizationParams};
use crate::mapping::{ClassAreas, ClassBreaks, RasterGrid};
use crate::model::GtModel;
use crate::pipeline::{build_graph_bundle, coords_of, map_predictions, predict_with_uncertainty, GraphBundle, MapConfig, SusceptibilityMap};

pub const PRECIPITATION: &str = "precipitation";
pub const LULC: &str = "lulc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rcp {
    #[serde(rename = "RCP2.6")]
    Rcp26,
    #[serde(rename = "RCP4.5")]
    Rcp45,
    #[serde(rename = "RCP8.5")]
    Rcp85,
}

impl Rcp {
    pub fn label(self) -> &'static str {
        match self {
            Rcp::Rcp26 => "RCP2.6",
            Rcp::Rcp45 => "RCP4.5",
            Rcp::Rcp85 => "RCP8.5",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantile {
    Q05,
    Q50,
    Q95,
}

impl Quantile {
    pub fn label(self) -> &'static str {
        match self {
            Quantile::Q05 => "Q05",
            Quantile::Q50 => "Q50",
            Quantile::Q95 => "Q95",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub rcp: Rcp,
    pub quantile: Quantile,
    /// Raw replacement precipitation per point id, mm/year.
    pub precipitation: HashMap<i64, f64>,
    /// Raw replacement land-use code per point id.
    pub lulc: HashMap<i64, f64>,
    #[serde(default)]
    pub note: String,
}

/// On-disk form: replacement values live in `id,value` CSV files whose
/// paths are relative to the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub rcp: Rcp,
    pub quantile: Quantile,
    pub precipitation_csv: String,
    pub lulc_csv: String,
    #[serde(default)]
    pub note: String,
}

fn read_id_values(path: &Path) -> Result<HashMap<i64, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "value" {
        return Err(Error::Schema(format!("{}: expected header 'id,value'", path.display())));
    }
    let mut out = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let id: i64 = rec[0].parse().map_err(|e| Error::Parse {
            row,
            column: "id".into(),
            message: format!("{e}"),
        })?;
        let v: f64 = rec[1].parse().map_err(|e| Error::Parse {
            row,
            column: "value".into(),
            message: format!("{e}"),
        })?;
        if out.insert(id, v).is_some() {
            return Err(Error::Row {
                row,
                message: format!("duplicate id {id}"),
            });
        }
    }
    Ok(out)
}

impl ScenarioSpec {
    pub fn load(json_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let file: ScenarioFile = serde_json::from_str(&text)?;
        let dir = json_path.parent().unwrap_or(Path::new("."));
        Ok(ScenarioSpec {
            rcp: file.rcp,
            quantile: file.quantile,
            precipitation: read_id_values(&dir.join(&file.precipitation_csv))?,
            lulc: read_id_values(&dir.join(&file.lulc_csv))?,
            note: file.note,
        })
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.rcp.label(), self.quantile.label())
    }

    pub fn validate(&self) -> Result<()> {
        for (id, &p) in &self.precipitation {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidArgument(format!("precipitation for id {id} must be positive, got {p}")));
            }
        }
        if let Some((id, v)) = self.lulc.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("land-use code for id {id}: {v}")));
        }
        Ok(())
    }

    /// Scenario that replays the raw values of `raw_table`.
    pub fn identity(raw_table: &FeatureTable, rcp: Rcp, quantile: Quantile) -> Result<Self> {
        let pj = column_index(raw_table, PRECIPITATION)?;
        let lj = column_index(raw_table, LULC)?;
        Ok(ScenarioSpec {
            rcp,
            quantile,
            precipitation: raw_table.points.iter().map(|p| (p.id, p.features[pj])).collect(),
            lulc: raw_table.points.iter().map(|p| (p.id, p.features[lj])).collect(),
            note: "baseline replay".into(),
        })
    }
}

fn column_index(table: &FeatureTable, name: &str) -> Result<usize> {
    table
        .feature_index(name)
        .ok_or_else(|| Error::Schema(format!("table has no '{name}' column")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfRange {
    pub id: i64,
    pub column: String,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTable {
    pub table: FeatureTable,
    /// Replacements that normalize outside `[0, 1]`; kept, not clipped.
    pub out_of_range: Vec<OutOfRange>,
}

/// Replaces the precipitation and land-use columns of a normalized table
/// with scenario values scaled by the baseline parameters. All other
/// columns are left untouched.
pub fn apply_scenario(table: &FeatureTable, spec: &ScenarioSpec, norm: &NormalizationParams) -> Result<ScenarioTable> {
    apply_scenario_columns(table, spec, norm, PRECIPITATION, LULC)
}

pub fn apply_scenario_columns(
    table: &FeatureTable,
    spec: &ScenarioSpec,
    norm: &NormalizationParams,
    precip_col: &str,
    lulc_col: &str,
) -> Result<ScenarioTable> {
    spec.validate()?;
    if table.feature_names() != norm.names {
        return Err(Error::Schema("normalization parameters do not match table columns".into()));
    }
    let pj = column_index(table, precip_col)?;
    let lj = column_index(table, lulc_col)?;
    let mut out = table.clone();
    let mut out_of_range = Vec::new();
    for p in &mut out.points {
        for (j, col, map) in [(pj, precip_col, &spec.precipitation), (lj, lulc_col, &spec.lulc)] {
            let raw = *map.get(&p.id).ok_or(Error::MissingReplacement(p.id))?;
            let v = norm.scale(j, raw);
            if !(0.0..=1.0).contains(&v) {
                out_of_range.push(OutOfRange {
                    id: p.id,
                    column: col.to_string(),
                    raw,
                    normalized: v,
                });
            }
            p.features[j] = v;
        }
    }
    Ok(ScenarioTable { table: out, out_of_range })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// PCA, k-NN graph and PE rebuilt from the scenario features.
    #[default]
    Rebuild,
    /// Baseline graph and PE reused; only node features change.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub rcp: Rcp,
    pub quantile: Quantile,
    pub graph_mode: GraphMode,
    pub passes: usize,
    pub map: SusceptibilityMap,
    pub exposure: Option<TrackExposure>,
    pub out_of_range: Vec<OutOfRange>,
}

/// Runs the baseline model on scenario features with MC dropout and maps
/// the result with the baseline class breaks.
#[allow(clippy::too_many_arguments)]
pub fn run_scenario(
    model: &GtModel,
    baseline_graph: &GraphBundle,
    scenario: &ScenarioTable,
    spec: &ScenarioSpec,
    mode: GraphMode,
    breaks: &ClassBreaks,
    map_cfg: &MapConfig,
    passes: usize,
    seed: u64,
    track: Option<&TrackGeometry>,
) -> Result<ScenarioRun> {
    let features = scenario.table.feature_matrix();
    let rebuilt;
    let bundle = match mode {
        GraphMode::Rebuild => {
            rebuilt = build_graph_bundle(&features, &model.config)?;
            &rebuilt
        }
        GraphMode::Frozen => baseline_graph,
    };
    let input = bundle.input(&features)?;
    let prediction = predict_with_uncertainty(&input, model, passes, seed)?;
    let map = map_predictions(prediction, &coords_of(&scenario.table), breaks, map_cfg)?;
    let exposure = match track {
        Some(t) => Some(track_exposure(t, &map.classes, breaks.k())?),
        None => None,
    };
    Ok(ScenarioRun {
        rcp: spec.rcp,
        quantile: spec.quantile,
        graph_mode: mode,
        passes,
        map,
        exposure,
        out_of_range: scenario.out_of_range.clone(),
    })
}

/// Rows `rcp,quantile,metric` with one column per class, `metric` being
/// `Area` or `Length` (percent).
pub fn write_scenario_table<W: std::io::Write>(rows: &[(String, String, &ClassAreas, Option<&TrackExposure>)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "rcp,quantile,metric,very_low,low,moderate,high,very_high")?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(",");
    for (rcp, q, areas, exposure) in rows {
        writeln!(w, "{rcp},{q},Area,{}", fmt(&areas.percentages))?;
        if let Some(e) = exposure {
            writeln!(w, "{rcp},{q},Length,{}", fmt(&e.percentages))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackGeometry {
    pub polylines: Vec<Vec<(f64, f64)>>,
}

impl TrackGeometry {
    pub fn new(polylines: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if polylines.is_empty() {
            return Err(Error::Geometry("no polylines".into()));
        }
        for (i, l) in polylines.iter().enumerate() {
            if l.len() < 2 {
                return Err(Error::Geometry(format!("polyline {i} has fewer than 2 vertices")));
            }
            if l.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
                return Err(Error::Geometry(format!("polyline {i} has a non-finite vertex")));
            }
        }
        Ok(TrackGeometry { polylines })
    }

    pub fn total_length(&self) -> f64 {
        self.polylines
            .iter()
            .flat_map(|l| l.windows(2))
            .map(|s| seg_len(s[0], s[1]))
            .sum()
    }

    /// Reads a GeoJSON LineString or MultiLineString, bare or wrapped in a
    /// Feature or FeatureCollection. Coordinates must already be projected.
    pub fn from_geojson(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let mut lines = Vec::new();
        collect_lines(&v, &mut lines)?;
        TrackGeometry::new(lines)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_geojson(&text)
    }

    pub fn to_geojson(&self) -> serde_json::Value {
        serde_json::json!({
            "type": "Feature",
            "properties": {},
            "geometry": {
                "type": "MultiLineString",
                "coordinates": self.polylines.iter()
                    .map(|l| l.iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            }
        })
    }
}

fn parse_line(coords: &serde_json::Value) -> Result<Vec<(f64, f64)>> {
    let arr = coords
        .as_array()
        .ok_or_else(|| Error::Geometry("coordinates must be an array".into()))?;
    arr.iter()
        .map(|p| {
            let xy = p.as_array().filter(|a| a.len() >= 2);
            match xy.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                Some((Some(x), Some(y))) => Ok((x, y)),
                _ => Err(Error::Geometry(format!("bad position {p}"))),
            }
        })
        .collect()
}

fn collect_lines(v: &serde_json::Value, out: &mut Vec<Vec<(f64, f64)>>) -> Result<()> {
    let kind = v.get("type").and_then(|t| t.as_str()).unwrap_or("");
    match kind {
        "FeatureCollection" => {
            let feats = v
                .get("features")
                .and_then(|f| f.as_array())
                .ok_or_else(|| Error::Geometry("FeatureCollection without features".into()))?;
            for f in feats {
                collect_lines(f, out)?;
            }
        }
        "Feature" => {
            let g = v
                .get("geometry")
                .ok_or_else(|| Error::Geometry("Feature without geometry".into()))?;
            collect_lines(g, out)?;
        }
        "LineString" => out.push(parse_line(&v["coordinates"])?),
        "MultiLineString" => {
            let parts = v["coordinates"]
                .as_array()
                .ok_or_else(|| Error::Geometry("MultiLineString coordinates must be an array".into()))?;
            for p in parts {
                out.push(parse_line(p)?);
            }
        }
        other => return Err(Error::Geometry(format!("unsupported geometry type '{other}'"))),
    }
    Ok(())
}

fn seg_len(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackExposure {
    /// Meters per class.
    pub lengths: Vec<f64>,
    pub nodata_length: f64,
    pub outside_length: f64,
    pub total_length: f64,
    /// Share of the classified in-extent length per class.
    pub percentages: Vec<f64>,
}

/// Splits every segment at the grid lines it crosses and credits each piece
/// to the class of the cell it lies in.
pub fn track_exposure(track: &TrackGeometry, classes: &RasterGrid, k: usize) -> Result<TrackExposure> {
    let g = classes.spec;
    g.validate()?;
    let mut lengths = vec![0.0; k];
    let mut nodata_length = 0.0;
    let mut outside_length = 0.0;
    let mut ts: Vec<f64> = Vec::new();
    for line in &track.polylines {
        for s in line.windows(2) {
            let (p, q) = (s[0], s[1]);
            let (dx, dy) = (q.0 - p.0, q.1 - p.1);
            let len = seg_len(p, q);
            if len == 0.0 {
                continue;
            }
            ts.clear();
            ts.push(0.0);
            ts.push(1.0);
            let mut crossings = |p0: f64, d: f64, origin: f64, n: usize| {
                if d == 0.0 {
                    return;
                }
                let (a, b) = (p0.min(p0 + d), p0.max(p0 + d));
                let first = ((a - origin) / g.cell_size).ceil().max(0.0) as usize;
                let last = (((b - origin) / g.cell_size).floor()).min(n as f64);
                if last < 0.0 {
                    return;
                }
                for i in first..=last as usize {
                    let t = (origin + i as f64 * g.cell_size - p0) / d;
                    if t > 0.0 && t < 1.0 {
                        ts.push(t);
                    }
                }
            };
            crossings(p.0, dx, g.x_ll, g.ncols);
            crossings(p.1, dy, g.y_ll, g.nrows);
            ts.sort_by(f64::total_cmp);
            for w in ts.windows(2) {
                let piece = (w[1] - w[0]) * len;
                if piece == 0.0 {
                    continue;
                }
                let tm = 0.5 * (w[0] + w[1]);
                match g.cell_of(p.0 + tm * dx, p.1 + tm * dy) {
                    None => outside_length += piece,
                    Some((r, c)) => {
                        let v = classes.get(r, c);
                        if classes.is_nodata(v) {
                            nodata_length += piece;
                        } else {
                            let cls = v as usize;
                            if v != cls as f64 || cls == 0 || cls > k {
                                return Err(Error::Raster(format!("cell value {v} is not a class in 1..={k}")));
                            }
                            lengths[cls - 1] += piece;
                        }
                    }
                }
            }
        }
    }
    let classified: f64 = lengths.iter().sum();
    if classified <= 0.0 {
        return Err(Error::NoTrackInExtent);
    }
    let percentages = lengths.iter().map(|l| l * 100.0 / classified).collect();
    Ok(TrackExposure {
        lengths,
        nodata_length,
        outside_length,
        total_length: track.total_length(),
        percentages,
    })
}

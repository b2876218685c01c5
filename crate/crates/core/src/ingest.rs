//! Point-table ingestion, min-max scaling and multicollinearity screening.

use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMeta {
    pub name: String,
    pub kind: FactorKind,
}

impl FactorMeta {
    pub fn continuous(name: impl Into<String>) -> Self {
        FactorMeta {
            name: name.into(),
            kind: FactorKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        FactorMeta {
            name: name.into(),
            kind: FactorKind::Categorical,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub id: i64,
    pub x: f64,
    pub y: f64,
    pub features: Vec<f64>,
    pub label: Option<u8>,
}

/// Georeferenced points carrying one value per conditioning factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub points: Vec<PointRecord>,
    pub factors: Vec<FactorMeta>,
    pub crs_note: String,
}

impl FeatureTable {
    /// Builds a table and checks the structural invariants.
    pub fn new(points: Vec<PointRecord>, factors: Vec<FactorMeta>, crs_note: impl Into<String>) -> Result<Self> {
        let table = FeatureTable {
            points,
            factors,
            crs_note: crs_note.into(),
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.factors.len();
        if f == 0 {
            return Err(Error::Schema("at least one factor is required".into()));
        }
        let mut seen = HashSet::with_capacity(self.points.len());
        for (row, p) in self.points.iter().enumerate() {
            if p.features.len() != f {
                return Err(Error::Row {
                    row,
                    message: format!("expected {f} features, found {}", p.features.len()),
                });
            }
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Row {
                    row,
                    message: "non-finite coordinate".into(),
                });
            }
            if let Some(l) = p.label {
                if l > 1 {
                    return Err(Error::Row {
                        row,
                        message: format!("label must be 0 or 1, found {l}"),
                    });
                }
            }
            if !seen.insert(p.id) {
                return Err(Error::Row {
                    row,
                    message: format!("duplicate id {}", p.id),
                });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn n_features(&self) -> usize {
        self.factors.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.features[j]).collect()
    }

    /// Row-major `n x F` feature matrix.
    pub fn feature_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.n_features(), |i, j| self.points[i].features[j])
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> FeatureTable {
        FeatureTable {
            points: self
                .points
                .iter()
                .map(|p| PointRecord {
                    features: keep.iter().map(|&j| p.features[j]).collect(),
                    ..p.clone()
                })
                .collect(),
            factors: keep.iter().map(|&j| self.factors[j].clone()).collect(),
            crs_note: self.crs_note.clone(),
        }
    }

    /// Subset of rows with the given ids, in the given order.
    pub fn select_ids(&self, ids: &[i64]) -> Result<FeatureTable> {
        let index: std::collections::HashMap<i64, usize> =
            self.points.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
        let mut points = Vec::with_capacity(ids.len());
        for id in ids {
            let &i = index
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown point id {id}")))?;
            points.push(self.points[i].clone());
        }
        Ok(FeatureTable {
            points,
            factors: self.factors.clone(),
            crs_note: self.crs_note.clone(),
        })
    }

    pub fn has_labels(&self) -> bool {
        self.points.iter().all(|p| p.label.is_some())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let labelled = self.points.iter().any(|p| p.label.is_some());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "x".into(), "y".into()];
        header.extend(self.feature_names());
        if labelled {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for p in &self.points {
            let mut rec = vec![p.id.to_string(), p.x.to_string(), p.y.to_string()];
            rec.extend(p.features.iter().map(|v| v.to_string()));
            if labelled {
                rec.push(p.label.map(|l| l.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Reads `id,x,y,<factor1>,...,<factorF>[,label]`. The header must list the
/// schema factors in order; lines starting with `#` are ignored.
pub fn load_feature_table(path: &Path, schema: &[FactorMeta]) -> Result<FeatureTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_table(file, schema, path.display().to_string())
}

pub fn read_feature_table<R: std::io::Read>(
    reader: R,
    schema: &[FactorMeta],
    crs_note: String,
) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header == [""] {
        return Err(Error::NoData);
    }
    let f = schema.len();
    let expected_min = 3 + f;
    let has_label = match header.len() {
        n if n == expected_min => false,
        n if n == expected_min + 1 && header[n - 1] == "label" => true,
        _ => {
            return Err(Error::Schema(format!(
                "expected header id,x,y,{}[,label], found {}",
                schema.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(","),
                header.join(",")
            )))
        }
    };
    if header[0] != "id" || header[1] != "x" || header[2] != "y" {
        return Err(Error::Schema(format!(
            "first columns must be id,x,y, found {}",
            header[..3].join(",")
        )));
    }
    for (j, meta) in schema.iter().enumerate() {
        if header[3 + j] != meta.name {
            return Err(Error::Schema(format!(
                "column {} is '{}', schema expects '{}'",
                3 + j,
                header[3 + j],
                meta.name
            )));
        }
    }

    let mut points = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let parse_f64 = |c: usize| -> Result<f64> {
            let s = cell(c);
            if s.is_empty() {
                return Err(Error::Parse {
                    row,
                    column: header[c].clone(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                column: header[c].clone(),
                message: format!("not a number: '{s}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header[c].clone(),
                    message: format!("non-finite value '{s}'"),
                });
            }
            Ok(v)
        };
        let id: i64 = cell(0).parse().map_err(|_| Error::Parse {
            row,
            column: "id".into(),
            message: format!("not an integer: '{}'", cell(0)),
        })?;
        let x = parse_f64(1)?;
        let y = parse_f64(2)?;
        let features = (0..f).map(|j| parse_f64(3 + j)).collect::<Result<Vec<_>>>()?;
        let label = if has_label {
            match cell(3 + f) {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(Error::Row {
                        row,
                        message: format!("label must be 0 or 1, found '{other}'"),
                    })
                }
            }
        } else {
            None
        };
        points.push(PointRecord {
            id,
            x,
            y,
            features,
            label,
        });
    }
    if points.is_empty() {
        return Err(Error::NoData);
    }
    FeatureTable::new(points, schema.to_vec(), crs_note)
}

/// Per-feature min and max of the table used to fit the scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    pub fn fit(table: &FeatureTable) -> Self {
        let f = table.n_features();
        let mut min = vec![f64::INFINITY; f];
        let mut max = vec![f64::NEG_INFINITY; f];
        for p in &table.points {
            for j in 0..f {
                min[j] = min[j].min(p.features[j]);
                max[j] = max[j].max(p.features[j]);
            }
        }
        NormalizationParams {
            names: table.feature_names(),
            min,
            max,
        }
    }

    /// Names of features whose range is zero.
    pub fn constant_features(&self) -> Vec<&str> {
        self.names
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .filter(|(_, (lo, hi))| lo == hi)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    #[inline]
    pub fn scale(&self, j: usize, v: f64) -> f64 {
        (v - self.min[j]) / (self.max[j] - self.min[j])
    }

    /// Scales every feature of `table`; values outside the fitted range map
    /// outside [0, 1].
    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable> {
        if table.feature_names() != self.names {
            return Err(Error::Schema("normalization parameters do not match table columns".into()));
        }
        if let Some(name) = self.constant_features().first() {
            return Err(Error::ConstantFeature(name.to_string()));
        }
        let mut out = table.clone();
        for p in &mut out.points {
            for (j, v) in p.features.iter_mut().enumerate() {
                *v = self.scale(j, *v);
            }
        }
        Ok(out)
    }
}

pub fn min_max_normalize(table: &FeatureTable) -> Result<(FeatureTable, NormalizationParams)> {
    let params = NormalizationParams::fit(table);
    let out = params.apply(table)?;
    Ok((out, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVif {
    pub name: String,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub vif: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollinearityReport {
    pub features: Vec<FeatureVif>,
    pub pairwise_r: Vec<Vec<f64>>,
}

impl CollinearityReport {
    pub fn vif(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|f| f.name == name).map(|f| f.vif)
    }
}

fn ser_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }
    match NumOrStr::deserialize(d)? {
        NumOrStr::Num(v) => Ok(v),
        NumOrStr::Str(s) if s == "inf" => Ok(f64::INFINITY),
        NumOrStr::Str(s) => Err(serde::de::Error::custom(format!("unexpected vif '{s}'"))),
    }
}

// Residual share of variance below which a regression counts as an exact fit.
const EXACT_FIT_RSS: f64 = 1e-12;

/// Variance inflation factors from OLS of each feature on the others (with
/// intercept), plus the Pearson correlation matrix.
pub fn compute_collinearity(table: &FeatureTable) -> Result<CollinearityReport> {
    let n = table.n();
    let f = table.n_features();
    if n <= f + 1 {
        return Err(Error::InvalidArgument(format!(
            "collinearity needs n > F + 1 (n = {n}, F = {f})"
        )));
    }
    let mut x = table.feature_matrix();
    // centering absorbs the intercept
    for j in 0..f {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let ss: Vec<f64> = (0..f).map(|j| x.column(j).norm_squared()).collect();

    let mut features = Vec::with_capacity(f);
    for j in 0..f {
        let vif = if ss[j] == 0.0 {
            f64::INFINITY
        } else if f == 1 {
            1.0
        } else {
            let others: Vec<usize> = (0..f).filter(|&c| c != j).collect();
            let a = x.select_columns(&others);
            let b: DVector<f64> = x.column(j).into_owned();
            let svd = a.clone().svd(true, true);
            let tol = svd.singular_values.max() * 1e-12 * (n as f64);
            let beta = svd
                .solve(&b, tol)
                .map_err(|e| Error::InvalidArgument(format!("regression failed: {e}")))?;
            let resid = &b - &a * beta;
            let rss_share = resid.norm_squared() / ss[j];
            if rss_share <= EXACT_FIT_RSS {
                f64::INFINITY
            } else {
                1.0 / rss_share.min(1.0)
            }
        };
        features.push(FeatureVif {
            name: table.factors[j].name.clone(),
            vif,
            tol: 1.0 / vif,
        });
    }

    let mut pairwise_r = vec![vec![0.0; f]; f];
    for a in 0..f {
        pairwise_r[a][a] = 1.0;
        for b in (a + 1)..f {
            let r = if ss[a] == 0.0 || ss[b] == 0.0 {
                0.0
            } else {
                (x.column(a).dot(&x.column(b)) / (ss[a] * ss[b]).sqrt()).clamp(-1.0, 1.0)
            };
            pairwise_r[a][b] = r;
            pairwise_r[b][a] = r;
        }
    }
    Ok(CollinearityReport {
        features,
        pairwise_r,
    })
}

/// Repeatedly drops the non-kept feature with the largest VIF until every
/// non-kept feature has `vif <= vif_max`. Ties drop the later column.
pub fn filter_collinear(
    table: &FeatureTable,
    report: &CollinearityReport,
    vif_max: f64,
    keep_list: &[String],
) -> Result<FeatureTable> {
    for k in keep_list {
        if table.feature_index(k).is_none() {
            return Err(Error::InvalidArgument(format!("keep-list feature '{k}' not in table")));
        }
    }
    let mut current = table.clone();
    let mut rep = report.clone();
    loop {
        let mut worst: Option<(usize, f64)> = None;
        for (j, fv) in rep.features.iter().enumerate() {
            if keep_list.contains(&fv.name) {
                continue;
            }
            if worst.map_or(true, |(_, v)| fv.vif >= v) {
                worst = Some((j, fv.vif));
            }
        }
        match worst {
            Some((j, v)) if v > vif_max => {
                let keep: Vec<usize> = (0..current.n_features()).filter(|&c| c != j).collect();
                current = current.select_columns(&keep);
                if current.n_features() == 0 {
                    break;
                }
                rep = compute_collinearity(&current)?;
            }
            _ => break,
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema2() -> Vec<FactorMeta> {
        vec![FactorMeta::continuous("a"), FactorMeta::categorical("b")]
    }

    fn table_from_columns(cols: &[Vec<f64>]) -> FeatureTable {
        let n = cols[0].len();
        let factors = (0..cols.len()).map(|j| FactorMeta::continuous(format!("f{}", j + 1))).collect();
        let points = (0..n)
            .map(|i| PointRecord {
                id: i as i64,
                x: i as f64,
                y: 0.0,
                features: cols.iter().map(|c| c[i]).collect(),
                label: None,
            })
            .collect();
        FeatureTable::new(points, factors, "test").unwrap()
    }

    #[test]
    fn reads_valid_csv() {
        let csv = "id,x,y,a,b,label\n1,0,0,1.5,2,1\n2,10,5,2.5,3,0\n3,20,5,3.5,1,1\n";
        let t = read_feature_table(csv.as_bytes(), &schema2(), "t".into()).unwrap();
        assert_eq!(t.n(), 3);
        assert_eq!(t.n_features(), 2);
        assert_eq!(t.points[1].label, Some(0));
    }

    #[test]
    fn rejects_bad_label() {
        let csv = "id,x,y,a,b,label\n1,0,0,1.5,2,1\n2,10,5,2.5,3,2\n";
        let err = read_feature_table(csv.as_bytes(), &schema2(), "t".into()).unwrap_err();
        match err {
            Error::Row { row, .. } => assert_eq!(row, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_input_is_no_data() {
        let err = read_feature_table("".as_bytes(), &schema2(), "t".into()).unwrap_err();
        assert_eq!(err.to_string(), "no data rows");
        let err = read_feature_table("id,x,y,a,b\n".as_bytes(), &schema2(), "t".into()).unwrap_err();
        assert_eq!(err.to_string(), "no data rows");
    }

    #[test]
    fn parse_errors_name_row_and_column() {
        let csv = "id,x,y,a,b\n1,0,0,1.5,2\n2,0,0,abc,2\n";
        match read_feature_table(csv.as_bytes(), &schema2(), "t".into()).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "a");
            }
            e => panic!("unexpected {e}"),
        }
        let csv = "id,x,y,a,b\n1,0,0,,2\n";
        assert!(matches!(
            read_feature_table(csv.as_bytes(), &schema2(), "t".into()),
            Err(Error::Parse { row: 0, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let csv = "id,x,y,a,b\n1,0,0,1,2\n1,0,0,3,2\n";
        assert!(matches!(
            read_feature_table(csv.as_bytes(), &schema2(), "t".into()),
            Err(Error::Row { row: 1, .. })
        ));
    }

    #[test]
    fn header_mismatch_rejected() {
        let csv = "id,x,y,b,a\n1,0,0,1,2\n";
        assert!(matches!(
            read_feature_table(csv.as_bytes(), &schema2(), "t".into()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn min_max_examples() {
        let t = table_from_columns(&[vec![2.0, 4.0, 6.0], vec![0.0, 0.25, 1.0]]);
        let (n, p) = min_max_normalize(&t).unwrap();
        assert_eq!(n.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.column(1), vec![0.0, 0.25, 1.0]);
        assert_eq!((p.min[1], p.max[1]), (0.0, 1.0));
        assert_eq!(p.apply(&t).unwrap(), n);

        let c = table_from_columns(&[vec![5.0, 5.0, 5.0]]);
        assert_eq!(min_max_normalize(&c).unwrap_err().to_string(), "constant feature 'f1'");
    }

    #[test]
    fn orthogonal_columns_have_unit_vif() {
        let t = table_from_columns(&[
            vec![1.0, -1.0, 1.0, -1.0, 0.0],
            vec![1.0, 1.0, -1.0, -1.0, 0.0],
        ]);
        let r = compute_collinearity(&t).unwrap();
        for f in &r.features {
            assert!((f.vif - 1.0).abs() < 1e-12);
            assert!((f.vif * f.tol - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.pairwise_r[0][0], 1.0);
        assert!(r.pairwise_r[0][1].abs() < 1e-15);
    }

    #[test]
    fn exact_dependence_is_infinite() {
        let f1 = vec![1.0, 2.0, 0.5, 3.0, 1.5, 2.2];
        let f2 = vec![0.3, -1.0, 2.0, 0.7, 0.1, 1.9];
        let f3: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let t = table_from_columns(&[f1, f2, f3]);
        let r = compute_collinearity(&t).unwrap();
        assert!(r.features[2].vif.is_infinite());
        assert_eq!(r.features[2].tol, 0.0);
        let js = serde_json::to_string(&r).unwrap();
        assert!(js.contains("\"vif\":\"inf\""));
        let back: CollinearityReport = serde_json::from_str(&js).unwrap();
        assert!(back.features[2].vif.is_infinite());
    }

    #[test]
    fn filter_noop_and_duplicate_pair() {
        let a = vec![1.0, -1.0, 1.0, -1.0, 0.0, 0.3];
        let b = vec![1.0, 1.0, -1.0, -1.0, 0.0, -0.2];
        let t = table_from_columns(&[a.clone(), b.clone()]);
        let r = compute_collinearity(&t).unwrap();
        assert_eq!(filter_collinear(&t, &r, 10.0, &[]).unwrap(), t);

        let t = table_from_columns(&[a.clone(), b, a]);
        let r = compute_collinearity(&t).unwrap();
        let out = filter_collinear(&t, &r, 10.0, &[]).unwrap();
        assert_eq!(out.feature_names(), vec!["f1", "f2"]);
    }

    #[test]
    fn keep_list_must_exist() {
        let t = table_from_columns(&[vec![1.0, 2.0, 3.0, 5.0]]);
        let r = compute_collinearity(&t).unwrap();
        assert!(filter_collinear(&t, &r, 10.0, &["nope".into()]).is_err());
    }
}

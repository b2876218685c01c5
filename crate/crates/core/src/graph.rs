//! Similarity graph over PCA-reduced node features.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `F x d`, orthonormal columns ordered by decreasing variance.
    pub components: DMatrix<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

// slack on the cumulative ratio so that a target of 1.0 stops at the rank
const CUMULATIVE_SLACK: f64 = 1e-10;

pub fn fit_pca(x: &DMatrix<f64>, variance_target: f64) -> Result<PcaModel> {
    let (n, f) = x.shape();
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidArgument(format!("variance target {variance_target} outside (0, 1]")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let mean = DVector::from_fn(f, |j, _| x.column(j).mean());
    let mut centered = x.clone();
    for j in 0..f {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().sum();
    if total <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let ratios: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0) / total).collect();

    let mut d = f;
    let mut cum = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        if cum >= variance_target - CUMULATIVE_SLACK {
            d = i + 1;
            break;
        }
    }
    let mut components = DMatrix::zeros(f, d);
    for (c, &i) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        canonical_sign(v.as_mut_slice());
        components.set_column(c, &v);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios[..d].to_vec(),
    })
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&b| b < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    /// Scores `(X - mean) * components`.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for j in 0..x.ncols() {
            centered.column_mut(j).add_scalar_mut(-self.mean[j]);
        }
        centered * &self.components
    }
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(Error::ZeroNorm(0));
    }
    if nv == 0.0 {
        return Err(Error::ZeroNorm(1));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Directed weighted graph in compressed out-neighbor layout. Each node's
/// list starts with its self-loop, then neighbors by decreasing weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub n: usize,
    pub k: usize,
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

impl Graph {
    /// Builds from per-node out-lists. Lists are kept in the given order.
    pub fn from_out_lists(lists: Vec<Vec<(usize, f64)>>, k: usize) -> Self {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for list in lists {
            for (d, w) in list {
                targets.push(d);
                weights.push(w);
            }
            offsets.push(targets.len());
        }
        Graph {
            n,
            k,
            offsets,
            targets,
            weights,
        }
    }

    pub fn out_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.targets[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.n).flat_map(move |src| self.out_edges(src).map(move |(dst, weight)| Edge { src, dst, weight }))
    }

    pub fn n_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.n).all(|i| self.out_edges(i).any(|(d, _)| d == i))
    }

    /// Writes `src\tdst\tweight` lines.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "src\tdst\tweight")?;
        for e in self.edges() {
            writeln!(w, "{}\t{}\t{}", e.src, e.dst, e.weight)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: std::io::BufRead>(r: R, n: usize, k: usize) -> Result<Graph> {
        let mut lists = vec![Vec::new(); n];
        for (row, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<graph tsv>", e))?;
            if row == 0 || line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = |m: &str| Error::Parse {
                row,
                column: "edge".into(),
                message: m.to_string(),
            };
            if parts.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let s: usize = parts[0].parse().map_err(|_| bad("bad src"))?;
            let d: usize = parts[1].parse().map_err(|_| bad("bad dst"))?;
            let wgt: f64 = parts[2].parse().map_err(|_| bad("bad weight"))?;
            if s >= n || d >= n {
                return Err(bad("node index out of range"));
            }
            lists[s].push((d, wgt));
        }
        Ok(Graph::from_out_lists(lists, k))
    }
}

/// Header written next to the TSV edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub n: usize,
    pub k: usize,
    pub node_ids: Vec<i64>,
}

/// Connects every row of `z` to itself (weight 1) and to the `k` other rows
/// with the largest cosine similarity; ties go to the smaller index.
pub fn build_knn_graph(z: &DMatrix<f64>, k: usize) -> Result<Graph> {
    let n = z.nrows();
    if k < 1 || k + 1 > n {
        return Err(Error::InvalidArgument(format!("k = {k} must be in 1..={}", n.saturating_sub(1))));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| z.row(i).iter().copied().collect()).collect();
    let mut unit = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        let norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm(i));
        }
        unit.push(r.iter().map(|a| a / norm).collect::<Vec<f64>>());
    }
    let lists: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                    (j, dot.clamp(-1.0, 1.0))
                })
                .collect();
            cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            cand.truncate(k);
            let mut list = Vec::with_capacity(k + 1);
            list.push((i, 1.0));
            list.extend(cand);
            list
        })
        .collect();
    Ok(Graph::from_out_lists(lists, k))
}

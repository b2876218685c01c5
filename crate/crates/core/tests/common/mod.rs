//! Independent reference implementations used as test oracles. Everything
//! here is deliberately naive: plain loops over `Vec<Vec<f64>>`, no shared
//! code with the library beyond its public data types.
#![allow(dead_code)]

use floodgt::graph::Graph;
use floodgt::mapping::RasterGrid;
use floodgt::scenario::TrackGeometry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian elimination with partial pivoting. `None` if singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues ascending and eigenvectors as columns `vecs[row][k]`.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]));
    let vals = order.iter().map(|&i| m[i][i]).collect();
    let vecs = (0..n).map(|r| order.iter().map(|&k| v[r][k]).collect()).collect();
    (vals, vecs)
}

/// Dense `I - D^-1/2 A D^-1/2` from the edge list: symmetrized, self-loops
/// and negative weights removed, isolated nodes left as zero rows.
pub fn laplacian_oracle(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.n;
    let mut a = vec![vec![0.0; n]; n];
    for e in g.edges() {
        if e.src != e.dst && e.weight > 0.0 {
            a[e.src][e.dst] += e.weight / 2.0;
            a[e.dst][e.src] += e.weight / 2.0;
        }
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if deg[i] > 0.0 && deg[j] > 0.0 {
                l[i][j] = -a[i][j] / (deg[i] * deg[j]).sqrt();
            }
        }
        if deg[i] > 0.0 {
            l[i][i] = 1.0;
        }
    }
    l
}

/// Connected components of the undirected support (positive weights).
pub fn components(g: &Graph) -> usize {
    let n = g.n;
    let mut adj = vec![Vec::new(); n];
    for e in g.edges() {
        if e.src != e.dst && e.weight > 0.0 {
            adj[e.src].push(e.dst);
            adj[e.dst].push(e.src);
        }
    }
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

/// Random directed graph with self-loops, some negative weights and, with
/// `islands`, several disconnected blocks.
pub fn random_graph(r: &mut ChaCha8Rng, n: usize, islands: usize) -> Graph {
    let block = |i: usize| i * islands / n;
    let lists = (0..n)
        .map(|i| {
            let mut out = vec![(i, 1.0)];
            for j in 0..n {
                if j != i && block(j) == block(i) && r.random_bool(0.35) {
                    let w = if r.random_bool(0.1) { -r.random_range(0.0..0.5) } else { r.random_range(0.05..1.0) };
                    out.push((j, w));
                }
            }
            out
        })
        .collect();
    Graph::from_out_lists(lists, 0)
}

pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn band(coords: &[(f64, f64)], i: usize, j: usize, thr: f64) -> f64 {
    let d = ((coords[i].0 - coords[j].0).powi(2) + (coords[i].1 - coords[j].1).powi(2)).sqrt();
    if d > 0.0 && d < thr {
        1.0
    } else {
        0.0
    }
}

pub fn moran_direct(y: &[f64], coords: &[(f64, f64)], thr: f64) -> f64 {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let (mut num, mut s0) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = band(coords, i, j, thr);
            s0 += w;
            num += w * (y[i] - mean) * (y[j] - mean);
        }
    }
    let den: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    n as f64 / s0 * num / den
}

pub fn geary_direct(y: &[f64], coords: &[(f64, f64)], thr: f64) -> f64 {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let (mut num, mut s0) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = band(coords, i, j, thr);
            s0 += w;
            num += w * (y[i] - y[j]).powi(2);
        }
    }
    let den: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    (n as f64 - 1.0) / (2.0 * s0) * num / den
}

/// `1 / (1 - R^2)` of column `j` regressed with intercept on the others,
/// through the normal equations.
pub fn vif_ols(cols: &[Vec<f64>], j: usize) -> f64 {
    let n = cols[0].len();
    let mut design: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for (c, col) in cols.iter().enumerate() {
        if c != j {
            design.push(col.clone());
        }
    }
    let p = design.len();
    let xtx: Vec<Vec<f64>> = (0..p)
        .map(|a| (0..p).map(|b| (0..n).map(|i| design[a][i] * design[b][i]).sum()).collect())
        .collect();
    let xty: Vec<f64> = (0..p).map(|a| (0..n).map(|i| design[a][i] * cols[j][i]).sum()).collect();
    let beta = solve_dense(xtx, xty).expect("regular design");
    let y = &cols[j];
    let mean = y.iter().sum::<f64>() / n as f64;
    let rss: f64 = (0..n)
        .map(|i| {
            let fit: f64 = (0..p).map(|a| beta[a] * design[a][i]).sum();
            (y[i] - fit).powi(2)
        })
        .sum();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    1.0 / (rss / tss)
}

pub fn ssd(vals: &[f64]) -> f64 {
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - m).powi(2)).sum()
}

/// SSD of sorted values split at the start indices `cuts`.
pub fn partition_ssd(sorted: &[f64], cuts: &[usize]) -> f64 {
    let mut bounds = vec![0];
    bounds.extend_from_slice(cuts);
    bounds.push(sorted.len());
    bounds.windows(2).map(|w| ssd(&sorted[w[0]..w[1]])).sum()
}

/// Minimum SSD over every split of `sorted` into `k` non-empty runs.
pub fn jenks_bruteforce(sorted: &[f64], k: usize) -> f64 {
    fn rec(sorted: &[f64], start: usize, k: usize, cuts: &mut Vec<usize>, best: &mut f64) {
        if k == 1 {
            *best = best.min(partition_ssd(sorted, cuts));
            return;
        }
        for c in start + 1..=sorted.len() - (k - 1) {
            cuts.push(c);
            rec(sorted, c, k - 1, cuts, best);
            cuts.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(sorted, 0, k, &mut Vec::new(), &mut best);
    best
}

/// Start indices of the classes implied by `edges` on sorted values.
pub fn cuts_from_edges(sorted: &[f64], edges: &[f64]) -> Vec<usize> {
    edges[1..edges.len() - 1]
        .iter()
        .map(|&b| sorted.iter().position(|&v| v >= b).expect("edge inside data"))
        .collect()
}

pub fn spherical(h: f64, nugget: f64, sill: f64, range: f64) -> f64 {
    if h == 0.0 {
        0.0
    } else if h >= range {
        sill
    } else {
        let t = h / range;
        nugget + (sill - nugget) * (1.5 * t - 0.5 * t.powi(3))
    }
}

/// Ordinary kriging over all points with a spherical model.
pub fn krige_dense(points: &[(f64, f64, f64)], nugget: f64, sill: f64, range: f64, x: f64, y: f64) -> (f64, Vec<f64>) {
    let m = points.len();
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut a = vec![vec![0.0; m + 1]; m + 1];
    let mut b = vec![0.0; m + 1];
    for i in 0..m {
        for j in 0..m {
            a[i][j] = spherical(d((points[i].0, points[i].1), (points[j].0, points[j].1)), nugget, sill, range);
        }
        a[i][m] = 1.0;
        a[m][i] = 1.0;
        b[i] = spherical(d((points[i].0, points[i].1), (x, y)), nugget, sill, range);
    }
    b[m] = 1.0;
    let w = solve_dense(a, b).expect("regular kriging system");
    let value = (0..m).map(|i| w[i] * points[i].2).sum();
    (value, w[..m].to_vec())
}

/// Lengths per class from `samples` equal-length pieces of the polyline,
/// each assigned by the cell under its midpoint. Returns
/// `(per class, nodata, outside)`.
pub fn track_sampling_oracle(track: &TrackGeometry, raster: &RasterGrid, k: usize, samples: usize) -> (Vec<f64>, f64, f64) {
    let segs: Vec<((f64, f64), (f64, f64), f64)> = track
        .polylines
        .iter()
        .flat_map(|l| l.windows(2).map(|w| (w[0], w[1], ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())))
        .collect();
    let total: f64 = segs.iter().map(|s| s.2).sum();
    let piece = total / samples as f64;
    let mut per = vec![0.0; k];
    let (mut nodata, mut outside) = (0.0, 0.0);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for s in 0..samples {
        let at = (s as f64 + 0.5) * piece;
        while seg + 1 < segs.len() && at > seg_start + segs[seg].2 {
            seg_start += segs[seg].2;
            seg += 1;
        }
        let (p, q, len) = segs[seg];
        let t = ((at - seg_start) / len).clamp(0.0, 1.0);
        let (x, y) = (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1));
        let g = raster.spec;
        if x < g.x_ll || y < g.y_ll || x > g.x_max() || y > g.y_max() {
            outside += piece;
            continue;
        }
        let col = (((x - g.x_ll) / g.cell_size) as usize).min(g.ncols - 1);
        let row = g.nrows - 1 - (((y - g.y_ll) / g.cell_size) as usize).min(g.nrows - 1);
        let v = raster.values[row * g.ncols + col];
        if v == raster.nodata {
            nodata += piece;
        } else {
            per[v as usize - 1] += piece;
        }
    }
    (per, nodata, outside)
}

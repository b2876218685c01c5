//! Edge-weighted attention restricted to each node's in-neighborhood.

use nalgebra::DMatrix;

use crate::graph::Graph;

type Mat = DMatrix<f64>;

/// In-edges grouped by destination: node `i` attends over
/// `sources[offsets[i]..offsets[i + 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InEdges {
    pub offsets: Vec<usize>,
    pub sources: Vec<usize>,
    pub weights: Vec<f64>,
    pub is_self: Vec<bool>,
}

impl InEdges {
    pub fn from_graph(graph: &Graph) -> Self {
        let mut lists: Vec<Vec<(usize, f64, bool)>> = vec![Vec::new(); graph.n];
        for e in graph.edges() {
            lists[e.dst].push((e.src, e.weight, e.src == e.dst));
        }
        Self::from_lists(lists)
    }

    /// `lists[i]` holds `(source, weight, is_self_loop)` for node `i`.
    pub fn from_lists(lists: Vec<Vec<(usize, f64, bool)>>) -> Self {
        let mut offsets = vec![0];
        let mut sources = Vec::new();
        let mut weights = Vec::new();
        let mut is_self = Vec::new();
        for list in lists {
            for (s, w, l) in list {
                sources.push(s);
                weights.push(w);
                is_self.push(l);
            }
            offsets.push(sources.len());
        }
        InEdges {
            offsets,
            sources,
            weights,
            is_self,
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

#[inline]
fn row_dot(a: &Mat, i: usize, b: &Mat, j: usize) -> f64 {
    (0..a.ncols()).map(|c| a[(i, c)] * b[(j, c)]).sum()
}

/// For every node `i` and in-edge `e = (j -> i)` with weight `w_e`:
///
/// ```text
/// a_e  = softmax_e(q_i . k_j / sqrt(d_k))     over the in-edges of i
/// a'_e = (a_e + [j == i]) * w_e
/// z_i  = sum_e a'_e v_j
/// ```
///
/// Returns `z` and the softmax coefficients `a_e` in in-edge order.
pub fn edge_attention_forward(edges: &InEdges, q: &Mat, k: &Mat, v: &Mat) -> (Mat, Vec<f64>) {
    let n = edges.n();
    let dk = q.ncols();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut attn = vec![0.0; edges.sources.len()];
    let mut z = Mat::zeros(n, v.ncols());
    for i in 0..n {
        let r = edges.range(i);
        if r.is_empty() {
            continue;
        }
        let mut max = f64::NEG_INFINITY;
        for e in r.clone() {
            let s = row_dot(q, i, k, edges.sources[e]) * scale;
            attn[e] = s;
            max = max.max(s);
        }
        let mut sum = 0.0;
        for e in r.clone() {
            attn[e] = (attn[e] - max).exp();
            sum += attn[e];
        }
        for e in r {
            attn[e] /= sum;
            let j = edges.sources[e];
            let coef = (attn[e] + if edges.is_self[e] { 1.0 } else { 0.0 }) * edges.weights[e];
            for c in 0..v.ncols() {
                z[(i, c)] += coef * v[(j, c)];
            }
        }
    }
    (z, attn)
}

/// Adjoints of [`edge_attention_forward`] given `dz`.
pub fn edge_attention_backward(
    edges: &InEdges,
    q: &Mat,
    k: &Mat,
    v: &Mat,
    attn: &[f64],
    dz: &Mat,
) -> (Mat, Mat, Mat) {
    let n = edges.n();
    let dk = q.ncols();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = Mat::zeros(q.nrows(), dk);
    let mut dkm = Mat::zeros(k.nrows(), dk);
    let mut dv = Mat::zeros(v.nrows(), v.ncols());
    let mut da = Vec::new();
    for i in 0..n {
        let r = edges.range(i);
        da.clear();
        let mut weighted = 0.0;
        for e in r.clone() {
            let j = edges.sources[e];
            let coef = (attn[e] + if edges.is_self[e] { 1.0 } else { 0.0 }) * edges.weights[e];
            for c in 0..v.ncols() {
                dv[(j, c)] += coef * dz[(i, c)];
            }
            let d = row_dot(dz, i, v, j) * edges.weights[e];
            weighted += attn[e] * d;
            da.push(d);
        }
        for (slot, e) in r.enumerate() {
            let ds = attn[e] * (da[slot] - weighted) * scale;
            let j = edges.sources[e];
            for c in 0..dk {
                dq[(i, c)] += ds * k[(j, c)];
                dkm[(j, c)] += ds * q[(i, c)];
            }
        }
    }
    (dq, dkm, dv)
}

//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Every forward evaluation records its operations on a fresh [`Tape`];
//! [`Tape::backward`] then walks the record in reverse and accumulates
//! adjoints. Only the operations the graph transformer needs are provided.

use nalgebra::DMatrix;

use super::attention::{edge_attention_backward, edge_attention_forward, InEdges};

pub type Mat = DMatrix<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Mask(Var, Mat),
    ConcatCols(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    EdgeAttention {
        q: Var,
        k: Var,
        v: Var,
        attn: Vec<f64>,
    },
    Bce {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<(usize, f64)>,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

pub struct Tape<'g> {
    nodes: Vec<Node>,
    in_edges: &'g InEdges,
}

impl<'g> Tape<'g> {
    pub fn new(in_edges: &'g InEdges) -> Self {
        Tape {
            nodes: Vec::new(),
            in_edges,
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    /// `x + 1 b` for a `1 x m` row `b`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let mut v = self.value(x).clone();
        let bias = self.value(b);
        for c in 0..v.ncols() {
            let bc = bias[(0, c)];
            v.column_mut(c).add_scalar_mut(bc);
        }
        self.push(v, Op::AddBias(x, b))
    }

    /// `x W + b` in one call.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let m = self.matmul(x, w);
        self.add_bias(m, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    /// Elementwise product with a constant (dropout mask).
    pub fn mask(&mut self, x: Var, mask: Mat) -> Var {
        let v = self.value(x).component_mul(&mask);
        self.push(v, Op::Mask(x, mask))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut c0 = 0;
        for p in &parts {
            let pv = self.value(*p);
            v.columns_mut(c0, pv.ncols()).copy_from(pv);
            c0 += pv.ncols();
        }
        self.push(v, Op::ConcatCols(parts))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 x m`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.shape();
        let mut xhat = Mat::zeros(n, m);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.sum() / m as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..m {
                xhat[(i, j)] = (xv[(i, j)] - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut y = xhat.clone();
        for j in 0..m {
            let (gj, bj) = (g[(0, j)], b[(0, j)]);
            y.column_mut(j).iter_mut().for_each(|a| *a = *a * gj + bj);
        }
        self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Edge-restricted scaled dot-product attention; see
    /// [`edge_attention_forward`]. Returns the output and the per-edge
    /// softmax coefficients.
    pub fn edge_attention(&mut self, q: Var, k: Var, v: Var) -> (Var, Vec<f64>) {
        let (z, attn) = edge_attention_forward(self.in_edges, self.value(q), self.value(k), self.value(v));
        let out = self.push(
            z,
            Op::EdgeAttention {
                q,
                k,
                v,
                attn: attn.clone(),
            },
        );
        (out, attn)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` over `targets`
    /// `(node, label)`, probabilities clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<(usize, f64)>) -> Var {
        let lv = self.value(logits);
        let probs: Vec<f64> = lv.iter().map(|&z| sigmoid(z)).collect();
        let m = targets.len() as f64;
        let loss: f64 = targets.iter().map(|&(i, y)| bce_term(probs[i], y)).sum::<f64>() / m;
        self.push(
            Mat::from_element(1, 1, loss),
            Op::Bce {
                logits,
                probs,
                targets,
            },
        )
    }

    /// Adjoints of `output` (a `1 x 1` node) with respect to every node.
    pub fn backward(&self, output: Var) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::from_element(1, 1, 1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = &g * self.value(*b).transpose();
                    let gb = self.value(*a).transpose() * &g;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let gb = Mat::from_fn(1, g.ncols(), |_, c| g.column(c).sum());
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = g.zip_map(xv, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mask(x, mask) => {
                    accumulate(&mut grads, *x, g.component_mul(mask));
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut grads, *p, g.columns(c0, w).into_owned());
                        c0 += w;
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, m) = g.shape();
                    let gv = self.value(*gamma);
                    let mut dgamma = Mat::zeros(1, m);
                    let mut dbeta = Mat::zeros(1, m);
                    let mut dx = Mat::zeros(n, m);
                    let mut dxhat = vec![0.0; m];
                    for i in 0..n {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..m {
                            let gij = g[(i, j)];
                            dgamma[(0, j)] += gij * xhat[(i, j)];
                            dbeta[(0, j)] += gij;
                            dxhat[j] = gij * gv[(0, j)];
                            sum_d += dxhat[j];
                            sum_dx += dxhat[j] * xhat[(i, j)];
                        }
                        let s = inv_std[i] / m as f64;
                        for j in 0..m {
                            dx[(i, j)] = s * (m as f64 * dxhat[j] - sum_d - xhat[(i, j)] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                    accumulate(&mut grads, *x, dx);
                }
                Op::EdgeAttention { q, k, v, attn } => {
                    let (dq, dk, dv) = edge_attention_backward(
                        self.in_edges,
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        attn,
                        &g,
                    );
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::Bce {
                    logits,
                    probs,
                    targets,
                } => {
                    let upstream = g[(0, 0)];
                    let lv = self.value(*logits);
                    let m = targets.len() as f64;
                    let mut dl = Mat::zeros(lv.nrows(), lv.ncols());
                    for &(i, y) in targets {
                        let p = probs[i];
                        // the clamp has zero slope outside (eps, 1 - eps)
                        if p > PROB_EPS && p < 1.0 - PROB_EPS {
                            dl[i] += upstream * (p - y) / m;
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => *acc += g,
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(t: &mut Tape, x: Var) -> Var {
        let xv = t.value(x).clone();
        let ones = t.leaf(Mat::from_element(xv.ncols(), 1, 1.0));
        let s = t.matmul(x, ones);
        let ones_r = t.leaf(Mat::from_element(1, xv.nrows(), 1.0));
        t.matmul(ones_r, s)
    }

    #[test]
    fn layer_norm_gradient_matches_differences() {
        let edges = InEdges::from_lists(vec![vec![(0, 1.0, true)], vec![(1, 1.0, true)]]);
        let x0 = Mat::from_row_slice(2, 3, &[0.3, -1.2, 2.0, 0.7, 0.1, -0.4]);
        let w = Mat::from_row_slice(3, 3, &[0.2, -0.5, 0.9, 1.1, 0.3, -0.7, 0.4, 0.8, 0.05]);
        let f = |x: &Mat| {
            let mut t = Tape::new(&edges);
            let xv = t.leaf(x.clone());
            let g = t.leaf(Mat::from_row_slice(1, 3, &[1.5, 0.5, -0.8]));
            let b = t.leaf(Mat::from_row_slice(1, 3, &[0.1, 0.2, 0.3]));
            let y = t.layer_norm(xv, g, b);
            let wv = t.leaf(w.clone());
            let z = t.matmul(y, wv);
            let r = t.relu(z);
            let s = total(&mut t, r);
            let grads = t.backward(s);
            (t.value(s)[(0, 0)], grads[xv.index()].clone().unwrap())
        };
        let (_, g) = f(&x0);
        let h = 1e-6;
        for idx in 0..6 {
            let mut xp = x0.clone();
            xp[idx] += h;
            let mut xm = x0.clone();
            xm[idx] -= h;
            let fd = (f(&xp).0 - f(&xm).0) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-7, "{idx}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn bce_clamped_gradient_is_zero() {
        let edges = InEdges::from_lists(vec![vec![(0, 1.0, true)]]);
        let mut t = Tape::new(&edges);
        let z = t.leaf(Mat::from_element(1, 1, 40.0));
        let l = t.bce_with_logits(z, vec![(0, 1.0)]);
        let g = t.backward(l);
        assert_eq!(g[z.index()].as_ref().unwrap()[0], 0.0);
        assert!(t.value(l)[0] <= -(1.0 - PROB_EPS).ln() + 1e-15);
    }
}

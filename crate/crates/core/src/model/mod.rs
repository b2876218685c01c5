//! Graph-transformer node classifier.
//!
//! Input embedding is a single linear projection of `[features | PE]`.
//! Each layer runs multi-head edge-weighted attention over in-neighborhoods,
//! an output projection, residual + layer norm, then a ReLU feed-forward
//! block with residual + layer norm. A linear head and a logistic squash give
//! one flood probability per node.

pub mod attention;
mod params;
pub mod tape;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::pe::LaplacianPe;
use crate::sampling::DataSplit;

pub use attention::InEdges;
pub use params::{GtParams, HeadParams, LayerParams};
use tape::{sigmoid, Tape, Var};
pub use tape::{Mat, PROB_EPS};
pub use train::{mc_dropout_predict, train, Adam, EpochRecord, McPrediction, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GtConfig {
    pub num_eigenvectors: usize,
    pub k_neighbours: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub ff_multiplier: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Flip PE column signs at random every training epoch.
    pub pe_sign_flip: bool,
    /// Share of feature variance retained by the PCA before graph building.
    pub pca_variance: f64,
}

impl Default for GtConfig {
    fn default() -> Self {
        GtConfig {
            num_eigenvectors: 8,
            k_neighbours: 10,
            num_heads: 4,
            hidden_dim: 32,
            num_layers: 2,
            dropout: 0.1,
            learning_rate: 0.005,
            ff_multiplier: 2,
            max_epochs: 300,
            patience: 40,
            seed: 42,
            pe_sign_flip: true,
            pca_variance: 0.95,
        }
    }
}

impl GtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_heads == 0 || self.hidden_dim == 0 || self.num_layers == 0 || self.ff_multiplier == 0 {
            return bad("num_heads, hidden_dim, num_layers and ff_multiplier must be positive".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return bad(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtModel {
    pub config: GtConfig,
    pub params: GtParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
    McDropout,
}

/// Graph in attention layout plus the concatenated `[features | PE]` input.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub in_edges: InEdges,
    pub x: Mat,
    pub n_features: usize,
}

impl ModelInput {
    pub fn new(graph: &Graph, features: &Mat, pe: &LaplacianPe) -> Result<Self> {
        Self::from_parts(graph, features, &pe.vectors)
    }

    pub fn from_parts(graph: &Graph, features: &Mat, pe_vectors: &Mat) -> Result<Self> {
        let n = graph.n;
        if features.nrows() != n || pe_vectors.nrows() != n {
            return Err(Error::InvalidArgument(format!(
                "graph has {n} nodes, features {} rows, PE {} rows",
                features.nrows(),
                pe_vectors.nrows()
            )));
        }
        if !graph.has_self_loops() {
            return Err(Error::InvalidArgument("every node needs a self-loop".into()));
        }
        let (f, k) = (features.ncols(), pe_vectors.ncols());
        let mut x = Mat::zeros(n, f + k);
        x.columns_mut(0, f).copy_from(features);
        x.columns_mut(f, k).copy_from(pe_vectors);
        Ok(ModelInput {
            in_edges: InEdges::from_graph(graph),
            x,
            n_features: f,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Copy with the PE block multiplied column-wise by `signs`.
    pub fn with_pe_signs(&self, signs: &[f64]) -> Self {
        let mut out = self.clone();
        for (c, s) in signs.iter().enumerate() {
            out.x.column_mut(self.n_features + c).scale_mut(*s);
        }
        out
    }
}

/// Node indices of the three splits, resolved against a graph's node ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeMasks {
    pub fn from_split(split: &DataSplit, node_ids: &[i64]) -> Result<Self> {
        let index: std::collections::HashMap<i64, usize> =
            node_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let resolve = |ids: &[i64]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    index
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::InvalidArgument(format!("split id {id} is not a graph node")))
                })
                .collect()
        };
        Ok(NodeMasks {
            train: resolve(&split.train)?,
            val: resolve(&split.val)?,
            test: resolve(&split.test)?,
        })
    }
}

/// Forward pass outputs, including the per-layer, per-head softmax
/// coefficients in in-edge order (before edge-weight scaling).
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub attention: Vec<Vec<Vec<f64>>>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Mat {
    let keep = 1.0 / (1.0 - p);
    Mat::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep })
}

struct Built {
    logits: Var,
    params: Vec<Var>,
    attention: Vec<Vec<Vec<f64>>>,
}

fn check(t: &Tape, v: Var, what: &str) -> Result<()> {
    if t.value(v).iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn build(tape: &mut Tape, input: &ModelInput, model: &GtModel, mode: Mode, seed: u64) -> Result<Built> {
    let params = &model.params;
    if params.input_dim() != input.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "model expects {} inputs, got {}",
            params.input_dim(),
            input.input_dim()
        )));
    }
    let p_drop = match mode {
        Mode::Eval => 0.0,
        Mode::Train | Mode::McDropout => model.config.dropout,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = input.n();

    let pvars: Vec<Var> = params.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
    let mut it = pvars.iter().copied();
    let mut next = || it.next().expect("parameter traversal");

    let x = tape.leaf(input.x.clone());
    let (w_in, b_in) = (next(), next());
    let mut h = tape.linear(x, w_in, b_in);
    check(tape, h, "input projection")?;

    let mut attention = Vec::with_capacity(params.layers.len());
    for (li, layer) in params.layers.iter().enumerate() {
        let mut head_out = Vec::with_capacity(layer.heads.len());
        let mut head_attn = Vec::with_capacity(layer.heads.len());
        for _ in &layer.heads {
            let (wq, wk, wv) = (next(), next(), next());
            let q = tape.matmul(h, wq);
            let k = tape.matmul(h, wk);
            let v = tape.matmul(h, wv);
            let (z, a) = tape.edge_attention(q, k, v);
            head_out.push(z);
            head_attn.push(a);
        }
        attention.push(head_attn);
        let (w_o, b_o, g1, be1, w1, b1, w2, b2, g2, be2) =
            (next(), next(), next(), next(), next(), next(), next(), next(), next(), next());
        let cat = tape.concat_cols(head_out);
        let mut o = tape.linear(cat, w_o, b_o);
        if p_drop > 0.0 {
            let m = dropout_mask(&mut rng, n, layer.w_o.ncols(), p_drop);
            o = tape.mask(o, m);
        }
        let r = tape.add(h, o);
        h = tape.layer_norm(r, g1, be1);
        check(tape, h, &format!("layer {li} attention block"))?;

        let f = tape.linear(h, w1, b1);
        let mut f = tape.relu(f);
        if p_drop > 0.0 {
            let m = dropout_mask(&mut rng, n, layer.ff1_w.ncols(), p_drop);
            f = tape.mask(f, m);
        }
        let f2 = tape.linear(f, w2, b2);
        let r = tape.add(h, f2);
        h = tape.layer_norm(r, g2, be2);
        check(tape, h, &format!("layer {li} feed-forward block"))?;
    }
    let (wc, bc) = (next(), next());
    let logits = tape.linear(h, wc, bc);
    check(tape, logits, "classifier head")?;
    Ok(Built {
        logits,
        params: pvars,
        attention,
    })
}

pub fn forward_trace(input: &ModelInput, model: &GtModel, mode: Mode, seed: u64) -> Result<ForwardTrace> {
    let mut tape = Tape::new(&input.in_edges);
    let built = build(&mut tape, input, model, mode, seed)?;
    let logits: Vec<f64> = tape.value(built.logits).iter().copied().collect();
    let probs = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok(ForwardTrace {
        logits,
        probs,
        attention: built.attention,
    })
}

/// Per-node flood probabilities. Dropout masks derive from `seed` in
/// `Train` and `McDropout` modes; `Eval` ignores the seed.
pub fn forward(
    graph: &Graph,
    features: &Mat,
    pe: &LaplacianPe,
    model: &GtModel,
    mode: Mode,
    seed: u64,
) -> Result<Vec<f64>> {
    let input = ModelInput::new(graph, features, pe)?;
    Ok(forward_trace(&input, model, mode, seed)?.probs)
}

/// Mean binary cross-entropy over `mask`, probabilities clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce_loss(probs: &[f64], labels: &[u8], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let sum: f64 = mask
        .iter()
        .map(|&i| tape::bce_term(probs[i], f64::from(labels[i])))
        .sum();
    Ok(sum / mask.len() as f64)
}

/// Loss over `mask` and its exact gradient with respect to every parameter.
pub fn loss_and_gradients(
    input: &ModelInput,
    model: &GtModel,
    labels: &[u8],
    mask: &[usize],
    mode: Mode,
    seed: u64,
) -> Result<(f64, GtParams)> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut tape = Tape::new(&input.in_edges);
    let built = build(&mut tape, input, model, mode, seed)?;
    let targets = mask.iter().map(|&i| (i, f64::from(labels[i]))).collect();
    let loss = tape.bce_with_logits(built.logits, targets);
    let loss_value = tape.value(loss)[(0, 0)];
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = tape.backward(loss);
    let mut out = model.params.zeros_like();
    for (slot, var) in out.tensors_mut().into_iter().zip(&built.params) {
        if let Some(g) = &grads[var.index()] {
            slot.copy_from(g);
        }
    }
    Ok((loss_value, out))
}

impl GtModel {
    pub fn new(config: GtConfig, input_dim: usize) -> Result<Self> {
        let params = GtParams::init(&config, input_dim, config.seed)?;
        Ok(GtModel { config, params })
    }

    pub fn predict(&self, input: &ModelInput) -> Result<Vec<f64>> {
        Ok(forward_trace(input, self, Mode::Eval, 0)?.probs)
    }
}

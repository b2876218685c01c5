use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GtConfig;
use crate::error::{Error, Result};

type Mat = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub w_o: Mat,
    pub b_o: Mat,
    pub ln1_gamma: Mat,
    pub ln1_beta: Mat,
    pub ff1_w: Mat,
    pub ff1_b: Mat,
    pub ff2_w: Mat,
    pub ff2_b: Mat,
    pub ln2_gamma: Mat,
    pub ln2_beta: Mat,
}

/// All trainable tensors. Row vectors (`1 x m`) hold biases and layer-norm
/// affine parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtParams {
    pub input_w: Mat,
    pub input_b: Mat,
    pub layers: Vec<LayerParams>,
    pub cls_w: Mat,
    pub cls_b: Mat,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let vals: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Mat::from_row_slice(rows, cols, &vals)
}

impl GtParams {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(config: &GtConfig, input_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let dk = config.head_dim();
        let ff = h * config.ff_multiplier;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_w = glorot(&mut rng, input_dim, h);
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let heads = (0..config.num_heads)
                .map(|_| HeadParams {
                    w_q: glorot(&mut rng, h, dk),
                    w_k: glorot(&mut rng, h, dk),
                    w_v: glorot(&mut rng, h, dk),
                })
                .collect();
            layers.push(LayerParams {
                heads,
                w_o: glorot(&mut rng, h, h),
                b_o: Mat::zeros(1, h),
                ln1_gamma: Mat::from_element(1, h, 1.0),
                ln1_beta: Mat::zeros(1, h),
                ff1_w: glorot(&mut rng, h, ff),
                ff1_b: Mat::zeros(1, ff),
                ff2_w: glorot(&mut rng, ff, h),
                ff2_b: Mat::zeros(1, h),
                ln2_gamma: Mat::from_element(1, h, 1.0),
                ln2_beta: Mat::zeros(1, h),
            });
        }
        Ok(GtParams {
            input_w,
            input_b: Mat::zeros(1, h),
            layers,
            cls_w: glorot(&mut rng, h, 1),
            cls_b: Mat::zeros(1, 1),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_w.nrows()
    }

    /// Tensors in a fixed traversal order.
    pub fn tensors(&self) -> Vec<&Mat> {
        let mut out = vec![&self.input_w, &self.input_b];
        for l in &self.layers {
            for h in &l.heads {
                out.extend([&h.w_q, &h.w_k, &h.w_v]);
            }
            out.extend([
                &l.w_o,
                &l.b_o,
                &l.ln1_gamma,
                &l.ln1_beta,
                &l.ff1_w,
                &l.ff1_b,
                &l.ff2_w,
                &l.ff2_b,
                &l.ln2_gamma,
                &l.ln2_beta,
            ]);
        }
        out.extend([&self.cls_w, &self.cls_b]);
        out
    }

    /// Same order as [`GtParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.input_w, &mut self.input_b];
        for l in &mut self.layers {
            for h in &mut l.heads {
                out.extend([&mut h.w_q, &mut h.w_k, &mut h.w_v]);
            }
            out.extend([
                &mut l.w_o,
                &mut l.b_o,
                &mut l.ln1_gamma,
                &mut l.ln1_beta,
                &mut l.ff1_w,
                &mut l.ff1_b,
                &mut l.ff2_w,
                &mut l.ff2_b,
                &mut l.ln2_gamma,
                &mut l.ln2_beta,
            ]);
        }
        out.extend([&mut self.cls_w, &mut self.cls_b]);
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) {
            Ok(())
        } else {
            Err(Error::NonFinite("parameters".into()))
        }
    }

    /// Checks tensor shapes against a configuration.
    pub fn check_shapes(&self, config: &GtConfig, input_dim: usize) -> Result<()> {
        let reference = GtParams::init(config, input_dim, 0)?;
        let ok = reference.layers.len() == self.layers.len()
            && reference.layers.iter().zip(&self.layers).all(|(a, b)| a.heads.len() == b.heads.len())
            && reference
                .tensors()
                .iter()
                .zip(self.tensors())
                .all(|(a, b)| a.shape() == b.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("parameter shapes do not match configuration".into()))
        }
    }
}

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward_trace, loss_and_gradients, GtModel, GtParams, Mode, ModelInput, NodeMasks};
use crate::error::{Error, Result};
use crate::metrics::auc_roc;
use crate::pe::pe_signs;
use crate::rng::derive_seed;

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: GtParams,
    v: GtParams,
    t: i32,
}

impl Adam {
    pub fn new(params: &GtParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut GtParams, grads: &GtParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Not serialized, so that artifacts stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainHistory {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,val_auc,best")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.val_auc,
                u8::from(r.epoch == self.best_epoch)
            )?;
        }
        Ok(())
    }
}

/// Full-graph training on the train mask with early stopping on validation
/// loss. Returns the parameters of the best validation epoch.
pub fn train(
    input: &ModelInput,
    labels: &[u8],
    masks: &NodeMasks,
    config: &super::GtConfig,
) -> Result<(GtParams, TrainHistory)> {
    config.validate()?;
    if masks.train.is_empty() || masks.val.is_empty() {
        return Err(Error::EmptyMask);
    }
    if labels.len() != input.n() {
        return Err(Error::InvalidArgument("one label per node is required".into()));
    }
    let start = Instant::now();
    let mut model = GtModel::new(config.clone(), input.input_dim())?;
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let k_pe = input.input_dim() - input.n_features;
    let val_labels: Vec<u8> = masks.val.iter().map(|&i| labels[i]).collect();

    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut epochs = Vec::new();
    let mut stale = 0;
    for epoch in 0..config.max_epochs {
        let epoch_seed = derive_seed(config.seed, epoch as u64 + 1);
        let step_input;
        let step_ref = if config.pe_sign_flip && k_pe > 0 {
            step_input = input.with_pe_signs(&pe_signs(k_pe, derive_seed(epoch_seed, 1)));
            &step_input
        } else {
            input
        };
        let (train_loss, grads) =
            loss_and_gradients(step_ref, &model, labels, &masks.train, Mode::Train, derive_seed(epoch_seed, 2))
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged(epoch),
                    other => other,
                })?;
        adam.step(&mut model.params, &grads);
        if model.params.check_finite().is_err() {
            return Err(Error::Diverged(epoch));
        }

        let trace = forward_trace(input, &model, Mode::Eval, 0).map_err(|_| Error::Diverged(epoch))?;
        let val_loss = super::bce_loss(&trace.probs, labels, &masks.val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        let val_scores: Vec<f64> = masks.val.iter().map(|&i| trace.probs[i]).collect();
        let val_auc = auc_roc(&val_scores, &val_labels).unwrap_or(f64::NAN);
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let history = TrainHistory {
        epochs,
        best_epoch: best.1,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((best.2, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPrediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and population standard deviation of `passes` stochastic forward
/// passes with dropout active. Pass `p` draws its masks from
/// `derive_seed(seed, p)`, so results do not depend on scheduling.
pub fn mc_dropout_predict(input: &ModelInput, model: &GtModel, passes: usize, seed: u64) -> Result<McPrediction> {
    if passes == 0 {
        return Err(Error::InvalidArgument("passes must be >= 1".into()));
    }
    let runs: Vec<Vec<f64>> = (0..passes)
        .into_par_iter()
        .map(|p| forward_trace(input, model, Mode::McDropout, derive_seed(seed, p as u64)).map(|t| t.probs))
        .collect::<Result<_>>()?;
    let n = input.n();
    let mut mean = vec![0.0; n];
    for r in &runs {
        for i in 0..n {
            mean[i] += r[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= passes as f64);
    let mut std = vec![0.0; n];
    for r in &runs {
        for i in 0..n {
            let d = r[i] - mean[i];
            std[i] += d * d;
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / passes as f64).sqrt());
    // exact zero when every pass agrees
    for i in 0..n {
        if runs.iter().all(|r| r[i] == runs[0][i]) {
            std[i] = 0.0;
            mean[i] = runs[0][i];
        }
    }
    Ok(McPrediction { mean, std })
}

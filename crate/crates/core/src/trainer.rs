//! Full-batch gradient descent and per-sample SGD with per-epoch tracing:
//! loss, per-group movement from the initial weights, optional sigma_min of
//! the feature matrix, and optional empirical-kernel checkpoints.

use crate::data::Dataset;
use crate::grad::{grad_sample, loss_and_grad, ParamGrad};
use crate::kernel::KernelMatrix;
use crate::model::{batch_features, ModelParams, ScalingScheme};
use crate::numerics::{min_singular_value, norm2, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Gd,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct HyperParams {
    pub gamma: f64,
    pub epochs: usize,
    pub mode: TrainMode,
    /// Checkpoint the empirical kernel every k epochs (0 = off). Epoch 0 and
    /// the final epoch are always included when enabled.
    pub kernel_checkpoint_every: usize,
    /// Sample-block size used when computing kernel checkpoints.
    pub kernel_block_size: usize,
    /// Recompute sigma_min(F_pre) every k epochs (None = off). A full
    /// decomposition per epoch would dominate the runtime, hence the cadence.
    pub alpha_track: Option<usize>,
}

impl HyperParams {
    pub fn gd(gamma: f64, epochs: usize) -> Self {
        HyperParams {
            gamma,
            epochs,
            mode: TrainMode::Gd,
            kernel_checkpoint_every: 0,
            kernel_block_size: 8,
            alpha_track: None,
        }
    }

    pub fn sgd(gamma: f64, epochs: usize) -> Self {
        HyperParams { mode: TrainMode::Sgd, ..HyperParams::gd(gamma, epochs) }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Frobenius distance of each group from its initialization.
    pub move_q: f64,
    pub move_k: f64,
    pub move_v: f64,
    pub move_o: f64,
    /// sigma_min(F_pre) at this epoch, when tracking is enabled and due.
    pub alpha_t: Option<f64>,
    /// (1 - gamma alpha^2 / 2)^epoch * loss0, when alpha tracking is enabled.
    pub envelope: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
    pub final_params: ModelParams,
    pub kernel_checkpoints: Vec<(usize, KernelMatrix)>,
}

impl TrainTrace {
    pub fn initial_loss(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Per-epoch movement series, one [Q, K, V, O] row per record.
pub fn weight_movement(trace: &TrainTrace) -> Vec<[f64; 4]> {
    trace
        .records
        .iter()
        .map(|r| [r.move_q, r.move_k, r.move_v, r.move_o])
        .collect()
}

fn movement(from: &ModelParams, to: &ModelParams) -> [f64; 4] {
    [
        to.w_q.sub(&from.w_q).frobenius_norm(),
        to.w_k.sub(&from.w_k).frobenius_norm(),
        to.w_v.sub(&from.w_v).frobenius_norm(),
        norm2(&to.w_o.iter().zip(&from.w_o).map(|(a, b)| a - b).collect::<Vec<f64>>()),
    ]
}

struct TraceBuilder<'a> {
    dataset: &'a Dataset,
    params0: &'a ModelParams,
    scaling: &'a ScalingScheme,
    hyper: &'a HyperParams,
    records: Vec<TrainRecord>,
    checkpoints: Vec<(usize, KernelMatrix)>,
    loss0: f64,
    alpha0: Option<f64>,
}

impl<'a> TraceBuilder<'a> {
    fn record(&mut self, epoch: usize, loss: f64, params: &ModelParams) -> Result<()> {
        if epoch == 0 {
            self.loss0 = loss;
            if self.hyper.alpha_track.is_some() {
                let fp = batch_features(self.dataset, params, self.scaling)?;
                self.alpha0 = Some(min_singular_value(&fp)?);
            }
        }
        let due = |every: usize| every > 0 && (epoch % every == 0 || epoch == self.hyper.epochs);
        let alpha_t = match self.hyper.alpha_track {
            Some(every) if due(every.max(1)) => {
                if epoch == 0 {
                    self.alpha0
                } else {
                    let fp = batch_features(self.dataset, params, self.scaling)?;
                    Some(min_singular_value(&fp)?)
                }
            }
            _ => None,
        };
        let envelope = self.alpha0.map(|a| {
            let rate = 1.0 - self.hyper.gamma * a * a / 2.0;
            rate.powi(epoch as i32) * self.loss0
        });
        if due(self.hyper.kernel_checkpoint_every) {
            let k = crate::kernel::empirical_ntk_at(
                self.dataset,
                params,
                self.scaling,
                self.hyper.kernel_block_size,
                epoch,
            )?;
            self.checkpoints.push((epoch, k));
        }
        let mv = movement(self.params0, params);
        self.records.push(TrainRecord {
            epoch,
            loss,
            move_q: mv[0],
            move_k: mv[1],
            move_v: mv[2],
            move_o: mv[3],
            alpha_t,
            envelope,
        });
        Ok(())
    }

    fn diverged(&self, loss: f64) -> bool {
        !loss.is_finite() || (self.records.first().map_or(false, |r| loss > 1e6 * r.loss))
    }

    fn into_trace(self, final_params: ModelParams) -> TrainTrace {
        TrainTrace {
            records: self.records,
            final_params,
            kernel_checkpoints: self.checkpoints,
        }
    }
}

/// Full-batch GD per the simultaneous update rule: all four groups step from
/// the same theta^t. The trace records every epoch including epoch 0.
pub fn gd_train(
    dataset: &Dataset,
    params0: &ModelParams,
    scaling: &ScalingScheme,
    hyper: &HyperParams,
) -> Result<TrainTrace> {
    assert!(hyper.mode == TrainMode::Gd, "gd_train called with SGD hyper-params");
    let mut params = params0.clone();
    let mut b = TraceBuilder {
        dataset,
        params0,
        scaling,
        hyper,
        records: vec![],
        checkpoints: vec![],
        loss0: 0.0,
        alpha0: None,
    };
    for epoch in 0..=hyper.epochs {
        let (loss, grad, _f) = loss_and_grad(dataset, &params, scaling)?;
        if b.diverged(loss) {
            b.records.push(TrainRecord {
                epoch,
                loss,
                move_q: f64::NAN,
                move_k: f64::NAN,
                move_v: f64::NAN,
                move_o: f64::NAN,
                alpha_t: None,
                envelope: None,
            });
            return Err(Error::Diverged { epoch, trace: Box::new(b.into_trace(params)) });
        }
        b.record(epoch, loss, &params)?;
        if epoch < hyper.epochs {
            params.add_scaled_grad(&grad, -hyper.gamma);
        }
    }
    Ok(b.into_trace(params))
}

/// Per-sample SGD: each epoch is one ordered pass, step n uses sample n only.
/// Returns the trace and a uniformly drawn step index (the "theta hat"
/// selection), deterministic per rng seed.
pub fn sgd_train(
    dataset: &Dataset,
    params0: &ModelParams,
    scaling: &ScalingScheme,
    hyper: &HyperParams,
    rng: &mut Rng,
) -> Result<(TrainTrace, usize)> {
    assert!(hyper.mode == TrainMode::Sgd, "sgd_train called with GD hyper-params");
    let n = dataset.len();
    let mut params = params0.clone();
    let mut b = TraceBuilder {
        dataset,
        params0,
        scaling,
        hyper,
        records: vec![],
        checkpoints: vec![],
        loss0: 0.0,
        alpha0: None,
    };
    for epoch in 0..=hyper.epochs {
        let loss = crate::model::loss(dataset, &params, scaling)?;
        if b.diverged(loss) {
            return Err(Error::Diverged { epoch, trace: Box::new(b.into_trace(params)) });
        }
        b.record(epoch, loss, &params)?;
        if epoch == hyper.epochs {
            break;
        }
        for i in 0..n {
            let gi = grad_sample(&dataset.inputs[i], &params, scaling)?;
            let f_i = crate::model::forward(&dataset.inputs[i], &params, scaling)?;
            let r = f_i - dataset.targets[i];
            let mut step = ParamGrad::zeros(params.dims);
            step.add_scaled(&gi, r);
            params.add_scaled_grad(&step, -hyper.gamma);
        }
    }
    let total_steps = (hyper.epochs * n).max(1);
    let theta_hat = rng.next_index(total_steps);
    Ok((b.into_trace(params), theta_hat))
}

//! End-to-end training: GNN forward, flow solve, loss, adjoint, GNN reverse pass,
//! gradient-descent update. The baseline regresses permeability directly and never
//! touches the solver.
//!
//! The loss actually minimized is `J = ½ s² (K − K*)²` with a constant `s`
//! (default `1 / mean K*` over the training split), so `J` is dimensionless.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{adjoint_with_cotangent, gradient_wrt_conductance};
use crate::error::{Error, Result};
use crate::gnn::{
    baseline_backward, baseline_forward, gnn_backward, gnn_forward, Checkpoint, GnnDims, ModelKind,
    ModelParameters, Progress,
};
use crate::network::derive_seed;
use crate::network::{compute_norm_stats, normalize, NormStats, PoreNetwork};
use crate::solver;

/// `½ (K − K*)²`.
pub fn loss(k: f64, k_star: f64) -> f64 {
    crate::adjoint::squared_loss(k, k_star)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    /// `w ← w − η ∇J`.
    Gd,
    /// Adam with bias correction; not used by the acceptance tests.
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub learning_rate: f64,
    pub num_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `s` in `½ s² (K − K*)²`; `None` uses `1 / mean K*` of the training split.
    pub loss_scale: Option<f64>,
    /// Write a checkpoint every this many epochs (0 disables intermediate checkpoints).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub validation_fraction: f64,
    pub dims: GnnDims,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Embedded,
            learning_rate: 0.05,
            num_epochs: 200,
            batch_size: 10,
            seed: 0,
            loss_scale: None,
            checkpoint_every: 0,
            checkpoint_dir: None,
            validation_fraction: 0.1,
            dims: GnnDims::default(),
            optimizer: Optimizer::Gd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if self.num_epochs == 0 {
            return Err(Error::InvalidArgument(
                "num_epochs must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(
                "validation_fraction must be in [0, 1)".into(),
            ));
        }
        if let Some(s) = self.loss_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument("loss_scale must be positive".into()));
            }
        }
        self.dims.validate()
    }
}

/// Gradient of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub loss: f64,
    pub prediction: f64,
    pub grad: Vec<f64>,
    /// Linear solves performed (forward plus adjoint).
    pub solves: usize,
}

fn target(net: &PoreNetwork) -> Result<f64> {
    match net.target_permeability {
        Some(k) if k.is_finite() => Ok(k),
        _ => Err(Error::Validation(
            "network has no finite target_permeability".into(),
        )),
    }
}

/// Permeability predicted by either model for an already normalized network.
pub fn predict(params: &ModelParameters, network: &PoreNetwork) -> Result<f64> {
    match params {
        ModelParameters::Embedded(p) => {
            let (g, _) = gnn_forward(network, p)?;
            Ok(solver::forward(network, &g)?.permeability)
        }
        ModelParameters::Baseline(p) => Ok(baseline_forward(network, p)?.0),
    }
}

/// `J` and `dJ/dw` for one normalized sample under the scaled loss.
pub fn sample_gradient(
    params: &ModelParameters,
    network: &PoreNetwork,
    loss_scale: f64,
) -> Result<SampleGradient> {
    let k_star = target(network)?;
    let s2 = loss_scale * loss_scale;
    match params {
        ModelParameters::Embedded(p) => {
            let (g, tape) = gnn_forward(network, p)?;
            let sol = solver::forward(network, &g)?;
            let k = sol.permeability;
            let dj_dk = s2 * (k - k_star);
            let adj = adjoint_with_cotangent(network, &g, &sol, dj_dk)?;
            let dj_dg = gradient_wrt_conductance(network, &g, &sol, &adj)?;
            let (grad, _) = gnn_backward(&tape, p, &dj_dg)?;
            Ok(SampleGradient {
                loss: s2 * loss(k, k_star),
                prediction: k,
                grad: grad.to_flat(),
                solves: sol.system.counters().solves(),
            })
        }
        ModelParameters::Baseline(p) => {
            let (k, tape) = baseline_forward(network, p)?;
            let grad = baseline_backward(&tape, p, s2 * (k - k_star))?;
            Ok(SampleGradient {
                loss: s2 * loss(k, k_star),
                prediction: k,
                grad: grad.to_flat(),
                solves: 0,
            })
        }
    }
}

/// Mean loss and mean gradient over a batch; reduction order is the batch order.
pub fn batch_gradient(
    params: &ModelParameters,
    batch: &[&PoreNetwork],
    ids: &[usize],
    loss_scale: f64,
) -> Result<(f64, Vec<f64>, usize)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per: Vec<SampleGradient> = batch
        .par_iter()
        .zip(ids.par_iter())
        .map(|(net, &id)| {
            sample_gradient(params, net, loss_scale).map_err(|e| Error::Sample {
                sample: id,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mut grad = vec![0.0; params.num_params()];
    let mut total = 0.0;
    let mut solves = 0;
    for s in &per {
        total += s.loss;
        solves += s.solves;
        for (a, b) in grad.iter_mut().zip(&s.grad) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|v| *v /= n);
    let mean = total / n;
    if !mean.is_finite() {
        return Err(Error::NonFinite {
            layer: "loss".into(),
            index: 0,
        });
    }
    Ok((mean, grad, solves))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParameters,
    pub stats: NormStats,
    pub progress: Progress,
    /// Linear solves performed by this process (not persisted).
    pub solver_solves: usize,
}

impl TrainState {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.params, &self.stats, self.progress.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(TrainState {
            params: ck.parameters()?,
            stats: ck.norm_stats.clone(),
            progress: ck.progress.clone(),
            solver_solves: 0,
        })
    }
}

/// One update on a batch of normalized samples. Returns the mean loss before the update.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&PoreNetwork],
    ids: &[usize],
    learning_rate: f64,
    optimizer: Optimizer,
) -> Result<f64> {
    let (mean, grad, solves) =
        batch_gradient(&state.params, batch, ids, state.progress.loss_scale)?;
    state.solver_solves += solves;
    let mut w = state.params.to_flat();
    match optimizer {
        Optimizer::Gd => {
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= learning_rate * gi;
            }
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let pr = &mut state.progress;
            if pr.moment1.len() != w.len() {
                pr.moment1 = vec![0.0; w.len()];
                pr.moment2 = vec![0.0; w.len()];
            }
            let t = (pr.steps + 1) as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for k in 0..w.len() {
                pr.moment1[k] = beta1 * pr.moment1[k] + (1.0 - beta1) * grad[k];
                pr.moment2[k] = beta2 * pr.moment2[k] + (1.0 - beta2) * grad[k] * grad[k];
                let mh = pr.moment1[k] / c1;
                let vh = pr.moment2[k] / c2;
                w[k] -= learning_rate * mh / (vh.sqrt() + epsilon);
            }
        }
    }
    state.params.set_flat(&w)?;
    state.progress.steps += 1;
    Ok(mean)
}

/// Seeded 90/10-style split; returns `(train, validation)` indices, each sorted.
pub fn split_indices(
    count: usize,
    validation_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 10)));
    let n_val = if count >= 2 {
        ((count as f64 * validation_fraction).round() as usize).min(count - 1)
    } else {
        0
    };
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Sample order for an epoch; depends only on the seed and the epoch number.
pub fn epoch_order(train: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = train.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        epoch as u64,
        11,
    )));
    order
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_ms: u64,
}

/// Mean scaled loss over normalized samples, without gradients.
pub fn mean_loss(
    params: &ModelParameters,
    networks: &[&PoreNetwork],
    loss_scale: f64,
) -> Result<f64> {
    let s2 = loss_scale * loss_scale;
    let losses: Vec<f64> = networks
        .par_iter()
        .map(|n| Ok(s2 * loss(predict(params, n)?, target(n)?)))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Dataset split, normalized, with a model ready to train.
pub struct Trainer {
    pub config: TrainConfig,
    pub state: TrainState,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    networks: Vec<PoreNetwork>,
}

impl Trainer {
    /// Splits `dataset`, fits normalization on the training part, initializes and
    /// calibrates the output scale so the initial mean prediction matches the mean target.
    pub fn new(config: TrainConfig, dataset: &[PoreNetwork]) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        for (i, n) in dataset.iter().enumerate() {
            target(n).map_err(|e| Error::Sample {
                sample: i,
                source: Box::new(e),
            })?;
        }
        let (train_ids, val_ids) =
            split_indices(dataset.len(), config.validation_fraction, config.seed);
        let train_raw: Vec<PoreNetwork> = train_ids.iter().map(|&i| dataset[i].clone()).collect();
        let stats = compute_norm_stats(&train_raw)?;
        let networks = normalize_all(dataset, &stats)?;

        let mut params =
            ModelParameters::init(config.model, config.dims, derive_seed(config.seed, 0, 12));
        let train: Vec<&PoreNetwork> = train_ids.iter().map(|&i| &networks[i]).collect();
        let mean_target = train
            .iter()
            .map(|n| n.target_permeability.unwrap())
            .sum::<f64>()
            / train.len() as f64;
        let raw: Vec<f64> = train
            .par_iter()
            .map(|n| predict(&params, n))
            .collect::<Result<_>>()?;
        let mean_raw = raw.iter().sum::<f64>() / raw.len() as f64;
        // predictions are linear in the output scale for both models
        params.set_output_scale(mean_target / mean_raw);
        if !(params.output_scale() > 0.0 && params.output_scale().is_finite()) {
            return Err(Error::Validation(
                "cannot calibrate output scale: non-positive mean target".into(),
            ));
        }
        let loss_scale = config.loss_scale.unwrap_or(1.0 / mean_target);

        Ok(Trainer {
            state: TrainState {
                params,
                stats,
                progress: Progress {
                    loss_scale,
                    ..Progress::default()
                },
                solver_solves: 0,
            },
            config,
            train_ids,
            val_ids,
            networks,
        })
    }

    /// Continues from a checkpoint written by a run with the same config and dataset.
    pub fn resume(
        config: TrainConfig,
        dataset: &[PoreNetwork],
        checkpoint: &Checkpoint,
    ) -> Result<Self> {
        config.validate()?;
        if checkpoint.model != config.model || checkpoint.dims != config.dims {
            return Err(Error::Validation(
                "checkpoint model does not match the training config".into(),
            ));
        }
        let (train_ids, val_ids) =
            split_indices(dataset.len(), config.validation_fraction, config.seed);
        let state = TrainState::from_checkpoint(checkpoint)?;
        let networks = normalize_all(dataset, &state.stats)?;
        Ok(Trainer {
            config,
            state,
            train_ids,
            val_ids,
            networks,
        })
    }

    pub fn networks(&self) -> &[PoreNetwork] {
        &self.networks
    }

    pub fn done(&self) -> bool {
        self.state.progress.epoch >= self.config.num_epochs
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.state.progress.epoch + 1;
        let order = epoch_order(&self.train_ids, self.config.seed, epoch);
        let mut weighted = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&PoreNetwork> = chunk.iter().map(|&i| &self.networks[i]).collect();
            let mean = train_step(
                &mut self.state,
                &batch,
                chunk,
                self.config.learning_rate,
                self.config.optimizer,
            )?;
            weighted += mean * chunk.len() as f64;
        }
        let train_loss = weighted / order.len() as f64;
        let val_loss = if self.val_ids.is_empty() {
            None
        } else {
            let val: Vec<&PoreNetwork> = self.val_ids.iter().map(|&i| &self.networks[i]).collect();
            Some(mean_loss(
                &self.state.params,
                &val,
                self.state.progress.loss_scale,
            )?)
        };
        let pr = &mut self.state.progress;
        pr.epoch = epoch;
        pr.train_loss.push(train_loss);
        pr.val_loss.push(val_loss);
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        if let Some(dir) = &self.config.checkpoint_dir {
            if self.config.checkpoint_every > 0 && epoch % self.config.checkpoint_every == 0 {
                self.state
                    .checkpoint()
                    .save(dir.join(format!("checkpoint_{epoch:05}.json")))?;
            }
        }
        Ok(log)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<()> {
        while !self.done() {
            let log = self.run_epoch()?;
            on_epoch(&log);
        }
        Ok(())
    }
}

fn normalize_all(dataset: &[PoreNetwork], stats: &NormStats) -> Result<Vec<PoreNetwork>> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, n)| {
            normalize(n, stats).map_err(|e| Error::Sample {
                sample: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Trains to completion and returns the final state.
pub fn train(
    config: TrainConfig,
    dataset: &[PoreNetwork],
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainState> {
    let mut t = Trainer::new(config, dataset)?;
    t.run(on_epoch)?;
    Ok(t.state)
}

#[cfg(test)]
mod tests;

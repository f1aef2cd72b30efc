//! Adam, the step learning-rate schedule, mini-batching and early stopping.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Normalizer, Sample, SplitSet};
use crate::error::{Error, Result};
use crate::model::SeqModel;
use crate::tensor::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub decayed_lr: f64,
    /// The decayed rate applies from this epoch on.
    pub decay_after_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.01,
            decayed_lr: 0.001,
            decay_after_epochs: 20,
            max_epochs: 300,
            batch_size: 32,
            patience: 50,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| r > 0.0 && r.is_finite();
        if !rate_ok(self.initial_lr) || !rate_ok(self.decayed_lr) {
            return Err(Error::Validation("learning rates must be positive".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Validation("max_epochs, batch_size and patience must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !rate_ok(c) {
                return Err(Error::Validation("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.decay_after_epochs {
        cfg.initial_lr
    } else {
        cfg.decayed_lr
    }
}

/// First and second moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            (params.len(), state.m.len()),
            (grads.len(), 1),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let p = p.data_mut();
        for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub lr: f64,
    /// Wall time spent on the epoch.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    /// Index of the last epoch run.
    pub fn last_epoch(&self) -> Option<usize> {
        self.records.last().map(|r| r.epoch)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_mae,val_mae,lr,seconds")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{},{:.3}", r.epoch, r.train_mae, r.val_mae, r.lr, r.seconds)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// One unit of trainable work for [`drive_epochs`].
pub trait EpochRunner {
    type Snapshot;

    /// Runs epoch `epoch` at learning rate `lr` and returns `(train_mae, val_mae)`.
    fn run_epoch(&mut self, epoch: usize, lr: f64) -> Result<(f64, f64)>;

    fn snapshot(&self) -> Self::Snapshot;
}

/// Epoch loop with early stopping on validation MAE.
///
/// Stops after `max_epochs`, or once `patience` epochs have passed without a
/// strict improvement; returns the snapshot taken at the best epoch.
pub fn drive_epochs<R: EpochRunner>(runner: &mut R, cfg: &TrainConfig) -> Result<(R::Snapshot, TrainHistory)> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, R::Snapshot)> = None;
    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(epoch, cfg);
        let started = Instant::now();
        let (train_mae, val_mae) = runner.run_epoch(epoch, lr)?;
        history.records.push(EpochRecord {
            epoch,
            train_mae,
            val_mae,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train MAE {train_mae:.4}, validation MAE {val_mae:.4}, lr {lr}");
        let improved = best.as_ref().is_none_or(|(b, _)| val_mae < *b);
        if improved {
            best = Some((val_mae, runner.snapshot()));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= cfg.patience {
            log::info!("early stop at epoch {epoch}, best epoch {}", history.best_epoch);
            break;
        }
    }
    let (_, snapshot) = best.expect("at least one epoch runs");
    Ok((snapshot, history))
}

/// Masked denormalized-scale MAE of `model` over `samples`.
pub fn validation_mae(model: &SeqModel, normalizer: &Normalizer, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let pred = normalizer.invert_matrix(&model.forward(&normalizer.apply_matrix(&s.x))?);
        for (&p, &y) in pred.data().iter().zip(s.y.data()) {
            if y != 0.0 {
                total += (p - y).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::DegenerateEval("every validation target is zero".into()));
    }
    Ok(total / count as f64)
}

struct Prepared {
    x: Matrix,
    y: Matrix,
    mask: Matrix,
    count: f64,
}

struct NeuralRunner<'a> {
    model: SeqModel,
    adam: AdamState,
    train: Vec<Prepared>,
    validation: &'a [Sample],
    normalizer: Normalizer,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    batch_size: usize,
    clip_norm: Option<f64>,
}

impl EpochRunner for NeuralRunner<'_> {
    type Snapshot = SeqModel;

    fn run_epoch(&mut self, epoch: usize, lr: f64) -> Result<(f64, f64)> {
        self.order.shuffle(&mut self.rng);
        let mut epoch_abs = 0.0;
        let mut epoch_count = 0.0;
        for (batch, chunk) in self.order.chunks(self.batch_size).enumerate() {
            let mut grads: Option<Vec<Matrix>> = None;
            let mut batch_abs = 0.0;
            let mut batch_count = 0.0;
            for &i in chunk {
                let s = &self.train[i];
                let (loss, g) =
                    self.model
                        .loss_and_grads(&s.x, &s.y, &s.mask, self.normalizer.std, self.normalizer.mean)?;
                batch_abs += loss * s.count;
                batch_count += s.count;
                // Weight by included entries so the batch loss is one masked mean.
                match grads.as_mut() {
                    None => grads = Some(g.into_iter().map(|m| m.scale(s.count)).collect()),
                    Some(acc) => {
                        for (a, gi) in acc.iter_mut().zip(&g) {
                            for (av, gv) in a.data_mut().iter_mut().zip(gi.data()) {
                                *av += s.count * gv;
                            }
                        }
                    }
                }
            }
            let Some(mut grads) = grads else { continue };
            let loss = batch_abs / batch_count;
            for g in grads.iter_mut() {
                for v in g.data_mut() {
                    *v /= batch_count;
                }
            }
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch, loss });
            }
            if let Some(c) = self.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            adam_step(&mut self.model.params_mut(), &grads, &mut self.adam, lr)?;
            epoch_abs += batch_abs;
            epoch_count += batch_count;
        }
        let val = validation_mae(&self.model, &self.normalizer, self.validation)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: self.order.len().div_ceil(self.batch_size),
                loss: val,
            });
        }
        Ok((epoch_abs / epoch_count, val))
    }

    fn snapshot(&self) -> SeqModel {
        self.model.clone()
    }
}

/// Trains `model` on `split.train`, early-stopping on `split.validation`;
/// returns the parameters from the best validation epoch.
pub fn train(
    model: SeqModel,
    split: &SplitSet,
    normalizer: &Normalizer,
    cfg: &TrainConfig,
) -> Result<(SeqModel, TrainHistory)> {
    cfg.validate()?;
    if split.train.is_empty() || split.validation.is_empty() || split.test.is_empty() {
        return Err(Error::Contract("train, validation and test parts must all be nonempty".into()));
    }
    let train: Vec<Prepared> = split
        .train
        .iter()
        .map(|s| {
            let mask = s.y.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
            Prepared {
                x: normalizer.apply_matrix(&s.x),
                y: s.y.clone(),
                count: mask.sum(),
                mask,
            }
        })
        // Windows whose targets are all zero carry no loss signal.
        .filter(|p| p.count > 0.0)
        .collect();
    if train.is_empty() {
        return Err(Error::DegenerateData("every training target is zero".into()));
    }
    let mut runner = NeuralRunner {
        adam: AdamState::new(model.named_params().into_iter().map(|(_, m)| m)),
        model,
        order: (0..train.len()).collect(),
        train,
        validation: &split.validation,
        normalizer: *normalizer,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        batch_size: cfg.batch_size,
        clip_norm: cfg.clip_norm,
    };
    drive_epochs(&mut runner, cfg)
}

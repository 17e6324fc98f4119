use std::path::Path;
use std::time::Instant;

use diffcore::{Gradients, RngStream, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::loss::{elbo_loss, elbo_value, LossBreakdown};
use super::optim::{clip_global_norm, AdamW};
use super::{EpisodeSampler, TrainingConfig, STREAM_TRAIN, STREAM_VAL};
use crate::error::{Error, Result};
use crate::npmodel::{Checkpoint, Model};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub train_kl: f64,
    pub train_total: f64,
    pub val_nll: f64,
    pub val_kl: f64,
    pub val_total: f64,
    pub episodes: usize,
    /// Not serialised, so logs and checkpoints stay byte-reproducible.
    #[serde(skip)]
    pub wall_secs: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<S> {
    pub model: Model<S>,
    pub best: Model<S>,
    pub opt: AdamW<S>,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val: f64,
    pub bad_epochs: usize,
    pub history: Vec<EpochRecord>,
}

fn mean(acc: LossBreakdown, n: usize) -> LossBreakdown {
    let d = n.max(1) as f64;
    LossBreakdown {
        nll: acc.nll / d,
        kl: acc.kl / d,
        total: acc.total / d,
    }
}

fn add(a: LossBreakdown, b: LossBreakdown) -> LossBreakdown {
    LossBreakdown {
        nll: a.nll + b.nll,
        kl: a.kl + b.kl,
        total: a.total + b.total,
    }
}

const ZERO: LossBreakdown = LossBreakdown {
    nll: 0.0,
    kl: 0.0,
    total: 0.0,
};

impl<S: Scalar> TrainState<S> {
    /// Fresh state; the model's dropout is set from the config.
    pub fn new(mut model: Model<S>, cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        model.set_dropout(cfg.dropout_rate)?;
        let opt = AdamW::new(model.params(), cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
        Ok(Self {
            best: model.clone(),
            model,
            opt,
            epoch: 0,
            best_val: f64::INFINITY,
            bad_epochs: 0,
            history: Vec::new(),
        })
    }

    pub fn finished(&self, cfg: &TrainingConfig) -> bool {
        self.epoch >= cfg.max_epochs || self.bad_epochs >= cfg.patience.max(1)
    }

    /// Mean loss over the validation windows. Episode `i` always uses the
    /// same stream, so epochs are compared on common random numbers.
    pub fn validation_loss(&self, sampler: &EpisodeSampler<'_>, cfg: &TrainingConfig) -> Result<LossBreakdown> {
        validation_loss(&self.model, sampler, cfg)
    }

    /// One pass over (a capped, shuffled subset of) the training windows,
    /// followed by validation and early-stopping bookkeeping.
    pub fn run_epoch(&mut self, sampler: &EpisodeSampler<'_>, cfg: &TrainingConfig) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.epoch;
        let base = RngStream::new(cfg.seed, STREAM_TRAIN).derive(epoch as u64);
        let mut order = sampler.train_windows().to_vec();
        base.derive(u64::MAX).shuffle(&mut order);
        if let Some(cap) = cfg.episodes_per_epoch {
            order.truncate(cap);
        }
        let n_params = self.model.params().len();
        let (mut acc, mut count) = (ZERO, 0usize);
        for (b, batch) in order.chunks(cfg.batch_episodes).enumerate() {
            let mut grads = Gradients::empty(n_params);
            let mut used = 0usize;
            for (j, &t0) in batch.iter().enumerate() {
                let mut rng = base.derive_path(&[b as u64, j as u64]);
                let Some(ep) = sampler.train_episode(t0, &mut rng)? else { continue };
                let (loss, g) = elbo_loss(&self.model, &ep, &mut rng, cfg.beta, cfg.context_subsample_range)
                    .map_err(|e| diverged(e, epoch, b))?;
                grads.merge(&g);
                acc = add(acc, loss);
                used += 1;
            }
            if used == 0 {
                continue;
            }
            count += used;
            grads.scale(S::from_real(1.0 / used as f64));
            if !grads.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at epoch {epoch}, batch {b}")));
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            self.opt.step(self.model.params_mut(), &grads);
        }
        if count == 0 {
            return Err(Error::Config("no usable training episodes".into()));
        }
        let train = mean(acc, count);
        let val = self.validation_loss(sampler, cfg)?;
        self.epoch += 1;
        if val.total < self.best_val {
            self.best_val = val.total;
            self.best = self.model.clone();
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        let rec = EpochRecord {
            epoch: self.epoch,
            train_nll: train.nll,
            train_kl: train.kl,
            train_total: train.total,
            val_nll: val.nll,
            val_kl: val.kl,
            val_total: val.total,
            episodes: count,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Train until `max_epochs` or `patience` epochs without improvement;
    /// `on_epoch` sees every record as it is produced.
    pub fn run(&mut self, sampler: &EpisodeSampler<'_>, cfg: &TrainingConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        while !self.finished(cfg) {
            let rec = self.run_epoch(sampler, cfg)?;
            on_epoch(&rec);
        }
        Ok(())
    }

    /// Model, best snapshot, optimizer moments and counters. Exact for f32.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        for (_, name, t) in self.best.params().iter() {
            ck.push_tensor(format!("best.{name}"), t.cast());
        }
        for (id, name, t) in self.model.params().iter() {
            let shape = t.shape();
            let m = Tensor::new(shape.to_vec(), self.opt.m[id.0].clone()).expect("moment shape");
            let v = Tensor::new(shape.to_vec(), self.opt.v[id.0].clone()).expect("moment shape");
            ck.push_tensor(format!("opt.m.{name}"), m.cast());
            ck.push_tensor(format!("opt.v.{name}"), v.cast());
        }
        let steps: Vec<String> = self.opt.steps.iter().map(u64::to_string).collect();
        ck.set("train.opt_steps", steps.join(","));
        ck.set("train.epoch", self.epoch);
        ck.set("train.best_val_bits", format!("{:016x}", self.best_val.to_bits()));
        ck.set("train.bad_epochs", self.bad_epochs);
        ck.set(
            "train.history",
            serde_json::to_string(&self.history).expect("records serialize"),
        );
        ck
    }

    pub fn save(&self, path: &Path) -> Result<Vec<std::path::PathBuf>> {
        self.to_checkpoint().save(path)
    }

    /// Rebuild from a state checkpoint; optimizer scalars come from `cfg`.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: &TrainingConfig) -> Result<Self> {
        let model = Model::<S>::from_checkpoint(ck)?;
        let mut best = model.clone();
        let mut opt = AdamW::new(model.params(), cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
        let missing = |n: &str| Error::Integrity(format!("state checkpoint lacks tensor {n}"));
        for (id, name, _) in model.params().iter() {
            let b = ck.tensor(&format!("best.{name}")).ok_or_else(|| missing(name))?;
            *best.params_mut().get_mut(id) = b.cast();
            let m = ck.tensor(&format!("opt.m.{name}")).ok_or_else(|| missing(name))?;
            let v = ck.tensor(&format!("opt.v.{name}")).ok_or_else(|| missing(name))?;
            opt.m[id.0] = m.cast::<S>().into_data();
            opt.v[id.0] = v.cast::<S>().into_data();
        }
        let steps: Vec<u64> = ck
            .get("train.opt_steps")?
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Integrity("bad optimizer step list".into())))
            .collect::<Result<_>>()?;
        if steps.len() != opt.steps.len() {
            return Err(Error::Integrity("optimizer step list has the wrong length".into()));
        }
        opt.steps = steps;
        let bits = u64::from_str_radix(ck.get("train.best_val_bits")?, 16)
            .map_err(|_| Error::Integrity("bad best_val".into()))?;
        let history = serde_json::from_str(ck.get("train.history")?)
            .map_err(|e| Error::Integrity(format!("bad history: {e}")))?;
        Ok(Self {
            model,
            best,
            opt,
            epoch: ck.parse("train.epoch")?,
            best_val: f64::from_bits(bits),
            bad_epochs: ck.parse("train.bad_epochs")?,
            history,
        })
    }
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("training diverged at epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

pub fn validation_loss<S: Scalar>(model: &Model<S>, sampler: &EpisodeSampler<'_>, cfg: &TrainingConfig) -> Result<LossBreakdown> {
    let windows = sampler.val_windows();
    let n = cfg.val_episodes.map_or(windows.len(), |c| c.min(windows.len()));
    let base = RngStream::new(cfg.seed, STREAM_VAL);
    let (mut acc, mut count) = (ZERO, 0usize);
    // Evenly spaced subset when capped.
    for i in 0..n {
        let t0 = windows[i * windows.len() / n];
        let mut rng = base.derive(t0 as u64);
        let Some(ep) = sampler.train_episode(t0, &mut rng)? else { continue };
        acc = add(acc, elbo_value(model, &ep, &mut rng, cfg.beta, cfg.context_subsample_range)?);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Config("no usable validation episodes".into()));
    }
    Ok(mean(acc, count))
}

/// Best-validation model and the full state.
pub fn train<S: Scalar>(model: Model<S>, sampler: &EpisodeSampler<'_>, cfg: &TrainingConfig) -> Result<(Model<S>, TrainState<S>)> {
    let mut state = TrainState::new(model, cfg)?;
    state.run(sampler, cfg, |_| {})?;
    Ok((state.best.clone(), state))
}

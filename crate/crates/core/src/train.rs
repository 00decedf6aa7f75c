//! Alternating two-step training, evaluation and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::metrics::{separation_stats, subject_prediction, ConfusionMatrix, Metrics, SeparationStats};
use crate::model::{LossBundle, Model};
use crate::optim::{clip_global_norm, cosine_lr, Optimizer};
use crate::par::Execution;
use crate::params::{Group, ParamId};
use crate::tape::Graph;
use crate::tensor::Tensor;

/// Batch-averaged gradients of both objectives from one forward pass per
/// sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    /// `∂L_disc/∂θ_disc`, in discriminator-group order.
    pub disc: Vec<Tensor>,
    /// `∂L_main/∂θ_main`, in main-group order.
    pub main: Vec<Tensor>,
    pub losses: LossBundle,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub main_opt: Optimizer,
    pub disc_opt: Optimizer,
    main_ids: Vec<ParamId>,
    disc_ids: Vec<ParamId>,
}

impl Trainer {
    pub fn new(model: Model) -> Result<Self> {
        let main_ids = model.store.ids_in(Group::Main);
        let disc_ids = model.store.ids_in(Group::Discriminator);
        if main_ids.iter().any(|id| disc_ids.contains(id)) || main_ids.len() + disc_ids.len() != model.store.len() {
            return Err(Error::Config(
                "main and discriminator parameter sets must partition the model".into(),
            ));
        }
        let shapes =
            |ids: &[ParamId]| -> Vec<Vec<usize>> { ids.iter().map(|&i| model.store.get(i).shape().to_vec()).collect() };
        let (ms, ds) = (shapes(&main_ids), shapes(&disc_ids));
        let c = &model.config;
        let main_opt = Optimizer::new(
            c.optimizer,
            c.weight_decay,
            &ms.iter().map(Vec::as_slice).collect::<Vec<_>>(),
        );
        let disc_opt = Optimizer::new(
            c.optimizer,
            c.weight_decay,
            &ds.iter().map(Vec::as_slice).collect::<Vec<_>>(),
        );
        Ok(Trainer {
            model,
            main_opt,
            disc_opt,
            main_ids,
            disc_ids,
        })
    }

    /// Rebuilds a trainer from a checkpoint taken with the same config.
    pub fn from_checkpoint(config: &ModelConfig, ck: &Checkpoint) -> Result<Self> {
        let mut trainer = Trainer::new(Model::new(config)?)?;
        let fresh = &trainer.model.store;
        let compatible = fresh.len() == ck.store.len()
            && fresh
                .entries()
                .iter()
                .zip(ck.store.entries())
                .all(|(a, b)| a.name == b.name && a.group == b.group && a.value.shape() == b.value.shape());
        if !compatible {
            return Err(Error::Checkpoint("parameter layout differs from the model".into()));
        }
        trainer.model.store = ck.store.clone();
        trainer.main_opt = ck.main_opt.clone();
        trainer.disc_opt = ck.disc_opt.clone();
        Ok(trainer)
    }

    pub fn main_ids(&self) -> &[ParamId] {
        &self.main_ids
    }

    pub fn disc_ids(&self) -> &[ParamId] {
        &self.disc_ids
    }

    /// Pads `batch` to a common length and averages per-sample gradients.
    /// Per-sample work runs under `exec`; sums are taken in sample order.
    pub fn batch_gradients(&self, batch: &[Sample], exec: Execution) -> Result<BatchGradients> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let target = self.model.target_frames(batch);
        let per_sample = exec.map(batch, |s| self.sample_gradients(s, target));
        let mut disc: Option<Vec<Tensor>> = None;
        let mut main: Option<Vec<Tensor>> = None;
        let mut bundles = Vec::with_capacity(batch.len());
        for r in per_sample {
            let (d, m, b) = r?;
            accumulate(&mut disc, d)?;
            accumulate(&mut main, m)?;
            bundles.push(b);
        }
        let scale = 1.0 / batch.len() as f64;
        let finish = |v: Option<Vec<Tensor>>| {
            let mut v = v.unwrap_or_default();
            v.iter_mut().for_each(|t| t.scale_in_place(scale));
            v
        };
        Ok(BatchGradients {
            disc: finish(disc),
            main: finish(main),
            losses: LossBundle::mean(&bundles),
        })
    }

    fn sample_gradients(&self, sample: &Sample, target: usize) -> Result<(Vec<Tensor>, Vec<Tensor>, LossBundle)> {
        let padded = self.model.pad(sample, target)?;
        let mut g = Graph::new();
        let p = self.model.store.bind(&mut g)?;
        let losses = self.model.losses(&mut g, &p, &padded)?;
        let bundle = losses.bundle(&g);
        let collect = |g: &Graph, ids: &[ParamId]| -> Vec<Tensor> {
            ids.iter()
                .map(|&id| {
                    g.grad(p.var(id))
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(self.model.store.get(id).shape()))
                })
                .collect()
        };
        let disc_vars: Vec<_> = self.disc_ids.iter().map(|&id| p.var(id)).collect();
        g.backward_to(losses.forward.disc, &disc_vars)?;
        let disc = collect(&g, &self.disc_ids);
        g.zero_grad();
        let main_vars: Vec<_> = self.main_ids.iter().map(|&id| p.var(id)).collect();
        g.backward_to(losses.main, &main_vars)?;
        let main = collect(&g, &self.main_ids);
        Ok((disc, main, bundle))
    }

    /// Step 1: update the discriminator group only.
    pub fn step_discriminator(&mut self, grads: &[Tensor], lr: f64) {
        let mut grads = grads.to_vec();
        if let Some(c) = self.model.config.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        let mut params = params_mut(&mut self.model.store, &self.disc_ids);
        self.disc_opt.update(&mut params, &grads, lr);
    }

    /// Step 2: update the main group only.
    pub fn step_main(&mut self, grads: &[Tensor], lr: f64) {
        let mut grads = grads.to_vec();
        if let Some(c) = self.model.config.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        let mut params = params_mut(&mut self.model.store, &self.main_ids);
        self.main_opt.update(&mut params, &grads, lr);
    }

    /// One forward pass, then Step 1 and Step 2.
    pub fn train_step(&mut self, batch: &[Sample], lr_main: f64, lr_disc: f64, exec: Execution) -> Result<LossBundle> {
        let grads = self.batch_gradients(batch, exec)?;
        self.step_discriminator(&grads.disc, lr_disc);
        self.step_main(&grads.main, lr_main);
        Ok(grads.losses)
    }

    pub fn checkpoint(&self, epoch: usize, best_weighted_f1: f64) -> Checkpoint {
        Checkpoint {
            config_hash: self.model.config.hash(),
            epoch: epoch as u64,
            best_weighted_f1,
            store: self.model.store.clone(),
            main_opt: self.main_opt.clone(),
            disc_opt: self.disc_opt.clone(),
        }
    }
}

fn accumulate(acc: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) -> Result<()> {
    match acc {
        None => *acc = Some(grads),
        Some(a) => {
            for (x, y) in a.iter_mut().zip(&grads) {
                x.add_assign(y)?;
            }
        }
    }
    Ok(())
}

/// Mutable views of the parameters in `ids`, which must be ascending.
fn params_mut<'a>(store: &'a mut crate::params::ParamStore, ids: &[ParamId]) -> Vec<&'a mut Tensor> {
    let wanted: std::collections::HashSet<usize> = ids.iter().map(|id| id.index()).collect();
    store
        .entries_mut()
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| wanted.contains(i))
        .map(|(_, e)| &mut e.value)
        .collect()
}

/// Per-subject predictions and features on a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub predictions: Vec<usize>,
    pub separation: SeparationStats,
}

/// Runs inference on every sample (each padded on its own).
pub fn evaluate(model: &Model, dataset: &Dataset, exec: Execution) -> Result<Evaluation> {
    if dataset.samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let outputs = exec
        .map(&dataset.samples, |s| model.infer(s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<usize> = outputs.iter().map(|o| subject_prediction(&o.log_probs)).collect();
    let truth: Vec<usize> = dataset.samples.iter().map(|s| s.label).collect();
    let confusion = ConfusionMatrix::from_predictions(model.config.num_classes, &truth, &predictions);
    let metrics = Metrics::of(&confusion)?;
    let publics: Vec<Vec<Tensor>> = outputs.iter().map(|o| o.publics.clone()).collect();
    let privates: Vec<Vec<Tensor>> = outputs.iter().map(|o| o.privates.clone()).collect();
    Ok(Evaluation {
        confusion,
        metrics,
        predictions,
        separation: separation_stats(&publics, &privates),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr_main: f64,
    pub lr_disc: f64,
    /// Mean over the epoch's batches.
    pub losses: LossBundle,
    pub validation: Metrics,
    /// Public/private separation on the validation set after this epoch.
    pub separation: SeparationStats,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Trainer restored to the best-validation snapshot.
    pub trainer: Trainer,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains until `max_epochs` or until `patience` consecutive epochs fail to
/// improve validation w-F1 (training stops on the `patience + 1`-th).
pub fn fit(config: &ModelConfig, train: &Dataset, val: &Dataset, exec: Execution) -> Result<FitOutcome> {
    if train.samples.is_empty() || val.samples.is_empty() {
        return Err(Error::InvalidArgument(
            "train and validation sets must be non-empty".into(),
        ));
    }
    let train_ids: std::collections::HashSet<&str> = train.samples.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = val.samples.iter().find(|s| train_ids.contains(s.id.as_str())) {
        return Err(Error::InvalidArgument(format!("subject {} is in both splits", s.id)));
    }
    let mut trainer = Trainer::new(Model::new(config)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..train.samples.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut stale = 0;
    let (lr_m, lr_d) = (config.lr_main, config.lr_disc());

    for epoch in 0..config.max_epochs {
        let lr_main = cosine_lr(epoch, config.max_epochs, lr_m.hi, lr_m.lo);
        let lr_disc = cosine_lr(epoch, config.max_epochs, lr_d.hi, lr_d.lo);
        order.shuffle(&mut rng);
        let mut bundles = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train.samples[i].clone()).collect();
            bundles.push(trainer.train_step(&batch, lr_main, lr_disc, exec)?);
        }
        let eval = evaluate(&trainer.model, val, exec)?;
        let validation = eval.metrics;
        let improved = best.as_ref().is_none_or(|(w, _, _)| validation.weighted_f1 > *w);
        if improved {
            best = Some((
                validation.weighted_f1,
                epoch,
                trainer.checkpoint(epoch, validation.weighted_f1),
            ));
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(EpochRecord {
            epoch,
            lr_main,
            lr_disc,
            losses: LossBundle::mean(&bundles),
            validation,
            separation: eval.separation,
            improved,
        });
        if stale > config.patience {
            break;
        }
    }

    let (_, best_epoch, checkpoint) = best.expect("at least one epoch ran");
    let trainer = Trainer::from_checkpoint(config, &checkpoint)?;
    Ok(FitOutcome {
        trainer,
        checkpoint,
        history,
        best_epoch,
    })
}

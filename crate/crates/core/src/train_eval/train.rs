//! Mini-batch training with Adamax and a warmup/decay schedule.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::config::ModelConfig;
use crate::error::{MdstError, Result};
use crate::model::{ForwardOptions, MdstModel, PreparedDialog};
use crate::params::Gradients;

use super::optim::Adamax;
use super::schedule::LrSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub final_lr: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// 20 epochs, batch 32, Adamax at 1e-3 with 20% warmup decaying to 5e-5.
    pub fn standard(model: ModelConfig) -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            peak_lr: 1e-3,
            warmup_fraction: 0.2,
            final_lr: 5e-5,
            seed: 0,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(MdstError::Config("epochs and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(MdstError::Config(format!(
                "warmup fraction {} outside [0,1)",
                self.warmup_fraction
            )));
        }
        if self.final_lr.is_nan() || self.final_lr > self.peak_lr || self.peak_lr <= 0.0 {
            return Err(MdstError::Config(format!(
                "need 0 < final lr ({}) <= peak lr ({})",
                self.final_lr, self.peak_lr
            )));
        }
        self.model.validate()
    }

    pub fn steps_per_epoch(&self, n_dialogs: usize) -> usize {
        n_dialogs.div_ceil(self.batch_size)
    }

    pub fn schedule(&self, n_dialogs: usize) -> Result<LrSchedule> {
        LrSchedule::new(
            self.epochs * self.steps_per_epoch(n_dialogs),
            self.warmup_fraction,
            self.peak_lr,
            self.final_lr,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean summed loss per dialog.
    pub loss: f64,
    /// Mean answer NLL per predicted token.
    pub nll_per_token: f64,
    pub steps: usize,
    pub lr: f64,
    pub seconds: f64,
}

/// Loss and gradients of one dialog.
#[derive(Clone, Debug)]
pub struct DialogGradients {
    pub loss: f64,
    pub nll: f64,
    pub tokens: usize,
    pub grads: Gradients,
}

/// Seed of the dropout stream for one dialog visit.
pub fn dropout_seed(seed: u64, epoch: usize, dialog: usize) -> u64 {
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((dialog as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Teacher-forced loss of one dialog (summed over rounds) and its gradients.
pub fn dialog_gradients(model: &MdstModel, dialog: &PreparedDialog, rng: ChaCha8Rng) -> Result<DialogGradients> {
    let mut g = Graph::training(&model.store, rng);
    let opts = ForwardOptions {
        candidate_loss: model.config.discriminative,
        ..ForwardOptions::teacher_forced()
    };
    let trace = model.forward_dialog(&mut g, dialog, opts)?;
    let nll: f64 = trace.rounds.iter().filter_map(|r| r.nll).map(|v| g.value(v).get(0, 0)).sum();
    let tokens = trace.rounds.iter().map(|r| r.predicted_tokens).sum();
    let Some(loss) = trace.total_loss(&mut g, model.config.generative) else {
        return Ok(DialogGradients {
            loss: 0.0,
            nll,
            tokens,
            grads: Gradients::empty(model.store.len()),
        });
    };
    let value = g.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(MdstError::Diverged(format!(
            "dialog {}: non-finite loss {value}",
            dialog.image_id
        )));
    }
    let grads = g.backward(loss)?;
    Ok(DialogGradients {
        loss: value,
        nll,
        tokens,
        grads,
    })
}

/// Mean gradient over a batch, summed in batch order.
pub fn batch_gradients(
    model: &MdstModel,
    dialogs: &[PreparedDialog],
    batch: &[usize],
    seed: u64,
    epoch: usize,
) -> Result<(Vec<DialogGradients>, Gradients)> {
    let parts = batch
        .par_iter()
        .map(|&i| {
            let rng = ChaCha8Rng::seed_from_u64(dropout_seed(seed, epoch, i));
            dialog_gradients(model, &dialogs[i], rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::empty(model.store.len());
    for p in &parts {
        total.accumulate(&p.grads);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((parts, total))
}

/// Optimizer state carried across epochs.
pub struct Trainer {
    pub config: TrainConfig,
    pub schedule: LrSchedule,
    pub optimizer: Adamax,
    pub step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &MdstModel, n_dialogs: usize) -> Result<Self> {
        config.validate()?;
        if n_dialogs == 0 {
            return Err(MdstError::Contract("no training dialogs".into()));
        }
        let schedule = config.schedule(n_dialogs)?;
        Ok(Self {
            config,
            schedule,
            optimizer: Adamax::new(&model.store),
            step: 0,
        })
    }

    /// One optimizer update on `batch`; returns the per-dialog results.
    pub fn step(
        &mut self,
        model: &mut MdstModel,
        dialogs: &[PreparedDialog],
        batch: &[usize],
        epoch: usize,
    ) -> Result<Vec<DialogGradients>> {
        let (parts, grads) = batch_gradients(model, dialogs, batch, self.config.seed, epoch)?;
        if !grads.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|&i| dialogs[i].image_id.as_str()).collect();
            return Err(MdstError::Diverged(format!(
                "step {}: non-finite gradient in batch {ids:?}",
                self.step + 1
            )));
        }
        self.step += 1;
        let lr = self.schedule.lr(self.step);
        self.optimizer.step(&mut model.store, &grads, lr);
        Ok(parts)
    }

    /// One pass over `dialogs` in a seeded shuffled order.
    pub fn epoch(&mut self, model: &mut MdstModel, dialogs: &[PreparedDialog], epoch: usize) -> Result<EpochReport> {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..dialogs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ dropout_seed(0x5EED, epoch, 0));
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut nll = 0.0;
        let mut tokens = 0;
        let mut steps = 0;
        for batch in order.chunks(self.config.batch_size) {
            for p in self.step(model, dialogs, batch, epoch)? {
                loss += p.loss;
                nll += p.nll;
                tokens += p.tokens;
            }
            steps += 1;
        }
        Ok(EpochReport {
            epoch,
            loss: loss / dialogs.len() as f64,
            nll_per_token: nll / tokens.max(1) as f64,
            steps,
            lr: self.schedule.lr(self.step),
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Builds a model from `config.model` and trains it for `config.epochs`,
/// calling `on_epoch` after each epoch (for checkpoints and logging).
pub fn train(
    config: &TrainConfig,
    dialogs: &[PreparedDialog],
    mut on_epoch: impl FnMut(&EpochReport, &MdstModel) -> Result<()>,
) -> Result<(MdstModel, Vec<EpochReport>)> {
    let mut model = MdstModel::new(config.model.clone(), config.seed)?;
    let mut trainer = Trainer::new(config.clone(), &model, dialogs.len())?;
    let mut reports = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let report = trainer.epoch(&mut model, dialogs, epoch)?;
        log::info!(
            "epoch {epoch}: loss {:.4}, nll/token {:.4}, lr {:.2e}, {:.1}s",
            report.loss,
            report.nll_per_token,
            report.lr,
            report.seconds
        );
        on_epoch(&report, &model)?;
        reports.push(report);
    }
    Ok((model, reports))
}

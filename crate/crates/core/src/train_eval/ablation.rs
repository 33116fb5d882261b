//! Component ablations on the synthetic tracking task.

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, ModelConfig};
use crate::data_ingest::synthetic::SyntheticSplit;
use crate::data_ingest::{SyntheticWorld, Vocabulary};
use crate::error::Result;
use crate::model::{prepare_dialog, MdstModel, PreparedDialog};

use super::eval::{evaluate_ranking, generate_dialogues};
use super::judge::{compute_jacc_avglen, oracle_judge, JaccReport};
use super::metrics::MetricsReport;
use super::train::{train, EpochReport, TrainConfig};

/// Tokenises a synthetic split and attaches its features.
pub fn prepare_split(split: &SyntheticSplit, vocab: &Vocabulary, config: &ModelConfig) -> Vec<PreparedDialog> {
    split
        .corpus
        .dialogs
        .iter()
        .zip(&split.features)
        .map(|(d, f)| prepare_dialog(d, f.features.clone(), vocab, config, config.discriminative))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub ablation: Ablation,
    pub metrics: MetricsReport,
    pub jacc: JaccReport,
    pub epochs: Vec<EpochReport>,
}

/// Trains and judges one variant.
#[allow(clippy::too_many_arguments)]
pub fn run_variant(
    name: &str,
    base: &TrainConfig,
    ablation: Ablation,
    train_set: &[PreparedDialog],
    val_set: &[PreparedDialog],
    val_worlds: &[SyntheticWorld],
    vocab: &Vocabulary,
    rounds: usize,
) -> Result<(AblationRow, MdstModel)> {
    let mut cfg = base.clone();
    cfg.model.ablation = ablation;
    log::info!("training variant {name}");
    let (model, epochs) = train(&cfg, train_set, |_, _| Ok(()))?;
    let generated = generate_dialogues(&model, vocab, val_set, rounds)?;
    let judged = oracle_judge(&generated, val_worlds)?;
    let jacc = compute_jacc_avglen(&judged)?;
    let mut metrics = if model.config.discriminative {
        evaluate_ranking(&model, val_set)?
    } else {
        MetricsReport::default()
    };
    metrics.jacc = Some(jacc.jacc);
    metrics.avg_len = Some(jacc.avg_len);
    log::info!("variant {name}: JACC {:.2}", jacc.jacc);
    Ok((
        AblationRow {
            name: name.to_string(),
            ablation,
            metrics,
            jacc,
            epochs,
        },
        model,
    ))
}

/// The full model and its three component removals, in table order.
pub fn run_ablation(
    base: &TrainConfig,
    train_set: &[PreparedDialog],
    val_set: &[PreparedDialog],
    val_worlds: &[SyntheticWorld],
    vocab: &Vocabulary,
    rounds: usize,
) -> Result<Vec<AblationRow>> {
    Ablation::table_rows()
        .into_iter()
        .map(|(name, ab)| {
            run_variant(name, base, ab, train_set, val_set, val_worlds, vocab, rounds).map(|(row, _)| row)
        })
        .collect()
}

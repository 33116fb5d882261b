//! Dialogue-state contracts, determinism and training sanity.

mod common;

use common::*;
use mdst::autograd::Graph;
use mdst::config::Ablation;
use mdst::model::{ForwardOptions, MdstModel};
use mdst::train_eval::{TrainConfig, Trainer};

#[test]
fn ten_round_dialogs_keep_state_contracts() {
    let fx = fixture(4, 3, 10, Ablation::FULL);
    let model = MdstModel::new(fx.config.clone(), 2).unwrap();
    for d in &fx.dialogs {
        assert_eq!(d.rounds.len(), 10);
        state_contract(&model, d, ForwardOptions::teacher_forced()).unwrap();
        state_contract(&model, d, ForwardOptions::generate(10)).unwrap();
    }
}

#[test]
fn contracts_hold_without_pseudo_objects() {
    let fx = fixture(2, 2, 10, Ablation::NO_PSEUDO_OBJECTS);
    let model = MdstModel::new(fx.config.clone(), 5).unwrap();
    for d in &fx.dialogs {
        state_contract(&model, d, ForwardOptions::teacher_forced()).unwrap();
    }
}

#[test]
fn caption_bootstrap_is_round_one() {
    let fx = fixture(1, 3, 4, Ablation::FULL);
    let model = MdstModel::new(fx.config.clone(), 2).unwrap();
    let mut g = Graph::new(&model.store);
    let trace = model.forward_dialog(&mut g, &fx.dialogs[0], ForwardOptions::teacher_forced()).unwrap();
    let rounds: Vec<usize> = trace.states.iter().map(|s| s.language.round).collect();
    assert_eq!(rounds, [1, 2, 3, 4, 5]);
}

#[test]
fn baseline_keeps_no_language_state() {
    let fx = fixture(1, 3, 4, Ablation::NO_STATE);
    let model = MdstModel::new(fx.config.clone(), 2).unwrap();
    let mut g = Graph::new(&model.store);
    let trace = model.forward_dialog(&mut g, &fx.dialogs[0], ForwardOptions::teacher_forced()).unwrap();
    assert!(trace.bootstrap.is_none());
    assert!(trace.rounds.iter().all(|r| r.update.is_none() && r.grounded.is_none()));
}

#[test]
fn same_seed_same_model_and_loss() {
    let fx = fixture(2, 3, 3, Ablation::FULL);
    let a = MdstModel::new(fx.config.clone(), 9).unwrap();
    let b = MdstModel::new(fx.config.clone(), 9).unwrap();
    for id in a.store.ids() {
        assert_eq!(a.store.get(id), b.store.get(id), "{}", a.store.name(id));
    }
    assert_eq!(dialog_loss(&a, &fx.dialogs[0]).to_bits(), dialog_loss(&b, &fx.dialogs[0]).to_bits());
}

fn train_config(fx: &Fixture) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::standard(fx.config.clone())
    }
}

#[test]
fn training_is_reproducible() {
    let fx = fixture(8, 3, 3, Ablation::FULL);
    let mut cfg = train_config(&fx);
    cfg.model.dropout = 0.1;
    let run = || {
        let (model, reports) = mdst::train_eval::train(&cfg, &fx.dialogs, |_, _| Ok(())).unwrap();
        (model, reports[0].loss)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la.to_bits(), lb.to_bits());
    for id in a.store.ids() {
        assert_eq!(a.store.get(id), b.store.get(id), "{}", a.store.name(id));
    }
}

#[test]
fn one_step_lowers_the_batch_loss() {
    let fx = fixture(4, 3, 3, Ablation::FULL);
    let mut model = MdstModel::new(fx.config.clone(), 1).unwrap();
    let mut cfg = train_config(&fx);
    cfg.warmup_fraction = 0.0;
    let batch: Vec<usize> = (0..fx.dialogs.len()).collect();
    let total = |m: &MdstModel| fx.dialogs.iter().map(|d| dialog_loss(m, d)).sum::<f64>();
    let before = total(&model);
    let mut trainer = Trainer::new(cfg, &model, fx.dialogs.len()).unwrap();
    trainer.step(&mut model, &fx.dialogs, &batch, 1).unwrap();
    let after = total(&model);
    assert!(after < before, "{before} -> {after}");
}

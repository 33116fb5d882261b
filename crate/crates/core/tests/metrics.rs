//! Ranking metrics, answer likelihood and JACC bookkeeping against brute force.

mod common;

use common::metric::*;
use common::*;
use mdst::autograd::Graph;
use mdst::config::Ablation;
use mdst::model::MdstModel;
use mdst::text_encoder::ContextualReps;
use mdst::train_eval::judge::{compute_jacc_avglen, JudgeProvenance, JudgedDialog, JudgedRound, Verdict};

#[test]
fn ranking_metrics_match_brute_force() {
    for seed in 0..200 {
        let e = metric_error(seed);
        assert!(e < 1e-9, "seed {seed}: {e:e}");
    }
}

#[test]
fn answer_nll_matches_explicit_log_sum_exp() {
    let fx = fixture(2, 3, 2, Ablation::FULL);
    let model = MdstModel::new(fx.config.clone(), 11).unwrap();
    let mut r = rng(4);
    for dialog in &fx.dialogs {
        for round in &dialog.rounds {
            let gold = round.answer.as_ref().unwrap();
            let l = 5;
            let mut g = Graph::new(&model.store);
            let fused = ContextualReps {
                reps: g.constant(random_matrix(&mut r, l, fx.config.d_model, 1.0)),
                mask: vec![true, true, true, true, false],
            };
            let fwd = model.decoder.answer_nll(&mut g, &model.words, &fused, gold).unwrap();
            let input = &gold.ids[..gold.ids.len() - 1];
            let states = model.decoder.states(&mut g, &model.words, input, &fused).unwrap();
            let logits = model.decoder.logits(&mut g, states).unwrap();
            let logits = to_rows(g.value(logits));
            let mut expect = 0.0;
            for (t, row) in logits.iter().enumerate() {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                expect += lse - row[gold.ids[t + 1]];
            }
            let got = g.value(fwd.nll).get(0, 0);
            assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
            assert_eq!(fwd.predicted, gold.ids.len() - 1);
        }
    }
}

fn judged(correct: usize, incorrect: usize, answer: &str) -> Vec<JudgedDialog> {
    let verdicts = std::iter::repeat_n(Verdict::Correct, correct).chain(std::iter::repeat_n(Verdict::Incorrect, incorrect));
    verdicts
        .enumerate()
        .map(|(i, v)| JudgedDialog {
            image_id: format!("img{i}"),
            rounds: vec![JudgedRound {
                round: 1 + i % 10,
                question: "q".into(),
                answer: answer.into(),
                gold: None,
                verdict: Some(v),
            }],
            provenance: JudgeProvenance::HumanImport,
        })
        .collect()
}

#[test]
fn jacc_reproduces_published_counts() {
    let report = compute_jacc_avglen(&judged(798, 202, "yes , it is red")).unwrap();
    assert_eq!(report.jacc, 79.8);
    assert_eq!((report.correct, report.incorrect, report.total), (798, 202, 1000));
    assert_eq!(report.avg_len, 4.0);
    assert_eq!(report.per_round.len(), 10);
    assert_eq!(report.per_round.iter().map(|r| r.total).sum::<usize>(), 1000);
}

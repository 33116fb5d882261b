//! Shared fixtures and independent reference implementations for the
//! integration tests. The references use plain nested loops over `Vec<f64>`
//! and never call into the library's tensor code.

#![allow(dead_code)]
// The references index explicitly on purpose.
#![allow(clippy::needless_range_loop)]

pub mod metric;
pub mod oracle;

use mdst::autograd::Graph;
use mdst::config::{Ablation, ModelConfig};
use mdst::data_ingest::synthetic::{generate_split, SyntheticSplit};
use mdst::data_ingest::{Split, SynthConfig, Vocabulary};
use mdst::model::{ForwardOptions, MdstModel, PreparedDialog};
use mdst::params::ParamId;
use mdst::tensor::Matrix;
use mdst::train_eval::ablation::prepare_split;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn to_rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn max_diff(a: &Rows, b: &Matrix) -> f64 {
    assert_eq!((a.len(), a.first().map_or(0, Vec::len)), b.shape());
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            worst = worst.max((x - b.get(i, j)).abs());
        }
    }
    worst
}

// ---- reference maths -------------------------------------------------------

pub fn ref_matmul(a: &Rows, b: &Rows) -> Rows {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn ref_transpose(a: &Rows) -> Rows {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn ref_add(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn ref_scale(a: &Rows, s: f64) -> Rows {
    a.iter().map(|r| r.iter().map(|x| x * s).collect()).collect()
}

pub fn ref_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn ref_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-wise softmax; `-inf` entries get probability zero.
pub fn ref_softmax(a: &Rows) -> Rows {
    a.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - m).exp() }).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        })
        .collect()
}

pub fn ref_layer_norm(a: &Rows, gain: &[f64], bias: &[f64], eps: f64) -> Rows {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = (var + eps).sqrt();
            r.iter().enumerate().map(|(j, x)| (x - mean) / sd * gain[j] + bias[j]).collect()
        })
        .collect()
}

/// `LN(GELU(x Wᵀ))` with affine layer norm, no dropout.
pub fn ref_mlp(store: &mdst::params::ParamStore, name: &str, x: &Rows) -> Rows {
    let w = to_rows(store.by_name(&format!("{name}/W")).expect("mlp weight"));
    let gain = store.by_name(&format!("{name}/norm/gain")).expect("gain").row(0).to_vec();
    let bias = store.by_name(&format!("{name}/norm/bias")).expect("bias").row(0).to_vec();
    let h: Rows = ref_matmul(x, &ref_transpose(&w))
        .into_iter()
        .map(|r| r.into_iter().map(ref_gelu).collect())
        .collect();
    ref_layer_norm(&h, &gain, &bias, mdst::autograd::LAYER_NORM_EPS)
}

// ---- fixtures --------------------------------------------------------------

pub fn synth_config(objects: usize, rounds: usize) -> SynthConfig {
    SynthConfig {
        objects,
        rounds,
        ..SynthConfig::default()
    }
}

pub struct Fixture {
    pub split: SyntheticSplit,
    pub vocab: Vocabulary,
    pub config: ModelConfig,
    pub dialogs: Vec<PreparedDialog>,
}

/// A handful of synthetic dialogs and a matching tiny model configuration.
pub fn fixture(n: usize, objects: usize, rounds: usize, ablation: Ablation) -> Fixture {
    let sc = synth_config(objects, rounds);
    let split = generate_split(&sc, Split::Train, n).expect("synthetic split");
    let vocab = Vocabulary::build(&split.corpus, 1).expect("vocabulary");
    let mut config = ModelConfig::tiny(vocab.len(), sc.feature_dim(), objects);
    config.ablation = ablation;
    let dialogs = prepare_split(&split, &vocab, &config);
    Fixture {
        split,
        vocab,
        config,
        dialogs,
    }
}

/// Summed teacher-forced loss of one dialog without dropout.
pub fn dialog_loss(model: &MdstModel, dialog: &PreparedDialog) -> f64 {
    let mut g = Graph::new(&model.store);
    let opts = ForwardOptions {
        candidate_loss: model.config.discriminative,
        ..ForwardOptions::teacher_forced()
    };
    let trace = model.forward_dialog(&mut g, dialog, opts).expect("forward");
    let loss = trace.total_loss(&mut g, model.config.generative).expect("loss");
    g.value(loss).get(0, 0)
}

pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub rel_error: f64,
    pub grad_norm: f64,
}

/// Central finite differences against the tape gradient, per parameter tensor.
///
/// In each tensor the `top` entries with the largest analytic gradient plus
/// `random` uniformly drawn entries are perturbed by `±step`. The relative
/// error of a group is `‖a − n‖ / max(‖a‖, ‖n‖, floor)` over its checked
/// entries; the floor keeps groups whose exact gradient is zero (biases that
/// shift every attention logit of a row alike) from dividing noise by noise.
pub fn gradient_check(
    model: &mut MdstModel,
    dialog: &PreparedDialog,
    step: f64,
    top: usize,
    random: usize,
    floor: f64,
    seed: u64,
) -> Vec<GroupCheck> {
    let grads = {
        let mut g = Graph::new(&model.store);
        let opts = ForwardOptions {
            candidate_loss: model.config.discriminative,
            ..ForwardOptions::teacher_forced()
        };
        let trace = model.forward_dialog(&mut g, dialog, opts).expect("forward");
        let loss = trace.total_loss(&mut g, model.config.generative).expect("loss");
        g.backward(loss).expect("backward")
    };
    let mut r = rng(seed);
    let ids: Vec<ParamId> = model.store.ids().collect();
    let mut out = Vec::new();
    for id in ids {
        let name = model.store.name(id).to_string();
        let analytic = grads.dense(id, &model.store);
        let n = analytic.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| analytic.data()[b].abs().total_cmp(&analytic.data()[a].abs()));
        let mut picks: Vec<usize> = order.into_iter().take(top).collect();
        for _ in 0..random {
            picks.push(r.random_range(0..n));
        }
        picks.sort_unstable();
        picks.dedup();
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &k in &picks {
            let orig = model.store.get(id).data()[k];
            model.store.get_mut(id).data_mut()[k] = orig + step;
            let up = dialog_loss(model, dialog);
            model.store.get_mut(id).data_mut()[k] = orig - step;
            let down = dialog_loss(model, dialog);
            model.store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[k];
            diff += (a - numeric) * (a - numeric);
            na += a * a;
            nn += numeric * numeric;
        }
        let denom = na.sqrt().max(nn.sqrt()).max(floor);
        out.push(GroupCheck {
            name,
            checked: picks.len(),
            rel_error: diff.sqrt() / denom,
            grad_norm: analytic.sq_norm().sqrt(),
        });
    }
    out
}

/// Vision digest fixed, `S⁽ᵗ⁺¹⁾ − S⁽ᵗ⁾ = βᵀh` (explicit loops, within 1e-9)
/// and a strictly increasing round counter, over every state of one dialog.
pub fn state_contract(model: &MdstModel, dialog: &PreparedDialog, opts: ForwardOptions) -> Result<(), String> {
    let mut g = Graph::new(&model.store);
    let trace = model.forward_dialog(&mut g, dialog, opts).map_err(|e| e.to_string())?;
    let digest = trace.vision.digest(&g);
    let mut updates: Vec<&mdst::pds::StateUpdate> = trace.bootstrap.iter().collect();
    updates.extend(trace.rounds.iter().filter_map(|r| r.update.as_ref()));
    let expected = trace.states.len() - 1 + usize::from(trace.bootstrap.is_some());
    if updates.len() != expected {
        return Err(format!("{} updates for {} states", updates.len(), trace.states.len()));
    }
    let mut before = mdst::state_core::init_dialogue_state(&mut g, trace.vision);
    let chain: Vec<_> = trace.states.clone();
    let mut prev_round = None;
    for (t, after) in chain.iter().enumerate() {
        if after.vision.digest(&g) != digest {
            return Err(format!("vision states changed by state {t}"));
        }
        if let Some(p) = prev_round {
            if after.language.round <= p {
                return Err(format!("round counter went from {p} to {}", after.language.round));
            }
        }
        prev_round = Some(after.language.round);
        // State 0 is the caption bootstrap when present, otherwise the initial state.
        let update = if trace.bootstrap.is_some() { Some(updates[t]) } else { t.checked_sub(1).map(|i| updates[i]) };
        if let Some(up) = update {
            let beta = to_rows(g.value(up.beta));
            let h = to_rows(g.value(up.h));
            let s0 = g.value(before.language.rows);
            let s1 = g.value(after.language.rows);
            for k in 0..s0.rows() {
                for j in 0..s0.cols() {
                    let mut inc = 0.0;
                    for i in 0..beta.len() {
                        inc += beta[i][k] * h[i][j];
                    }
                    let step = s1.get(k, j) - s0.get(k, j);
                    if (step - inc).abs() > 1e-9 {
                        return Err(format!("state {t} slot {k}: increment {step} vs βᵀh {inc}"));
                    }
                }
            }
            if after.language.round != before.language.round + 1 {
                return Err(format!("state {t}: round {} after {}", after.language.round, before.language.round));
            }
        }
        before = *after;
    }
    Ok(())
}

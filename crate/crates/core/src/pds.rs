//! Postdiction on the dialogue state: fold a finished question–answer round
//! into the language states.
//!
//! The round is summarised token-by-token as `h = q + α·a` and then written
//! additively into the slots, `S ← S + βᵀh`. Nothing is ever subtracted or
//! renormalised, so the update history of `S` is exactly the sum of its
//! writes.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::config::{Ablation, StateWriteKeys};
use crate::error::{MdstError, Result};
use crate::params::ParamStore;
use crate::qgds::{ground_question, mask_rows, QgdsParams};
use crate::state_core::{DialogueState, LanguageStates, MlpBlock};
use crate::tensor::Matrix;
use crate::text_encoder::ContextualReps;

#[derive(Clone, Debug)]
pub struct PdsParams {
    pub answer_query: MlpBlock,
    pub answer_key: MlpBlock,
    pub write_query: MlpBlock,
    pub write_key: MlpBlock,
}

impl PdsParams {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, d: usize, dropout: f64) -> Self {
        let mut mlp = |name: &str| MlpBlock::new(store, rng, &format!("pds/{name}"), d, d, dropout);
        Self {
            answer_query: mlp("answer_query"),
            answer_key: mlp("answer_key"),
            write_query: mlp("write_query"),
            write_key: mlp("write_key"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct QaFusion {
    /// `l × ℓ` word–word alignment.
    pub alpha: Var,
    /// `l × d`.
    pub h: Var,
}

#[derive(Clone, Debug)]
pub struct StateUpdate {
    /// `l × K` assignment of question tokens to slots.
    pub beta: Var,
    /// Rows written, `l × d`.
    pub h: Var,
    /// `βᵀh`, the increment added to `S`.
    pub delta: Var,
}

fn additive_mask(mask: &[bool], rows: usize) -> Option<Matrix> {
    mask.iter()
        .any(|&m| !m)
        .then(|| Matrix::from_fn(rows, mask.len(), |_, j| if mask[j] { 0.0 } else { f64::NEG_INFINITY }))
}

/// `α = softmax(MLP(q+Δq_l)·MLP(a)ᵀ/√d)` over answer tokens, `h = q + α·a`.
pub fn fuse_qa_pair(
    g: &mut Graph,
    p: &PdsParams,
    q: &ContextualReps,
    dq_l: Var,
    a: &ContextualReps,
) -> Result<QaFusion> {
    let (l, d) = g.shape(q.reps);
    if g.shape(dq_l) != (l, d) || g.shape(a.reps).1 != d {
        return Err(MdstError::Shape(format!(
            "question {l}x{d}, history context {:?}, answer {:?}",
            g.shape(dq_l),
            g.shape(a.reps)
        )));
    }
    let query_in = g.add(q.reps, dq_l)?;
    let mq = p.answer_query.forward(g, query_in)?;
    let ma = p.answer_key.forward(g, a.reps)?;
    let logits = g.matmul_nt(mq, ma)?;
    let mut logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    if let Some(m) = additive_mask(&a.mask, l) {
        let m = g.constant(m);
        logits = g.add(logits, m)?;
    }
    let alpha = g.softmax(logits);
    let attended = g.matmul(alpha, a.reps)?;
    let attended = mask_rows(g, attended, &q.mask)?;
    let h = g.add(q.reps, attended)?;
    let h = mask_rows(g, h, &q.mask)?;
    Ok(QaFusion { alpha, h })
}

/// `β = softmax(MLP(h+Δq_l)·MLP(keys)ᵀ/√d)` and `S ← S + βᵀh`.
///
/// With [`StateWriteKeys::Language`] the keys are `S` itself; with
/// [`StateWriteKeys::ObjectAnchored`] they are `S + O`, so every slot can be
/// addressed through the object it is paired with even before anything has
/// been written to it.
pub fn update_language_states(
    g: &mut Graph,
    p: &PdsParams,
    h: Var,
    h_mask: &[bool],
    dq_l: Var,
    state: &DialogueState,
    keys: StateWriteKeys,
) -> Result<(DialogueState, StateUpdate)> {
    let (l, d) = g.shape(h);
    if g.shape(dq_l) != (l, d) {
        return Err(MdstError::Shape(format!(
            "fused round {l}x{d} but history context {:?}",
            g.shape(dq_l)
        )));
    }
    let s = state.language.rows;
    let key_in = match keys {
        StateWriteKeys::Language => s,
        StateWriteKeys::ObjectAnchored => g.add(s, state.vision.rows)?,
    };
    let query_in = g.add(h, dq_l)?;
    let mq = p.write_query.forward(g, query_in)?;
    let mk = p.write_key.forward(g, key_in)?;
    let logits = g.matmul_nt(mq, mk)?;
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    let beta = g.softmax(logits);
    let beta = mask_rows(g, beta, h_mask)?;
    let delta = g.matmul_t(beta, true, h, false)?;
    let next = g.add(s, delta)?;
    let new_state = DialogueState {
        vision: state.vision,
        language: LanguageStates {
            rows: next,
            round: state.language.round + 1,
        },
    };
    Ok((new_state, StateUpdate { beta, h, delta }))
}

/// Writes the caption into the empty state as the zeroth round.
pub fn bootstrap_with_caption(
    g: &mut Graph,
    qgds: &QgdsParams,
    pds: &PdsParams,
    state: &DialogueState,
    caption: &ContextualReps,
    ablation: Ablation,
    keys: StateWriteKeys,
) -> Result<(DialogueState, StateUpdate)> {
    if state.language.round != 0 {
        return Err(MdstError::Contract(format!(
            "caption bootstrap requested at round {}",
            state.language.round
        )));
    }
    let grounded = ground_question(g, qgds, caption, state, ablation)?;
    update_language_states(g, pds, caption.reps, &caption.mask, grounded.dq_l, state, keys)
}

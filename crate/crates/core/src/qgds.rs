//! Question grounding on the dialogue state.
//!
//! The question is aligned word-by-word with the language states (entity
//! alignment) and with the vision states (object alignment). A scalar
//! switching probability decides how much the object alignment should also
//! route into the language states and vice versa, which is what links an
//! entity mentioned earlier to the object it was written against.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::config::Ablation;
use crate::error::{MdstError, Result};
use crate::params::{uniform_fan_in, ParamId, ParamStore};
use crate::state_core::{DialogueState, MlpBlock};
use crate::tensor::Matrix;
use crate::text_encoder::{mean_weights, ContextualReps};

/// One independent `MLP` per named use.
#[derive(Clone, Debug)]
pub struct QgdsParams {
    pub entity_query: MlpBlock,
    pub entity_key: MlpBlock,
    pub object_query: MlpBlock,
    pub object_key: MlpBlock,
    pub switch_query: MlpBlock,
    pub switch_key: MlpBlock,
    /// `1 × K` weights over slots for the switching gate.
    pub w: ParamId,
}

impl QgdsParams {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, d: usize, n_slots: usize, dropout: f64) -> Self {
        let mut mlp = |name: &str| MlpBlock::new(store, rng, &format!("qgds/{name}"), d, d, dropout);
        let entity_query = mlp("entity_query");
        let entity_key = mlp("entity_key");
        let object_query = mlp("object_query");
        let object_key = mlp("object_key");
        let switch_query = mlp("switch_query");
        let switch_key = mlp("switch_key");
        let w = store.add("qgds/w", uniform_fan_in(1, n_slots, n_slots, rng));
        Self {
            entity_query,
            entity_key,
            object_query,
            object_key,
            switch_query,
            switch_key,
            w,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundedQuestion {
    pub q: Var,
    pub mask: Vec<bool>,
    /// `l × K` word–entity alignment.
    pub pi_l: Var,
    /// `l × K` word–object alignment.
    pub pi_v: Var,
    /// `1 × 1` switching probability.
    pub phi: Var,
    pub dq_l: Var,
    pub dq_v: Var,
    /// `q + Δq_l + Δq_v`.
    pub fused: Var,
}

/// `MLP_q(q) · MLP_k(keys)ᵀ`, unscaled.
pub fn bilinear_logits(g: &mut Graph, query: &MlpBlock, key: &MlpBlock, q: Var, keys: Var) -> Result<Var> {
    let (_, dq) = g.shape(q);
    let (_, dk) = g.shape(keys);
    if dq != dk {
        return Err(MdstError::Shape(format!("query width {dq} differs from key width {dk}")));
    }
    let mq = query.forward(g, q)?;
    let mk = key.forward(g, keys)?;
    g.matmul_nt(mq, mk)
}

/// Row-wise softmax of `MLP_q(q)·MLP_k(keys)ᵀ / √d`.
pub fn scaled_alignment(g: &mut Graph, query: &MlpBlock, key: &MlpBlock, q: Var, keys: Var) -> Result<Var> {
    let d = g.shape(q).1;
    let logits = bilinear_logits(g, query, key, q, keys)?;
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    Ok(g.softmax(logits))
}

pub fn word_entity_alignment(g: &mut Graph, p: &QgdsParams, q: &ContextualReps, s: Var) -> Result<Var> {
    scaled_alignment(g, &p.entity_query, &p.entity_key, q.reps, s)
}

pub fn word_object_alignment(g: &mut Graph, p: &QgdsParams, q: &ContextualReps, o: Var) -> Result<Var> {
    scaled_alignment(g, &p.object_query, &p.object_key, q.reps, o)
}

/// `sigmoid(⟨mean_l(MLP(q)·MLP(S)ᵀ), w⟩ / √K)`, the mean taken over real question tokens.
pub fn switching_probability(g: &mut Graph, p: &QgdsParams, q: &ContextualReps, s: Var) -> Result<Var> {
    let k = g.shape(s).0;
    let wk = g.store().get(p.w).cols();
    if k != wk {
        return Err(MdstError::Shape(format!("switching weights cover {wk} slots, state has {k}")));
    }
    let logits = bilinear_logits(g, &p.switch_query, &p.switch_key, q.reps, s)?;
    let mean = g.constant(mean_weights(&q.mask));
    let row = g.matmul(mean, logits)?;
    let w = g.param(p.w);
    let z = g.matmul_nt(row, w)?;
    let z = g.scale(z, 1.0 / (k as f64).sqrt());
    Ok(g.sigmoid(z))
}

/// Zeroes the rows of `x` at padded question positions.
pub(crate) fn mask_rows(g: &mut Graph, x: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&m| m) {
        return Ok(x);
    }
    let cols = g.shape(x).1;
    let m = g.constant(Matrix::from_fn(mask.len(), cols, |i, _| if mask[i] { 1.0 } else { 0.0 }));
    g.mul(x, m)
}

/// Computes both alignments, the switching gate and the question-guided contexts.
pub fn ground_question(
    g: &mut Graph,
    p: &QgdsParams,
    q: &ContextualReps,
    state: &DialogueState,
    ablation: Ablation,
) -> Result<GroundedQuestion> {
    let s = state.language.rows;
    let o = state.vision.rows;
    let pi_l = word_entity_alignment(g, p, q, s)?;
    let pi_v = word_object_alignment(g, p, q, o)?;
    let phi = switching_probability(g, p, q, s)?;
    let (mix_l, mix_v) = if ablation.use_switching {
        let phi_pi_v = g.scale_by(pi_v, phi)?;
        let mix_l = g.add(pi_l, phi_pi_v)?;
        let neg = g.scale(phi, -1.0);
        let one_minus = g.add_const(neg, 1.0);
        let rest_pi_l = g.scale_by(pi_l, one_minus)?;
        let mix_v = g.add(pi_v, rest_pi_l)?;
        (mix_l, mix_v)
    } else {
        (pi_l, pi_v)
    };
    let mix_l = mask_rows(g, mix_l, &q.mask)?;
    let mix_v = mask_rows(g, mix_v, &q.mask)?;
    let dq_l = g.matmul(mix_l, s)?;
    let dq_v = g.matmul(mix_v, o)?;
    let partial = g.add(q.reps, dq_l)?;
    let fused = g.add(partial, dq_v)?;
    Ok(GroundedQuestion {
        q: q.reps,
        mask: q.mask.clone(),
        pi_l,
        pi_v,
        phi,
        dq_l,
        dq_v,
        fused,
    })
}

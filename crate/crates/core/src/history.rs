//! Stateless fusion used when dialogue-state tracking is switched off: the
//! question attends directly to the image rows and to the encoded raw
//! history (caption plus every earlier question–answer pair).

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::qgds::{mask_rows, scaled_alignment};
use crate::state_core::MlpBlock;
use crate::text_encoder::ContextualReps;

#[derive(Clone, Debug)]
pub struct HistoryFusion {
    pub image_query: MlpBlock,
    pub image_key: MlpBlock,
    pub history_query: MlpBlock,
    pub history_key: MlpBlock,
}

impl HistoryFusion {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, d: usize, dropout: f64) -> Self {
        let mut mlp = |name: &str| MlpBlock::new(store, rng, &format!("history/{name}"), d, d, dropout);
        Self {
            image_query: mlp("image_query"),
            image_key: mlp("image_key"),
            history_query: mlp("history_query"),
            history_key: mlp("history_key"),
        }
    }

    /// `q + attend(q → O) + attend(q → H)`.
    pub fn fuse(&self, g: &mut Graph, q: &ContextualReps, objects: Var, history: Var) -> Result<Var> {
        let to_image = scaled_alignment(g, &self.image_query, &self.image_key, q.reps, objects)?;
        let to_image = mask_rows(g, to_image, &q.mask)?;
        let image_ctx = g.matmul(to_image, objects)?;
        let to_history = scaled_alignment(g, &self.history_query, &self.history_key, q.reps, history)?;
        let to_history = mask_rows(g, to_history, &q.mask)?;
        let history_ctx = g.matmul(to_history, history)?;
        let partial = g.add(q.reps, history_ctx)?;
        g.add(partial, image_ctx)
    }
}

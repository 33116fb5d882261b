//! Answer decoding and candidate ranking.
//!
//! The generative head is a Transformer decoder that cross-attends to the
//! fused question rows. The discriminative head encodes each candidate with
//! a separate encoder stack, pools it to one vector and scores it by a dot
//! product with the pooled fused question.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::config::Pooling;
use crate::data_ingest::vocab::{BOS, EOS};
use crate::data_ingest::NUM_CANDIDATES;
use crate::error::{MdstError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::text_encoder::{mean_weights, ContextualReps, TextEncoder, TokenSequence, WordEmbedding};
use crate::transformer::{DecoderLayer, LayerNorm, Linear};

#[derive(Clone, Debug)]
pub struct AnswerDecoder {
    pub positions: ParamId,
    pub norm: LayerNorm,
    pub layers: Vec<DecoderLayer>,
    pub output: Linear,
    pub dropout: f64,
}

/// Teacher-forced pass over a gold answer.
#[derive(Clone, Debug)]
pub struct AnswerForward {
    /// Summed negative log-likelihood, `1 × 1`.
    pub nll: Var,
    /// Number of predicted positions (content tokens plus EOS).
    pub predicted: usize,
    /// Answer rows handed to postdiction.
    pub reps: ContextualReps,
}

#[derive(Clone, Debug)]
pub struct DecodedAnswer {
    /// Content token ids (no BOS/EOS).
    pub ids: Vec<usize>,
    pub reps: ContextualReps,
    /// Log-probability of each emitted token, EOS included when reached.
    pub log_probs: Vec<f64>,
    /// Set when `max_len` content tokens were produced without EOS.
    pub truncated: bool,
}

impl AnswerDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        d: usize,
        heads: usize,
        layers: usize,
        ffn: usize,
        max_len: usize,
        vocab_size: usize,
        dropout: f64,
    ) -> Self {
        let positions = store.add(
            "ader/decoder/positions",
            crate::params::uniform_fan_in(max_len, d, d, rng),
        );
        let norm = LayerNorm::new(store, "ader/decoder/embed_norm", d);
        let layers = (0..layers)
            .map(|i| DecoderLayer::new(store, rng, &format!("ader/decoder/layer{i}"), d, heads, ffn))
            .collect();
        let output = Linear::new(store, rng, "ader/output", d, vocab_size, true);
        Self {
            positions,
            norm,
            layers,
            output,
            dropout,
        }
    }

    pub fn max_len(&self, store: &ParamStore) -> usize {
        store.get(self.positions).rows()
    }

    /// Final-layer decoder rows for `input` (which starts with BOS).
    pub fn states(&self, g: &mut Graph, words: &WordEmbedding, input: &[usize], fused: &ContextualReps) -> Result<Var> {
        let max_len = self.max_len(g.store());
        if input.is_empty() || input.len() > max_len {
            return Err(MdstError::Shape(format!(
                "decoder input of {} tokens, limit {max_len}",
                input.len()
            )));
        }
        let table = g.param(words.table);
        let tok = g.gather(table, input)?;
        let pos_table = g.param(self.positions);
        let pos = g.slice_rows(pos_table, 0, input.len())?;
        let x = g.add(tok, pos)?;
        let x = self.norm.forward(g, x)?;
        let mut x = g.dropout(x, self.dropout)?;
        for layer in &self.layers {
            x = layer.forward(g, x, fused.reps, &fused.mask, self.dropout)?;
        }
        Ok(x)
    }

    pub fn logits(&self, g: &mut Graph, states: Var) -> Result<Var> {
        self.output.forward(g, states)
    }

    /// Answer rows from decoder states over `[BOS, a₁..a_ℓ]`: rows `1..=ℓ`,
    /// or the BOS row when the answer is empty.
    fn answer_reps(g: &mut Graph, states: Var, content: usize) -> Result<ContextualReps> {
        let reps = if content == 0 {
            g.slice_rows(states, 0, 1)?
        } else {
            g.slice_rows(states, 1, content)?
        };
        Ok(ContextualReps {
            reps,
            mask: vec![true; content.max(1)],
        })
    }

    /// Summed `−log p(token | prefix, fused)` over every gold position after BOS.
    pub fn answer_nll(
        &self,
        g: &mut Graph,
        words: &WordEmbedding,
        fused: &ContextualReps,
        gold: &TokenSequence,
    ) -> Result<AnswerForward> {
        let ids = &gold.ids;
        if ids.len() < 2 || ids[0] != BOS || ids[ids.len() - 1] != EOS {
            return Err(MdstError::Contract(format!(
                "gold answer {:?} is not framed with BOS/EOS",
                gold.text
            )));
        }
        let input = &ids[..ids.len() - 1];
        let targets = ids[1..].to_vec();
        let states = self.states(g, words, input, fused)?;
        let logits = self.logits(g, states)?;
        let logp = g.log_softmax(logits);
        let picked = g.pick_sum(logp, targets)?;
        let nll = g.scale(picked, -1.0);
        let reps = Self::answer_reps(g, states, input.len() - 1)?;
        Ok(AnswerForward {
            nll,
            predicted: ids.len() - 1,
            reps,
        })
    }

    /// Greedy decoding; ties go to the lower token id.
    pub fn decode_answer(
        &self,
        g: &mut Graph,
        words: &WordEmbedding,
        fused: &ContextualReps,
        max_len: usize,
    ) -> Result<DecodedAnswer> {
        let limit = max_len.min(self.max_len(g.store()) - 1);
        let mut input = vec![BOS];
        let mut log_probs = Vec::new();
        let mut truncated = true;
        let mut last_states = None;
        while input.len() - 1 < limit {
            let states = self.states(g, words, &input, fused)?;
            last_states = Some(states);
            let row = g.slice_rows(states, input.len() - 1, 1)?;
            let logits = self.logits(g, row)?;
            let lp = log_softmax_row(g.value(logits).row(0));
            let (best, best_lp) = argmax(&lp);
            log_probs.push(best_lp);
            if best == EOS {
                truncated = false;
                break;
            }
            input.push(best);
        }
        let content = input.len() - 1;
        let states = match (truncated, last_states) {
            (false, Some(s)) => s,
            _ => self.states(g, words, &input, fused)?,
        };
        let reps = Self::answer_reps(g, states, content)?;
        Ok(DecodedAnswer {
            ids: input[1..].to_vec(),
            reps,
            log_probs,
            truncated,
        })
    }
}

pub(crate) fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn argmax(xs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    (best, xs[best])
}

/// Separate encoder stack for candidate answers (word embeddings shared).
#[derive(Clone, Debug)]
pub struct CandidateEncoder {
    pub encoder: TextEncoder,
}

impl CandidateEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        d: usize,
        heads: usize,
        layers: usize,
        ffn: usize,
        max_len: usize,
        dropout: f64,
    ) -> Self {
        Self {
            encoder: TextEncoder::new(store, rng, "ader/candidate_encoder", d, heads, layers, ffn, max_len, dropout),
        }
    }

    /// `1 × d` pooled encoding of one candidate.
    pub fn pooled(&self, g: &mut Graph, words: &WordEmbedding, seq: &TokenSequence, pooling: Pooling) -> Result<Var> {
        let reps = self.encoder.encode(g, words, seq)?;
        pool(g, &reps, pooling)
    }
}

/// Mean over real rows, or the first row.
pub fn pool(g: &mut Graph, reps: &ContextualReps, pooling: Pooling) -> Result<Var> {
    match pooling {
        Pooling::Mean => {
            let w = g.constant(mean_weights(&reps.mask));
            g.matmul(w, reps.reps)
        }
        Pooling::First => g.slice_rows(reps.reps, 0, 1),
    }
}

/// `1 × C` dot products between the pooled fused question and `C` pooled candidates (`C × d`).
pub fn score_pooled(g: &mut Graph, fused: &ContextualReps, candidates: Var, pooling: Pooling) -> Result<Var> {
    let c = g.shape(candidates).0;
    if c != NUM_CANDIDATES {
        return Err(MdstError::Contract(format!(
            "expected {NUM_CANDIDATES} candidates, got {c}"
        )));
    }
    let query = pool(g, fused, pooling)?;
    g.matmul_nt(query, candidates)
}

/// Encodes and scores all candidates of one round.
pub fn score_candidates(
    g: &mut Graph,
    words: &WordEmbedding,
    encoder: &CandidateEncoder,
    fused: &ContextualReps,
    candidates: &[TokenSequence],
    pooling: Pooling,
) -> Result<Var> {
    if candidates.len() != NUM_CANDIDATES {
        return Err(MdstError::Contract(format!(
            "expected {NUM_CANDIDATES} candidates, got {}",
            candidates.len()
        )));
    }
    let rows = candidates
        .iter()
        .map(|c| encoder.pooled(g, words, c, pooling))
        .collect::<Result<Vec<_>>>()?;
    let stacked = g.concat_rows(&rows)?;
    score_pooled(g, fused, stacked, pooling)
}

/// `−log softmax(scores)[gt]`.
pub fn candidate_loss(g: &mut Graph, scores: Var, gt: usize) -> Result<Var> {
    let lp = g.log_softmax(scores);
    let picked = g.pick_sum(lp, vec![gt])?;
    Ok(g.scale(picked, -1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateScores {
    pub scores: Vec<f64>,
    pub gt_rank: Option<usize>,
}

impl CandidateScores {
    pub fn new(scores: Vec<f64>, gt_index: Option<usize>) -> Self {
        let gt_rank = gt_index.map(|gt| rank_of(&scores, gt));
        Self { scores, gt_rank }
    }

    /// Candidate indices from best to worst.
    pub fn ranking(&self) -> Vec<usize> {
        ranking(&self.scores)
    }
}

/// Indices sorted by descending score, ties by ascending index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// 1-based rank of candidate `gt` under [`ranking`].
pub fn rank_of(scores: &[f64], gt: usize) -> usize {
    let s = scores[gt];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x > s || (x == s && j < gt))
        .count()
}

/// Scores as a plain row vector (for cached candidate encodings).
pub fn dot_scores(query: &[f64], candidates: &Matrix) -> Vec<f64> {
    (0..candidates.rows())
        .map(|r| candidates.row(r).iter().zip(query).map(|(a, b)| a * b).sum())
        .collect()
}

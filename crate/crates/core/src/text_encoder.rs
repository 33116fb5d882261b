//! Question and caption encoder.
//!
//! Word embeddings live in a single table shared by every text component
//! (question encoder, answer decoder, candidate encoder); each component
//! keeps its own positional table and layer stack.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::data_ingest::vocab::{split_words, BOS, EOS, PAD, UNK};
use crate::data_ingest::Vocabulary;
use crate::error::{MdstError, Result};
use crate::params::{uniform_fan_in, ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::transformer::{EncoderLayer, LayerNorm};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// `true` for real tokens, `false` for padding.
    pub mask: Vec<bool>,
    pub text: String,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<usize>, text: impl Into<String>) -> Self {
        let mask = ids.iter().map(|&i| i != PAD).collect();
        Self {
            ids,
            mask,
            text: text.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids strictly between the BOS and EOS frame (or all ids when unframed).
    pub fn content(&self) -> &[usize] {
        let mut s = &self.ids[..];
        while let Some(rest) = s.strip_suffix(&[PAD]) {
            s = rest;
        }
        if let Some(rest) = s.strip_prefix(&[BOS]) {
            s = rest;
        }
        if let Some(rest) = s.strip_suffix(&[EOS]) {
            s = rest;
        }
        s
    }

    /// Keeps at most `max_len` positions, re-closing the frame with EOS.
    pub fn truncated(mut self, max_len: usize) -> Self {
        if self.ids.len() > max_len {
            let framed = self.ids.last() == Some(&EOS);
            self.ids.truncate(max_len);
            self.mask.truncate(max_len);
            if framed && max_len > 0 {
                self.ids[max_len - 1] = EOS;
            }
        }
        self
    }

    /// Right-pads with PAD to `len` positions.
    pub fn padded(&self, len: usize) -> Self {
        let mut out = self.clone();
        if len > out.ids.len() {
            out.ids.resize(len, PAD);
            out.mask.resize(len, false);
        }
        out
    }
}

/// Lowercases, splits punctuation, maps unknown words to UNK and frames with BOS/EOS.
/// Empty text yields a single UNK token.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let words = split_words(text);
    if words.is_empty() {
        log::warn!("empty text encoded as a single unknown token");
        return TokenSequence {
            ids: vec![UNK],
            mask: vec![true],
            text: text.to_string(),
        };
    }
    let mut ids = Vec::with_capacity(words.len() + 2);
    ids.push(BOS);
    ids.extend(words.iter().map(|w| vocab.id(w)));
    ids.push(EOS);
    TokenSequence {
        mask: vec![true; ids.len()],
        ids,
        text: text.to_string(),
    }
}

/// Encoded token rows together with the padding mask of their source.
#[derive(Clone, Debug)]
pub struct ContextualReps {
    /// `l × d`.
    pub reps: Var,
    pub mask: Vec<bool>,
}

impl ContextualReps {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn fully_real(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }
}

/// `1 × l` weights averaging the unmasked rows.
pub fn mean_weights(mask: &[bool]) -> Matrix {
    let n = mask.iter().filter(|&&m| m).count().max(1) as f64;
    Matrix::from_fn(1, mask.len(), |_, j| if mask[j] { 1.0 / n } else { 0.0 })
}

/// Shared word-embedding table, `V × d`.
#[derive(Clone, Debug)]
pub struct WordEmbedding {
    pub table: ParamId,
}

impl WordEmbedding {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, vocab_size: usize, d: usize) -> Self {
        Self {
            table: store.add("text_encoder/word_embedding", uniform_fan_in(vocab_size, d, d, rng)),
        }
    }
}

/// Token embedding plus learned positions, normalised, followed by a layer stack.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub positions: ParamId,
    pub norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
    pub dropout: f64,
}

impl TextEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        d: usize,
        heads: usize,
        layers: usize,
        ffn: usize,
        max_len: usize,
        dropout: f64,
    ) -> Self {
        let positions = store.add(format!("{prefix}/positions"), uniform_fan_in(max_len, d, d, rng));
        let norm = LayerNorm::new(store, &format!("{prefix}/embed_norm"), d);
        let layers = (0..layers)
            .map(|i| EncoderLayer::new(store, rng, &format!("{prefix}/layer{i}"), d, heads, ffn))
            .collect();
        Self {
            positions,
            norm,
            layers,
            dropout,
        }
    }

    pub fn max_len(&self, store: &ParamStore) -> usize {
        store.get(self.positions).rows()
    }

    /// Embedded input rows before the layer stack.
    pub fn embed(&self, g: &mut Graph, words: &WordEmbedding, ids: &[usize]) -> Result<Var> {
        let max_len = self.max_len(g.store());
        if ids.is_empty() {
            return Err(MdstError::Shape("cannot encode an empty token sequence".into()));
        }
        if ids.len() > max_len {
            return Err(MdstError::Shape(format!(
                "sequence of {} tokens exceeds the maximum of {max_len}",
                ids.len()
            )));
        }
        let table = g.param(words.table);
        let tok = g.gather(table, ids)?;
        let pos_table = g.param(self.positions);
        let pos = g.slice_rows(pos_table, 0, ids.len())?;
        let x = g.add(tok, pos)?;
        let x = self.norm.forward(g, x)?;
        g.dropout(x, self.dropout)
    }

    pub fn encode(&self, g: &mut Graph, words: &WordEmbedding, seq: &TokenSequence) -> Result<ContextualReps> {
        let mut x = self.embed(g, words, &seq.ids)?;
        for layer in &self.layers {
            x = layer.forward(g, x, &seq.mask, self.dropout)?;
        }
        Ok(ContextualReps {
            reps: x,
            mask: seq.mask.clone(),
        })
    }
}

/// Eval-mode convenience: encodes `seq` on a fresh graph and returns the rows.
pub fn encode_sequence(
    store: &ParamStore,
    encoder: &TextEncoder,
    words: &WordEmbedding,
    seq: &TokenSequence,
) -> Result<Matrix> {
    let mut g = Graph::new(store);
    let reps = encoder.encode(&mut g, words, seq)?;
    Ok(g.value(reps.reps).clone())
}

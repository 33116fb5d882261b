//! Standard Transformer building blocks (post-norm), shared by the question
//! encoder, the candidate encoder and the answer decoder.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::params::{uniform_fan_in, ParamId, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug)]
pub struct Linear {
    /// `out × in`.
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let w = store.add(format!("{name}/W"), uniform_fan_in(output, input, input, rng));
        let b = bias.then(|| store.add(format!("{name}/b"), Matrix::zeros(1, output)));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul_nt(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalisation with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}/gain"), Matrix::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}/bias"), Matrix::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.layer_norm(x);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

/// Additive attention mask: `-inf` for masked keys and, when `causal`, for future positions.
pub fn attention_mask(lq: usize, key_mask: Option<&[bool]>, causal: bool) -> Option<Matrix> {
    let lk = key_mask.map_or(lq, <[bool]>::len);
    let any_key_masked = key_mask.is_some_and(|m| m.iter().any(|&k| !k));
    if !causal && !any_key_masked {
        return None;
    }
    Some(Matrix::from_fn(lq, lk, |i, j| {
        let key_ok = key_mask.is_none_or(|m| m[j]);
        let time_ok = !causal || j <= i;
        if key_ok && time_ok {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }))
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(store, rng, &format!("{name}/q"), d, d, true),
            k: Linear::new(store, rng, &format!("{name}/k"), d, d, true),
            v: Linear::new(store, rng, &format!("{name}/v"), d, d, true),
            o: Linear::new(store, rng, &format!("{name}/o"), d, d, true),
            heads,
        }
    }

    /// Returns the attended output and the per-head attention distributions.
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Var,
        key_mask: Option<&[bool]>,
        causal: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let (lq, d) = g.shape(x);
        let lk = g.shape(memory).0;
        let dh = d / self.heads;
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let mask = match key_mask {
            Some(m) => attention_mask(lq, Some(m), causal),
            None => attention_mask(lq, Some(&vec![true; lk]), causal),
        }
        .map(|m| g.constant(m));
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let s = g.matmul_nt(qh, kh)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = mask {
                s = g.add(s, m)?;
            }
            let p = g.softmax(s);
            outs.push(g.matmul(p, vh)?);
            weights.push(p);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        Ok((self.o.forward(g, cat)?, weights))
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, key_mask: Option<&[bool]>, causal: bool) -> Result<Var> {
        Ok(self.forward_with_weights(g, x, memory, key_mask, causal)?.0)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}/up"), d, hidden, true),
            down: Linear::new(store, rng, &format!("{name}/down"), hidden, d, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout: f64) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        let h = g.dropout(h, dropout)?;
        self.down.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize, hidden: usize) -> Self {
        Self {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}/self_attn"), d, heads),
            norm1: LayerNorm::new(store, &format!("{name}/norm1"), d),
            ffn: FeedForward::new(store, rng, &format!("{name}/ffn"), d, hidden),
            norm2: LayerNorm::new(store, &format!("{name}/norm2"), d),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: &[bool], dropout: f64) -> Result<Var> {
        let a = self.attn.forward(g, x, x, Some(mask), false)?;
        let a = g.dropout(a, dropout)?;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, x)?;
        let f = self.ffn.forward(g, x, dropout)?;
        let f = g.dropout(f, dropout)?;
        let x = g.add(x, f)?;
        self.norm2.forward(g, x)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize, hidden: usize) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}/self_attn"), d, heads),
            norm1: LayerNorm::new(store, &format!("{name}/norm1"), d),
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}/cross_attn"), d, heads),
            norm2: LayerNorm::new(store, &format!("{name}/norm2"), d),
            ffn: FeedForward::new(store, rng, &format!("{name}/ffn"), d, hidden),
            norm3: LayerNorm::new(store, &format!("{name}/norm3"), d),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, memory_mask: &[bool], dropout: f64) -> Result<Var> {
        let a = self.self_attn.forward(g, x, x, None, true)?;
        let a = g.dropout(a, dropout)?;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, x)?;
        let c = self.cross_attn.forward(g, x, memory, Some(memory_mask), false)?;
        let c = g.dropout(c, dropout)?;
        let x = g.add(x, c)?;
        let x = self.norm2.forward(g, x)?;
        let f = self.ffn.forward(g, x, dropout)?;
        let f = g.dropout(f, dropout)?;
        let x = g.add(x, f)?;
        self.norm3.forward(g, x)
    }
}

use super::attention::{attention, causal_mask, AttentionOutput, AttentionParams};
use super::params::{Bound, ParamBuilder, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};
use rand::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn init<R: Rng>(b: &mut ParamBuilder<'_, R>, d: usize) -> Self {
        Self {
            gain: b.constant("gain", vec![d], 1.0),
            bias: b.constant("bias", vec![d], 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, bound.var(self.gain), bound.var(self.bias), LAYER_NORM_EPS)
    }
}

/// `x W1 + b1 -> gelu -> W2 + b2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForwardParams {
    pub fn init<R: Rng>(b: &mut ParamBuilder<'_, R>, d: usize, d_ff: usize) -> Self {
        Self {
            w1: b.uniform("w1", vec![d, d_ff]),
            b1: b.constant("b1", vec![d_ff], 0.0),
            w2: b.uniform("w2", vec![d_ff, d]),
            b2: b.constant("b2", vec![d], 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let h = g.matmul(x, bound.var(self.w1))?;
        let h = g.add_bias(h, bound.var(self.b1))?;
        let h = g.gelu(h);
        let h = g.matmul(h, bound.var(self.w2))?;
        g.add_bias(h, bound.var(self.b2))
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderLayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ffn: FeedForwardParams,
}

impl EncoderLayerParams {
    pub fn init<R: Rng>(b: &mut ParamBuilder<'_, R>, d: usize, d_ff: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: b.scope("ln1", |b| LayerNormParams::init(b, d)),
            attn: b.scope("attn", |b| AttentionParams::init(b, d, d, d, d, heads))?,
            ln2: b.scope("ln2", |b| LayerNormParams::init(b, d)),
            ffn: b.scope("ffn", |b| FeedForwardParams::init(b, d, d_ff)),
        })
    }
}

/// `x + Attn(LN(x))`, then `+ FFN(LN(.))`.
pub fn encoder_layer(
    g: &mut Graph,
    bound: &Bound,
    p: &EncoderLayerParams,
    x: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let h = p.ln1.forward(g, bound, x)?;
    let AttentionOutput { output, .. } = attention(g, bound, &p.attn, h, h, mask)?;
    let x = g.add(x, output)?;
    let h = p.ln2.forward(g, bound, x)?;
    let f = p.ffn.forward(g, bound, h)?;
    g.add(x, f)
}

/// Pre-norm decoder layer: causal self-attention, cross-attention over
/// `memory`, feed-forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderLayerParams {
    pub ln1: LayerNormParams,
    pub self_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln3: LayerNormParams,
    pub ffn: FeedForwardParams,
}

impl DecoderLayerParams {
    pub fn init<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        d: usize,
        d_memory: usize,
        d_ff: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            ln1: b.scope("ln1", |b| LayerNormParams::init(b, d)),
            self_attn: b.scope("self_attn", |b| AttentionParams::init(b, d, d, d, d, heads))?,
            ln2: b.scope("ln2", |b| LayerNormParams::init(b, d)),
            cross_attn: b.scope("cross_attn", |b| AttentionParams::init(b, d, d_memory, d, d, heads))?,
            ln3: b.scope("ln3", |b| LayerNormParams::init(b, d)),
            ffn: b.scope("ffn", |b| FeedForwardParams::init(b, d, d_ff)),
        })
    }
}

pub fn decoder_layer(g: &mut Graph, bound: &Bound, p: &DecoderLayerParams, y: Var, memory: Var) -> Result<Var> {
    let l = g.shape(y)[0];
    let mask = causal_mask(l);
    let h = p.ln1.forward(g, bound, y)?;
    let sa = attention(g, bound, &p.self_attn, h, h, Some(&mask))?;
    let y = g.add(y, sa.output)?;
    let h = p.ln2.forward(g, bound, y)?;
    let ca = attention(g, bound, &p.cross_attn, h, memory, None)?;
    let y = g.add(y, ca.output)?;
    let h = p.ln3.forward(g, bound, y)?;
    let f = p.ffn.forward(g, bound, h)?;
    g.add(y, f)
}

/// Learned token and position tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingParams {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub vocab: usize,
    pub max_len: usize,
}

impl EmbeddingParams {
    pub fn init<R: Rng>(b: &mut ParamBuilder<'_, R>, vocab: usize, max_len: usize, d: usize) -> Self {
        Self {
            tokens: b.uniform_fan_in("tokens", vec![vocab, d], 1),
            positions: b.uniform_fan_in("positions", vec![max_len, d], d),
            vocab,
            max_len,
        }
    }
}

/// Token embedding plus position embedding for positions `0..len`.
pub fn embed(g: &mut Graph, bound: &Bound, p: &EmbeddingParams, tokens: &[usize]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence("embed"));
    }
    if tokens.len() > p.max_len {
        return Err(Error::Index {
            op: "embed position",
            index: tokens.len() - 1,
            bound: p.max_len,
        });
    }
    let tok = g.gather(bound.var(p.tokens), tokens)?;
    let pos = add_positions(g, bound, p.positions, tok)?;
    Ok(pos)
}

/// Adds rows `0..l` of a position table to an `l×d` sequence.
pub fn add_positions(g: &mut Graph, bound: &Bound, table: ParamId, x: Var) -> Result<Var> {
    let l = g.shape(x)[0];
    let max_len = g.shape(bound.var(table))[0];
    if l > max_len {
        return Err(Error::Index {
            op: "position embedding",
            index: l - 1,
            bound: max_len,
        });
    }
    let ids: Vec<usize> = (0..l).collect();
    let pos = g.gather(bound.var(table), &ids)?;
    g.add(x, pos)
}

use super::params::{Bound, ParamBuilder, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use rand::Rng;

/// Projection weights of a multi-head attention block. Queries come from a
/// `d_q_in` stream, keys and values from a `d_kv_in` stream; heads split the
/// `d_k` projection evenly. No biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
    pub d_k: usize,
}

impl AttentionParams {
    pub fn init<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        d_q_in: usize,
        d_kv_in: usize,
        d_k: usize,
        d_out: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d_k.is_multiple_of(heads) {
            return Err(Error::Param(format!(
                "attention width {d_k} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            w_q: b.uniform("w_q", vec![d_q_in, d_k]),
            w_k: b.uniform("w_k", vec![d_kv_in, d_k]),
            w_v: b.uniform("w_v", vec![d_kv_in, d_k]),
            w_o: b.uniform("w_o", vec![d_k, d_out]),
            heads,
            d_k,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_k / self.heads
    }
}

/// Output of [`attention`]: the projected result plus the post-softmax
/// weights averaged over heads, detached from the graph.
#[derive(Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Tensor,
}

/// Lower-triangular mask: query `i` may attend to keys `0..=i`.
pub fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|k| k % len <= k / len).collect()
}

/// Scaled dot-product multi-head attention with scale `1/sqrt(d_k/heads)`.
///
/// `mask`, when given, is row-major `l_q × l_kv` with `true` for allowed
/// keys. Every query row must allow at least one key.
pub fn attention(
    g: &mut Graph,
    bound: &Bound,
    params: &AttentionParams,
    q_in: Var,
    kv_in: Var,
    mask: Option<&[bool]>,
) -> Result<AttentionOutput> {
    let (l_q, l_kv) = (g.shape(q_in)[0], g.shape(kv_in)[0]);
    if let Some(m) = mask {
        if m.len() != l_q * l_kv {
            return Err(Error::Shape {
                op: "attention mask",
                lhs: vec![l_q, l_kv],
                rhs: vec![m.len()],
            });
        }
        if let Some(row) = m.chunks(l_kv).position(|r| !r.iter().any(|&x| x)) {
            return Err(Error::Mask(row));
        }
    }
    let w_q = bound.var(params.w_q);
    let w_k = bound.var(params.w_k);
    let w_v = bound.var(params.w_v);
    let w_o = bound.var(params.w_o);
    let q = g.matmul(q_in, w_q)?;
    let k = g.matmul(kv_in, w_k)?;
    let v = g.matmul(kv_in, w_v)?;

    let dh = params.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(params.heads);
    let mut avg = vec![0.0; l_q * l_kv];
    for h in 0..params.heads {
        let (qh, kh, vh) = if params.heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, 1, h * dh, dh)?,
                g.slice(k, 1, h * dh, dh)?,
                g.slice(v, 1, h * dh, dh)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let weights = match mask {
            Some(m) => g.masked_softmax(scores, m)?,
            None => g.softmax(scores, 1)?,
        };
        for (a, w) in avg.iter_mut().zip(g.data(weights)) {
            *a += w;
        }
        heads.push(g.matmul(weights, vh)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat(&heads, 1)?
    };
    let output = g.matmul(merged, w_o)?;
    let inv = 1.0 / params.heads as f64;
    avg.iter_mut().for_each(|a| *a *= inv);
    Ok(AttentionOutput {
        output,
        weights: Tensor::new(vec![l_q, l_kv], avg)?,
    })
}

/// Direct store access for tests and hand-set parameters.
pub fn set_attention_weights(
    store: &mut ParamStore,
    params: &AttentionParams,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    w_o: Tensor,
) -> Result<()> {
    for (id, t) in [
        (params.w_q, w_q),
        (params.w_k, w_k),
        (params.w_v, w_v),
        (params.w_o, w_o),
    ] {
        let name = store.name(id).to_string();
        store.set(&name, t)?;
    }
    Ok(())
}

//! Transformer building blocks on top of [`crate::tensor`].

mod attention;
mod layers;
mod params;

pub use attention::{attention, causal_mask, set_attention_weights, AttentionOutput, AttentionParams};
pub use layers::{
    add_positions, decoder_layer, embed, encoder_layer, DecoderLayerParams, EmbeddingParams, EncoderLayerParams,
    FeedForwardParams, LayerNormParams, LAYER_NORM_EPS,
};
pub use params::{Bound, ParamBuilder, ParamId, ParamStore};

use crate::error::Result;
use crate::tensor::{finite_diff_check, GradCheckReport, Graph, Var};

/// Finite-difference check of a scalar function of every parameter in
/// `store` (plus nothing else).
pub fn grad_check_store<F>(store: &ParamStore, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let tensors: Vec<_> = store.iter().map(|(_, t)| t.clone()).collect();
    finite_diff_check(
        |g, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            f(g, &bound)
        },
        &tensors,
        h,
        tol,
    )
}

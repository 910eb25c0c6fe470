//! Finite-difference checks over every differentiable operation and the
//! full training objective.

use crate::data::{SongInstance, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{contrastive_loss, LossOptions, Model, ModelConfig};
use crate::nn::{self, grad_check_store, AttentionParams, ParamBuilder, ParamStore};
use crate::tensor::{finite_diff_check, GradCheckReport, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub dims: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub entries: Vec<SuiteEntry>,
}

struct Suite {
    rng: ChaCha8Rng,
    step: f64,
    tol: f64,
    entries: Vec<SuiteEntry>,
}

impl Suite {
    fn random(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| self.rng.gen_range(lo..hi)).collect()).expect("nonzero shape")
    }

    /// Checks `f(inputs) · w` for a fixed random weight tensor `w`, so that
    /// every output entry carries a distinct adjoint.
    fn op<F>(&mut self, name: &str, inputs: Vec<Tensor>, f: F) -> Result<()>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut probe = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
        let out = f(&mut probe, &vars)?;
        let shape = probe.shape(out).to_vec();
        let weights = if shape.is_empty() {
            Tensor::scalar(1.0)
        } else {
            self.random(&shape, -1.0, 1.0)
        };
        let report = finite_diff_check(
            |g, vs| {
                let y = f(g, vs)?;
                let w = g.constant(weights.clone());
                let prod = g.mul(y, w)?;
                Ok(g.sum(prod))
            },
            &inputs,
            self.step,
            self.tol,
        )?;
        self.push(name, report);
        Ok(())
    }

    fn push(&mut self, name: &str, report: GradCheckReport) {
        self.entries.push(SuiteEntry {
            name: name.to_string(),
            report,
        });
    }
}

fn toy_instance(rng: &mut ChaCha8Rng, frames: usize, n_feat: usize, vocab: usize, len: usize) -> SongInstance {
    let tokens = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        std::iter::once(BOS)
            .chain((0..len - 2).map(|_| rng.gen_range(4..vocab)))
            .chain(std::iter::once(EOS))
            .collect()
    };
    SongInstance {
        music: Tensor::new(
            vec![frames, n_feat],
            (0..frames * n_feat).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .expect("nonzero shape"),
        lyrics: tokens(rng),
        caption: tokens(rng),
        music_topic: 0,
        lyric_topic: 0,
    }
}

/// Runs every check at width `d` (even, at least 2) with step `h` and
/// relative-error tolerance `tol`.
pub fn run_suite(d: usize, h: f64, tol: f64, seed: u64) -> Result<SuiteReport> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(Error::Param(format!(
            "suite width must be even and at least 2, got {d}"
        )));
    }
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        step: h,
        tol,
        entries: Vec::new(),
    };
    let (r, c) = (3, d);

    let a = s.random(&[r, c], -1.0, 1.0);
    let b = s.random(&[c, 2], -1.0, 1.0);
    s.op("matmul", vec![a.clone(), b], |g, v| g.matmul(v[0], v[1]))?;
    let b2 = s.random(&[r, c], -1.0, 1.0);
    s.op("add", vec![a.clone(), b2.clone()], |g, v| g.add(v[0], v[1]))?;
    s.op("sub", vec![a.clone(), b2.clone()], |g, v| g.sub(v[0], v[1]))?;
    s.op("mul", vec![a.clone(), b2.clone()], |g, v| g.mul(v[0], v[1]))?;
    let bias = s.random(&[c], -1.0, 1.0);
    s.op("add_bias", vec![a.clone(), bias], |g, v| g.add_bias(v[0], v[1]))?;
    s.op("scale", vec![a.clone()], |g, v| Ok(g.scale(v[0], -1.7)))?;
    s.op("exp", vec![a.clone()], |g, v| Ok(g.exp(v[0])))?;
    let pos = s.random(&[r, c], 0.5, 2.0);
    s.op("log", vec![pos], |g, v| Ok(g.log(v[0])))?;
    s.op("tanh", vec![a.clone()], |g, v| Ok(g.tanh(v[0])))?;
    let wide = s.random(&[r, c], -3.0, 3.0);
    s.op("gelu", vec![wide], |g, v| Ok(g.gelu(v[0])))?;
    s.op("transpose", vec![a.clone()], |g, v| g.transpose(v[0]))?;
    s.op("reshape", vec![a.clone()], move |g, v| g.reshape(v[0], vec![c, r]))?;
    s.op("concat_rows", vec![a.clone(), b2.clone()], |g, v| {
        g.concat(&[v[0], v[1]], 0)
    })?;
    s.op("concat_cols", vec![a.clone(), b2.clone()], |g, v| {
        g.concat(&[v[0], v[1]], 1)
    })?;
    s.op("slice", vec![a.clone()], move |g, v| g.slice(v[0], 1, 1, c - 1))?;
    let table = s.random(&[5, c], -1.0, 1.0);
    s.op("gather", vec![table], |g, v| g.gather(v[0], &[4, 0, 4, 2]))?;
    s.op("softmax_rows", vec![a.clone()], |g, v| g.softmax(v[0], 1))?;
    s.op("softmax_cols", vec![a.clone()], |g, v| g.softmax(v[0], 0))?;
    let sq = s.random(&[r, r], -1.0, 1.0);
    s.op("masked_softmax", vec![sq], move |g, v| {
        g.masked_softmax(v[0], &nn::causal_mask(r))
    })?;
    s.op("mean_rows", vec![a.clone()], |g, v| g.mean_axis(v[0], 0))?;
    s.op("mean_cols", vec![a.clone()], |g, v| g.mean_axis(v[0], 1))?;
    s.op("mean_pool", vec![a.clone()], |g, v| g.mean_pool(v[0]))?;
    s.op("var_cols", vec![a.clone()], |g, v| g.var_axis(v[0], 1))?;
    let gain = s.random(&[c], 0.5, 1.5);
    let shift = s.random(&[c], -0.5, 0.5);
    s.op("layer_norm", vec![a.clone(), gain, shift], |g, v| {
        g.layer_norm(v[0], v[1], v[2], nn::LAYER_NORM_EPS)
    })?;
    s.op("l2_normalize", vec![a.clone()], |g, v| g.l2_normalize(v[0]))?;
    s.op("sum", vec![a.clone()], |g, v| Ok(g.sum(v[0])))?;
    s.op("mean", vec![a.clone()], |g, v| Ok(g.mean(v[0])))?;
    let logits = s.random(&[4, 5], -2.0, 2.0);
    s.op("cross_entropy", vec![logits], |g, v| {
        g.cross_entropy(v[0], &[1, 0, 4, 3], 0)
    })?;
    let seq = s.random(&[7, 2], -1.0, 1.0);
    s.op("unfold", vec![seq], |g, v| g.unfold(v[0], 3, 2))?;

    // contrastive loss, both directions and symmetric
    let zm = s.random(&[4, c], -1.0, 1.0);
    let zt = s.random(&[4, c], -1.0, 1.0);
    for (name, sym) in [("contrastive", false), ("contrastive_symmetric", true)] {
        s.op(name, vec![zm.clone(), zt.clone()], move |g, v| {
            let a = g.l2_normalize(v[0])?;
            let b = g.l2_normalize(v[1])?;
            contrastive_loss(g, a, b, 0.5, sym)
        })?;
    }

    // attention and layers, through their parameters
    let mut store = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (attn, enc, dec) = {
        let mut pb = ParamBuilder::new(&mut store, &mut prng);
        let attn = pb.scope("attn", |b| AttentionParams::init(b, c, c, c, c, 2))?;
        let enc = pb.scope("enc", |b| nn::EncoderLayerParams::init(b, c, 2 * c, 2))?;
        let dec = pb.scope("dec", |b| nn::DecoderLayerParams::init(b, c, c, 2 * c, 2))?;
        (attn, enc, dec)
    };
    let x = s.random(&[r, c], -1.0, 1.0);
    let mem = s.random(&[4, c], -1.0, 1.0);
    let w = s.random(&[r, c], -1.0, 1.0);
    let weighted = |g: &mut Graph, y: Var| -> Result<Var> {
        let wv = g.constant(w.clone());
        let p = g.mul(y, wv)?;
        Ok(g.sum(p))
    };
    let report = grad_check_store(
        &store,
        |g, b| {
            let q = g.constant(x.clone());
            let kv = g.constant(mem.clone());
            let out = nn::attention(g, b, &attn, q, kv, None)?;
            weighted(g, out.output)
        },
        h,
        tol,
    )?;
    s.push("cross_attention", report);
    let report = grad_check_store(
        &store,
        |g, b| {
            let q = g.constant(x.clone());
            let y = nn::encoder_layer(g, b, &enc, q, None)?;
            weighted(g, y)
        },
        h,
        tol,
    )?;
    s.push("encoder_layer", report);
    let report = grad_check_store(
        &store,
        |g, b| {
            let q = g.constant(x.clone());
            let kv = g.constant(mem.clone());
            let y = nn::decoder_layer(g, b, &dec, q, kv)?;
            weighted(g, y)
        },
        h,
        tol,
    )?;
    s.push("decoder_layer", report);

    // full objective: caption + alpha * contrastive at toy size
    let vocab = 12;
    let n_feat = 3;
    let model = Model::new(
        ModelConfig {
            d_music: d,
            d_text: d,
            d_latent: d,
            d_attn: d,
            d_ff: 2 * d,
            conv: vec![crate::model::ConvSpec {
                channels: d,
                width: 2,
                stride: 2,
            }],
            ..ModelConfig::tiny(vocab, n_feat)
        },
        seed,
    )?;
    let batch: Vec<SongInstance> = (0..2).map(|_| toy_instance(&mut s.rng, 8, n_feat, vocab, 4)).collect();
    let refs: Vec<&SongInstance> = batch.iter().collect();
    let opts = LossOptions {
        alpha: 0.5,
        tau: 0.5,
        symmetric: false,
    };
    let report = grad_check_store(
        &model.params,
        |g, b| Ok(model.batch_losses(g, b, &refs, opts)?.total),
        h,
        tol,
    )?;
    s.push("total_loss", report);

    let max_rel_error = s.entries.iter().map(|e| e.report.max_rel_error).fold(0.0, f64::max);
    Ok(SuiteReport {
        dims: d,
        step: h,
        tolerance: tol,
        max_rel_error,
        passed: s.entries.iter().all(|e| e.report.passed),
        entries: s.entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_width_rejected() {
        assert!(run_suite(3, DEFAULT_STEP, DEFAULT_TOLERANCE, 0).is_err());
        assert!(run_suite(0, DEFAULT_STEP, DEFAULT_TOLERANCE, 0).is_err());
    }
}

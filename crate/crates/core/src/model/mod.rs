//! Music encoder, lyrics encoder, contrastive alignment head, cross-attention
//! fusion and caption decoder.
//!
//! All forward functions take a [`Graph`] and a [`Bound`] produced by
//! [`Model::bind`], so the same code path serves training (parameters are
//! gradient leaves) and inference (parameters are constants).

mod checkpoint;
mod config;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ConvSpec, ModelConfig};

use crate::data::{SongInstance, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::{
    add_positions, attention, decoder_layer, embed, encoder_layer, AttentionParams, Bound, DecoderLayerParams,
    EmbeddingParams, EncoderLayerParams, LayerNormParams, ParamBuilder, ParamId, ParamStore,
};
use crate::tensor::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name prefix of every music-encoder parameter.
pub const MUSIC_PREFIX: &str = "music.";
/// Name prefix of the alignment head parameters.
pub const HEAD_PREFIX: &str = "head.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerParams {
    /// `(width * c_in) × c_out`
    pub kernel: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MusicEncoderParams {
    pub conv: Vec<ConvLayerParams>,
    pub positions: ParamId,
    pub layers: Vec<EncoderLayerParams>,
    pub final_norm: LayerNormParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LyricsEncoderParams {
    pub embedding: EmbeddingParams,
    pub layers: Vec<EncoderLayerParams>,
    pub final_norm: LayerNormParams,
}

/// Linear maps from pooled encoder states to the shared latent space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignmentHeadParams {
    /// `d_music × d_latent`
    pub music_proj: ParamId,
    /// `d_text × d_latent`
    pub text_proj: ParamId,
}

/// Lyrics-query / music-key cross-attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionParams {
    pub attn: AttentionParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderParams {
    pub embedding: EmbeddingParams,
    pub layers: Vec<DecoderLayerParams>,
    pub final_norm: LayerNormParams,
    /// `d_text × vocab`
    pub output: ParamId,
    pub output_bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    music: MusicEncoderParams,
    lyrics: LyricsEncoderParams,
    head: AlignmentHeadParams,
    fusion: FusionParams,
    decoder: DecoderParams,
}

/// Knobs of the combined objective `L_cap + alpha * L_contrast`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub alpha: f64,
    pub tau: f64,
    pub symmetric: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            alpha: 0.02,
            tau: 0.07,
            symmetric: false,
        }
    }
}

/// Graph handles of one batch forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BatchLosses {
    pub caption: Var,
    pub contrastive: Var,
    pub total: Var,
    /// `n × d_latent`, unit rows
    pub z_music: Var,
    /// `n × d_latent`, unit rows
    pub z_text: Var,
}

/// Cross-attention weights of one sample, for inspection.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    /// `l_t × l_m`, rows sum to one
    pub weights: Tensor,
    pub lyric_tokens: Vec<usize>,
    /// Raw frame range `[start, end)` covered by each encoded music step.
    pub segments: Vec<(usize, usize)>,
}

impl AttentionMap {
    /// Mean Shannon entropy (nats) of the attention rows.
    pub fn mean_row_entropy(&self) -> f64 {
        let cols = self.weights.cols();
        let rows = self.weights.data().chunks(cols);
        let n = rows.len() as f64;
        rows.map(|r| -r.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
            .sum::<f64>()
            / n
    }

    /// Heatmap CSV: a header of segment labels, then one labelled row per
    /// lyric token. `word` renders a token id.
    pub fn write_csv(&self, w: impl std::io::Write, word: impl Fn(usize) -> String) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["token".to_string()];
        header.extend(self.segments.iter().map(|(a, b)| format!("frames {a}-{}", b - 1)));
        out.write_record(&header)?;
        let cols = self.weights.cols();
        for (i, (row, &tok)) in self.weights.data().chunks(cols).zip(&self.lyric_tokens).enumerate() {
            let mut rec = vec![format!("{i}:{}", word(tok))];
            rec.extend(row.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Fresh parameters, uniform in `±1/sqrt(fan_in)`, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let mut b = ParamBuilder::new(&mut params, &mut rng);
        let music = b.scope("music", |b| -> Result<_> {
            let mut c_in = c.n_feat;
            let mut conv = Vec::with_capacity(c.conv.len());
            for (i, spec) in c.conv.iter().enumerate() {
                conv.push(b.scope(&format!("conv{i}"), |b| ConvLayerParams {
                    kernel: b.uniform("kernel", vec![spec.width * c_in, spec.channels]),
                    bias: b.constant("bias", vec![spec.channels], 0.0),
                    width: spec.width,
                    stride: spec.stride,
                }));
                c_in = spec.channels;
            }
            let positions = b.uniform_fan_in("positions", vec![c.max_frames, c.d_music], c.d_music);
            let layers = (0..c.music_layers)
                .map(|i| {
                    b.scope(&format!("layer{i}"), |b| {
                        EncoderLayerParams::init(b, c.d_music, c.d_ff, c.heads)
                    })
                })
                .collect::<Result<_>>()?;
            let final_norm = b.scope("final_norm", |b| LayerNormParams::init(b, c.d_music));
            Ok(MusicEncoderParams {
                conv,
                positions,
                layers,
                final_norm,
            })
        })?;
        let lyrics = b.scope("lyrics", |b| -> Result<_> {
            let embedding = b.scope("embed", |b| EmbeddingParams::init(b, c.vocab_size, c.max_len, c.d_text));
            let layers = (0..c.text_layers)
                .map(|i| {
                    b.scope(&format!("layer{i}"), |b| {
                        EncoderLayerParams::init(b, c.d_text, c.d_ff, c.heads)
                    })
                })
                .collect::<Result<_>>()?;
            let final_norm = b.scope("final_norm", |b| LayerNormParams::init(b, c.d_text));
            Ok(LyricsEncoderParams {
                embedding,
                layers,
                final_norm,
            })
        })?;
        let head = b.scope("head", |b| AlignmentHeadParams {
            music_proj: b.uniform("music_proj", vec![c.d_music, c.d_latent]),
            text_proj: b.uniform("text_proj", vec![c.d_text, c.d_latent]),
        });
        let fusion = b.scope("fusion", |b| -> Result<_> {
            Ok(FusionParams {
                attn: AttentionParams::init(b, c.d_text, c.d_music, c.d_attn, c.d_text, c.cross_heads)?,
            })
        })?;
        let decoder = b.scope("decoder", |b| -> Result<_> {
            let embedding = b.scope("embed", |b| EmbeddingParams::init(b, c.vocab_size, c.max_len, c.d_text));
            let layers = (0..c.decoder_layers)
                .map(|i| {
                    b.scope(&format!("layer{i}"), |b| {
                        DecoderLayerParams::init(b, c.d_text, c.d_text, c.d_ff, c.heads)
                    })
                })
                .collect::<Result<_>>()?;
            let final_norm = b.scope("final_norm", |b| LayerNormParams::init(b, c.d_text));
            let output = b.uniform("output", vec![c.d_text, c.vocab_size]);
            let output_bias = b.constant("output_bias", vec![c.vocab_size], 0.0);
            Ok(DecoderParams {
                embedding,
                layers,
                final_norm,
                output,
                output_bias,
            })
        })?;
        Ok(Self {
            config,
            params,
            layout: Layout {
                music,
                lyrics,
                head,
                fusion,
                decoder,
            },
        })
    }

    pub fn music_params(&self) -> &MusicEncoderParams {
        &self.layout.music
    }

    pub fn lyrics_params(&self) -> &LyricsEncoderParams {
        &self.layout.lyrics
    }

    pub fn head_params(&self) -> &AlignmentHeadParams {
        &self.layout.head
    }

    pub fn fusion_params(&self) -> &FusionParams {
        &self.layout.fusion
    }

    pub fn decoder_params(&self) -> &DecoderParams {
        &self.layout.decoder
    }

    pub fn is_music_param(&self, id: ParamId) -> bool {
        self.params.name(id).starts_with(MUSIC_PREFIX)
    }

    /// Binds parameters as gradient leaves, except the music encoder when
    /// `freeze_music` is set.
    pub fn bind(&self, g: &mut Graph, freeze_music: bool) -> Bound {
        self.params.bind(g, |id| !(freeze_music && self.is_music_param(id)))
    }

    /// Binds every parameter as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        self.params.bind(g, |_| false)
    }

    /// Shortest raw input accepted by the conv front-end.
    pub fn min_frames(&self) -> usize {
        // Each layer needs at least `width` rows; walk backwards from one output row.
        let mut need = 1;
        for spec in self.config.conv.iter().rev() {
            need = ((need - 1) * spec.stride + 1).max(spec.width);
        }
        need
    }

    /// Encoded music length for `l_raw` input frames.
    pub fn encoded_len(&self, l_raw: usize) -> usize {
        self.config.conv.iter().fold(l_raw, |l, s| l.div_ceil(s.stride))
    }

    /// `l_raw × n_feat` features to `l_m × d_music` states.
    pub fn encode_music(&self, g: &mut Graph, b: &Bound, features: &Tensor) -> Result<Var> {
        if features.rank() != 2 || features.cols() != self.config.n_feat {
            return Err(Error::Shape {
                op: "encode_music",
                lhs: features.shape().to_vec(),
                rhs: vec![self.config.n_feat],
            });
        }
        let min = self.min_frames();
        if features.rows() < min {
            return Err(Error::Length {
                what: "music frames",
                len: features.rows(),
                min,
            });
        }
        let p = &self.layout.music;
        let mut x = g.constant(features.clone());
        for conv in &p.conv {
            let u = g.unfold(x, conv.width, conv.stride)?;
            let y = g.matmul(u, b.var(conv.kernel))?;
            let y = g.add_bias(y, b.var(conv.bias))?;
            x = g.gelu(y);
        }
        x = add_positions(g, b, p.positions, x)?;
        for layer in &p.layers {
            x = encoder_layer(g, b, layer, x, None)?;
        }
        p.final_norm.forward(g, b, x)
    }

    /// Lyric tokens to `l_t × d_text` states.
    pub fn encode_lyrics(&self, g: &mut Graph, b: &Bound, tokens: &[usize]) -> Result<Var> {
        let p = &self.layout.lyrics;
        let mut x = embed(g, b, &p.embedding, tokens)?;
        for layer in &p.layers {
            x = encoder_layer(g, b, layer, x, None)?;
        }
        p.final_norm.forward(g, b, x)
    }

    /// Unit-norm latent codes `(z_music, z_text)`, each `1 × d_latent`.
    pub fn project_latents(&self, g: &mut Graph, b: &Bound, h_music: Var, h_text: Var) -> Result<(Var, Var)> {
        let head = &self.layout.head;
        let mut project = |h: Var, proj: ParamId| -> Result<Var> {
            let pooled = g.mean_pool(h)?;
            let d = g.shape(pooled)[0];
            let row = g.reshape(pooled, vec![1, d])?;
            let z = g.matmul(row, b.var(proj))?;
            g.l2_normalize(z)
        };
        let zm = project(h_music, head.music_proj)?;
        let zt = project(h_text, head.text_proj)?;
        Ok((zm, zt))
    }

    /// `h_text + CrossAttn(q = h_text, kv = h_music)` and the head-averaged
    /// attention weights.
    pub fn fuse(&self, g: &mut Graph, b: &Bound, h_text: Var, h_music: Var) -> Result<(Var, Tensor)> {
        let out = attention(g, b, &self.layout.fusion.attn, h_text, h_music, None)?;
        let fused = g.add(h_text, out.output)?;
        Ok((fused, out.weights))
    }

    /// Next-token logits `l × vocab` for decoder inputs `tokens`.
    pub fn decode_logits(&self, g: &mut Graph, b: &Bound, memory: Var, tokens: &[usize]) -> Result<Var> {
        let p = &self.layout.decoder;
        let mut y = embed(g, b, &p.embedding, tokens)?;
        for layer in &p.layers {
            y = decoder_layer(g, b, layer, y, memory)?;
        }
        let y = p.final_norm.forward(g, b, y)?;
        let logits = g.matmul(y, b.var(p.output))?;
        g.add_bias(logits, b.var(p.output_bias))
    }

    /// Teacher-forced cross-entropy of `target` (BOS ... EOS) given the fused
    /// memory. Inputs are `target[..T-1]`, labels `target[1..]`, PAD ignored.
    pub fn caption_loss(&self, g: &mut Graph, b: &Bound, memory: Var, target: &[usize]) -> Result<Var> {
        if target.len() < 2 || target[0] != BOS {
            return Err(Error::Param(
                "caption target must start with BOS and have a successor".into(),
            ));
        }
        let inputs = &target[..target.len() - 1];
        let labels = &target[1..];
        let logits = self.decode_logits(g, b, memory, inputs)?;
        g.cross_entropy(logits, labels, PAD)
    }

    /// Encoder, latent and fusion outputs for one sample.
    fn encode_pair(&self, g: &mut Graph, b: &Bound, s: &SongInstance) -> Result<PairStates> {
        let h_m = self.encode_music(g, b, &s.music)?;
        let h_t = self.encode_lyrics(g, b, &s.lyrics)?;
        let (z_m, z_t) = self.project_latents(g, b, h_m, h_t)?;
        let (fused, _) = self.fuse(g, b, h_t, h_m)?;
        Ok(PairStates { z_m, z_t, fused })
    }

    /// Caption, contrastive and combined losses for a batch.
    ///
    /// The caption loss is the mean of per-sample means; with `alpha == 0`
    /// the total is the caption loss node itself.
    pub fn batch_losses(
        &self,
        g: &mut Graph,
        b: &Bound,
        batch: &[&SongInstance],
        opts: LossOptions,
    ) -> Result<BatchLosses> {
        if batch.is_empty() {
            return Err(Error::EmptySequence("batch"));
        }
        if opts.alpha < 0.0 || opts.alpha.is_nan() {
            return Err(Error::Param(format!("alpha must be nonnegative, got {}", opts.alpha)));
        }
        let mut zm = Vec::with_capacity(batch.len());
        let mut zt = Vec::with_capacity(batch.len());
        let mut caps = Vec::with_capacity(batch.len());
        for s in batch {
            let st = self.encode_pair(g, b, s)?;
            zm.push(st.z_m);
            zt.push(st.z_t);
            let l = self.caption_loss(g, b, st.fused, &s.caption)?;
            caps.push(g.reshape(l, vec![1])?);
        }
        let z_music = g.concat(&zm, 0)?;
        let z_text = g.concat(&zt, 0)?;
        let caps = g.concat(&caps, 0)?;
        let caption = g.mean(caps);
        let contrastive = contrastive_loss(g, z_music, z_text, opts.tau, opts.symmetric)?;
        let total = if opts.alpha == 0.0 {
            caption
        } else {
            let weighted = g.scale(contrastive, opts.alpha);
            g.add(caption, weighted)?
        };
        Ok(BatchLosses {
            caption,
            contrastive,
            total,
            z_music,
            z_text,
        })
    }

    /// Unit latent codes of one sample as plain vectors.
    pub fn latents(&self, s: &SongInstance) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let h_m = self.encode_music(&mut g, &b, &s.music)?;
        let h_t = self.encode_lyrics(&mut g, &b, &s.lyrics)?;
        let (zm, zt) = self.project_latents(&mut g, &b, h_m, h_t)?;
        Ok((g.data(zm).to_vec(), g.data(zt).to_vec()))
    }

    /// Mean-pooled lyric-encoder output of a token sequence.
    pub fn text_embedding(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let h = self.encode_lyrics(&mut g, &b, tokens)?;
        let pooled = g.mean_pool(h)?;
        Ok(g.data(pooled).to_vec())
    }

    /// Greedy decoding: argmax per step, ties to the lowest id, stopping
    /// after EOS or `max_len` tokens. The leading BOS is not returned.
    pub fn generate(&self, music: &Tensor, lyrics: &[usize], max_len: usize) -> Result<Vec<usize>> {
        if max_len > self.config.max_len {
            return Err(Error::Param(format!(
                "max_len {max_len} exceeds decoder positions {}",
                self.config.max_len
            )));
        }
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let h_m = self.encode_music(&mut g, &b, music)?;
        let h_t = self.encode_lyrics(&mut g, &b, lyrics)?;
        let (memory, _) = self.fuse(&mut g, &b, h_t, h_m)?;
        let checkpoint = g.len();
        let mut tokens = vec![BOS];
        while tokens.len() <= max_len {
            let logits = self.decode_logits(&mut g, &b, memory, &tokens)?;
            let v = self.config.vocab_size;
            let last = &g.data(logits)[(tokens.len() - 1) * v..tokens.len() * v];
            let next = argmax(last);
            tokens.push(next);
            g.truncate(checkpoint);
            if next == EOS {
                break;
            }
        }
        Ok(tokens.split_off(1))
    }

    /// Fusion cross-attention of one sample.
    pub fn export_attention(&self, music: &Tensor, lyrics: &[usize]) -> Result<AttentionMap> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let h_m = self.encode_music(&mut g, &b, music)?;
        let h_t = self.encode_lyrics(&mut g, &b, lyrics)?;
        let (_, weights) = self.fuse(&mut g, &b, h_t, h_m)?;
        let hop: usize = self.config.conv.iter().map(|c| c.stride).product();
        let l_m = weights.cols();
        let segments = (0..l_m).map(|j| (j * hop, ((j + 1) * hop).min(music.rows()))).collect();
        Ok(AttentionMap {
            weights,
            lyric_tokens: lyrics.to_vec(),
            segments,
        })
    }

    /// `(caption, contrastive, total)` for a batch, without gradients.
    pub fn eval_losses(&self, batch: &[&SongInstance], opts: LossOptions) -> Result<(f64, f64, f64)> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let l = self.batch_losses(&mut g, &b, batch, opts)?;
        Ok((g.item(l.caption), g.item(l.contrastive), g.item(l.total)))
    }
}

struct PairStates {
    z_m: Var,
    z_t: Var,
    fused: Var,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// InfoNCE over a batch: for each row `i`, the negative log-probability of
/// pairing `z_music[i]` with `z_text[i]` among all `z_text[k]` (including
/// `k = i`) under logits `z_music[i] · z_text[k] / tau`. Mean over rows.
/// With `symmetric`, averaged with the text-to-music direction.
pub fn contrastive_loss(g: &mut Graph, z_music: Var, z_text: Var, tau: f64, symmetric: bool) -> Result<Var> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(Error::Param(format!("temperature must be positive, got {tau}")));
    }
    if g.shape(z_music) != g.shape(z_text) || g.shape(z_music).len() != 2 {
        return Err(Error::Shape {
            op: "contrastive_loss",
            lhs: g.shape(z_music).to_vec(),
            rhs: g.shape(z_text).to_vec(),
        });
    }
    let n = g.shape(z_music)[0];
    let targets: Vec<usize> = (0..n).collect();
    let zt_t = g.transpose(z_text)?;
    let sims = g.matmul(z_music, zt_t)?;
    let logits = g.scale(sims, 1.0 / tau);
    // `usize::MAX` never matches a target, so nothing is ignored.
    let forward = g.cross_entropy(logits, &targets, usize::MAX)?;
    if !symmetric {
        return Ok(forward);
    }
    let back_logits = g.transpose(logits)?;
    let backward = g.cross_entropy(back_logits, &targets, usize::MAX)?;
    let sum = g.add(forward, backward)?;
    Ok(g.scale(sum, 0.5))
}

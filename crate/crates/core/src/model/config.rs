use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One 1-D convolution over time: `width` input frames per output frame,
/// advancing by `stride`, producing `channels` features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub width: usize,
    pub stride: usize,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Features per raw music frame.
    pub n_feat: usize,
    pub conv: Vec<ConvSpec>,
    pub d_music: usize,
    pub d_text: usize,
    pub d_latent: usize,
    /// Projection width of the fusion cross-attention.
    pub d_attn: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub cross_heads: usize,
    pub music_layers: usize,
    pub text_layers: usize,
    pub decoder_layers: usize,
    pub vocab_size: usize,
    /// Longest token sequence (lyrics or caption).
    pub max_len: usize,
    /// Longest encoded music sequence.
    pub max_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_feat: 16,
            conv: vec![
                ConvSpec {
                    channels: 64,
                    width: 3,
                    stride: 2,
                },
                ConvSpec {
                    channels: 64,
                    width: 3,
                    stride: 2,
                },
            ],
            d_music: 64,
            d_text: 64,
            d_latent: 64,
            d_attn: 64,
            d_ff: 128,
            heads: 4,
            cross_heads: 4,
            music_layers: 2,
            text_layers: 2,
            decoder_layers: 2,
            vocab_size: 200,
            max_len: 64,
            max_frames: 256,
        }
    }
}

impl ModelConfig {
    /// Small dimensions used by gradient checks.
    pub fn tiny(vocab_size: usize, n_feat: usize) -> Self {
        Self {
            n_feat,
            conv: vec![ConvSpec {
                channels: 8,
                width: 2,
                stride: 2,
            }],
            d_music: 8,
            d_text: 8,
            d_latent: 8,
            d_attn: 8,
            d_ff: 16,
            heads: 2,
            cross_heads: 2,
            music_layers: 1,
            text_layers: 1,
            decoder_layers: 1,
            vocab_size,
            max_len: 16,
            max_frames: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Param(format!("model config: {msg}")));
        if self.conv.is_empty() {
            return fail("at least one conv layer is required");
        }
        if self
            .conv
            .iter()
            .any(|c| c.channels == 0 || c.width == 0 || c.stride == 0)
        {
            return fail("conv channels, width and stride must be positive");
        }
        if self.conv.last().map(|c| c.channels) != Some(self.d_music) {
            return fail("last conv layer must output d_music channels");
        }
        let dims = [
            self.n_feat,
            self.d_music,
            self.d_text,
            self.d_latent,
            self.d_attn,
            self.d_ff,
            self.max_len,
            self.max_frames,
        ];
        if dims.contains(&0) {
            return fail("all dimensions must be positive");
        }
        if self.vocab_size < 5 {
            return fail("vocabulary must hold the reserved tokens plus at least one word");
        }
        if self.heads == 0 || !self.d_music.is_multiple_of(self.heads) || !self.d_text.is_multiple_of(self.heads) {
            return fail("heads must divide d_music and d_text");
        }
        if self.cross_heads == 0 || !self.d_attn.is_multiple_of(self.cross_heads) {
            return fail("cross_heads must divide d_attn");
        }
        Ok(())
    }
}

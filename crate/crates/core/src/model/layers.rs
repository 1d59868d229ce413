use rand::Rng;

use super::{ModelConfig, ParamBuilder};
use crate::error::Result;
use crate::numerics::{Float, Graph, ParamId, Tensor, Var};

/// Added to attention scores above the diagonal. Finite so that masked
/// weights underflow to exactly zero instead of producing NaNs.
const MASKED_SCORE: Float = -1e9;

#[derive(Clone, Debug)]
pub struct Linear {
    /// in×out
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn build<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        name: &str,
        inp: usize,
        out: usize,
    ) -> Self {
        b.scoped(name, |b| Self {
            weight: b.weight("weight", &[inp, out]),
            bias: b.bias("bias", out),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub(crate) fn build<R: Rng>(b: &mut ParamBuilder<'_, R>, name: &str, width: usize) -> Self {
        b.scoped(name, |b| Self {
            gain: b.gain("gain", width),
            shift: b.bias("shift", width),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let shift = g.param(self.shift);
        g.layer_norm(x, gain, shift)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl Attention {
    pub(crate) fn build<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        name: &str,
        cfg: &ModelConfig,
    ) -> Self {
        let d = cfg.d_model;
        b.scoped(name, |b| Self {
            query: Linear::build(b, "query", d, d),
            key: Linear::build(b, "key", d, d),
            value: Linear::build(b, "value", d, d),
            output: Linear::build(b, "output", d, d),
            n_heads: cfg.n_heads,
        })
    }

    /// Queries from `x`, keys and values from `context`. With `causal`, query
    /// position t sees only context positions ≤ t.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, context: Var, causal: bool) -> Result<Var> {
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, context)?;
        let v = self.value.forward(g, context)?;
        let (tq, d) = g.shape(q);
        let tk = g.shape(k).0;
        let head = d / self.n_heads;
        let scale = 1.0 / (head as Float).sqrt();

        let mask = causal.then(|| {
            let mut m = vec![0.0; tq * tk];
            for i in 0..tq {
                for j in (i + 1)..tk {
                    m[i * tk + j] = MASKED_SCORE;
                }
            }
            g.constant(Tensor::from_parts(vec![tq, tk], m))
        });

        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * head, (h + 1) * head);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, scale);
            if let Some(mask) = mask {
                scores = g.add(scores, mask)?;
            }
            let weights = g.softmax_rows(scores);
            heads.push(g.matmul(weights, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        self.output.forward(g, merged)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub(crate) fn build<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        name: &str,
        cfg: &ModelConfig,
    ) -> Self {
        b.scoped(name, |b| Self {
            up: Linear::build(b, "up", cfg.d_model, cfg.feedforward_width),
            down: Linear::build(b, "down", cfg.feedforward_width, cfg.d_model),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Pre-norm bidirectional block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attn: Attention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub(crate) fn build<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        name: &str,
        cfg: &ModelConfig,
    ) -> Self {
        b.scoped(name, |b| Self {
            attn_norm: LayerNorm::build(b, "attn_norm", cfg.d_model),
            attn: Attention::build(b, "self_attn", cfg),
            ffn_norm: LayerNorm::build(b, "ffn_norm", cfg.d_model),
            ffn: FeedForward::build(b, "ffn", cfg),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.attn_norm.forward(g, x)?;
        let h = self.attn.forward(g, h, h, false)?;
        let x = g.add(x, h)?;
        let h = self.ffn_norm.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        g.add(x, h)
    }
}

/// Pre-norm block with causal self-attention and cross-attention.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: Attention,
    pub cross_norm: LayerNorm,
    pub cross_attn: Attention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub(crate) fn build<R: Rng>(
        b: &mut ParamBuilder<'_, R>,
        name: &str,
        cfg: &ModelConfig,
    ) -> Self {
        b.scoped(name, |b| Self {
            self_norm: LayerNorm::build(b, "self_norm", cfg.d_model),
            self_attn: Attention::build(b, "self_attn", cfg),
            cross_norm: LayerNorm::build(b, "cross_norm", cfg.d_model),
            cross_attn: Attention::build(b, "cross_attn", cfg),
            ffn_norm: LayerNorm::build(b, "ffn_norm", cfg.d_model),
            ffn: FeedForward::build(b, "ffn", cfg),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, memory: Var) -> Result<Var> {
        let h = self.self_norm.forward(g, x)?;
        let h = self.self_attn.forward(g, h, h, true)?;
        let x = g.add(x, h)?;
        let h = self.cross_norm.forward(g, x)?;
        let h = self.cross_attn.forward(g, h, memory, false)?;
        let x = g.add(x, h)?;
        let h = self.ffn_norm.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        g.add(x, h)
    }
}

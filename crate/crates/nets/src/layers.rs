//! Pre-norm transformer blocks. Positional encodings are added to attention
//! queries and keys at every layer rather than once at the input.

use candle_core::{Module, Tensor, D};
use candle_nn::init::Init;
use candle_nn::{linear, Linear, VarBuilder};

use crate::config::Transformer;

/// Additive mask value for excluded keys. Finite so fully-masked rows stay NaN-free.
pub(crate) const MASKED: f64 = -1e9;

/// Layer norm on the composed (differentiable) path; candle's fused kernel has no backward.
pub(crate) struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub(crate) fn new(d: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Self {
            weight: vb.get_with_hints(d, "weight", Init::Const(1.0))?,
            bias: vb.get_with_hints(d, "bias", Init::Const(0.0))?,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        candle_nn::ops::layer_norm_slow(x, &self.weight, &self.bias, 1e-5)
    }
}

/// Two-layer perceptron with a ReLU in between.
pub(crate) struct Mlp {
    a: Linear,
    b: Linear,
}

impl Mlp {
    pub(crate) fn new(input: usize, hidden: usize, output: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Self {
            a: linear(input, hidden, vb.pp("fc1"))?,
            b: linear(hidden, output, vb.pp("fc2"))?,
        })
    }
}

impl Module for Mlp {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.b.forward(&self.a.forward(x)?.relu()?)
    }
}

struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    fn new(d: usize, heads: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Self {
            q: linear(d, d, vb.pp("q"))?,
            k: linear(d, d, vb.pp("k"))?,
            v: linear(d, d, vb.pp("v"))?,
            o: linear(d, d, vb.pp("o"))?,
            heads,
        })
    }

    /// `q: [B,T,d]`, `k, v: [B,S,d]`, `mask: [B,1,1,S]` additive.
    fn forward(&self, q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Tensor>) -> candle_core::Result<Tensor> {
        let (b, t, d) = q.dims3()?;
        let s = k.dim(1)?;
        let dh = d / self.heads;
        let split = |x: Tensor, n: usize| x.reshape((b, n, self.heads, dh))?.transpose(1, 2)?.contiguous();
        let q = split(self.q.forward(q)?, t)?;
        let k = split(self.k.forward(k)?, s)?;
        let v = split(self.v.forward(v)?, s)?;
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        if let Some(m) = mask {
            scores = scores.broadcast_add(m)?;
        }
        let p = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = p.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        self.o.forward(&out)
    }
}

fn add_pos(x: &Tensor, pos: Option<&Tensor>) -> candle_core::Result<Tensor> {
    match pos {
        Some(p) => x.broadcast_add(p),
        None => Ok(x.clone()),
    }
}

struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff: Mlp,
}

impl EncoderLayer {
    fn forward(&self, x: &Tensor, pos: Option<&Tensor>, mask: Option<&Tensor>) -> candle_core::Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let qk = add_pos(&h, pos)?;
        let x = (x + self.attn.forward(&qk, &qk, &h, mask)?)?;
        &x + self.ff.forward(&self.ln2.forward(&x)?)?
    }
}

struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross: Attention,
    ln3: LayerNorm,
    ff: Mlp,
}

impl DecoderLayer {
    fn forward(&self, x: &Tensor, qpos: &Tensor, mem: &Tensor, mem_keys: &Tensor, mask: Option<&Tensor>) -> candle_core::Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let q = h.broadcast_add(qpos)?;
        let x = (x + self.self_attn.forward(&q, &q, &h, None)?)?;
        let h = self.ln2.forward(&x)?.broadcast_add(qpos)?;
        let x = (&x + self.cross.forward(&h, mem_keys, mem, mask)?)?;
        &x + self.ff.forward(&self.ln3.forward(&x)?)?
    }
}

pub(crate) struct Encoder {
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
}

impl Encoder {
    pub(crate) fn new(t: &Transformer, vb: VarBuilder) -> candle_core::Result<Self> {
        let d = t.d_model;
        let layers = (0..t.encoder_layers)
            .map(|i| {
                let vb = vb.pp(format!("layer{i}"));
                Ok(EncoderLayer {
                    ln1: LayerNorm::new(d, vb.pp("ln1"))?,
                    attn: Attention::new(d, t.heads, vb.pp("attn"))?,
                    ln2: LayerNorm::new(d, vb.pp("ln2"))?,
                    ff: Mlp::new(d, t.ff_dim, d, vb.pp("ff"))?,
                })
            })
            .collect::<candle_core::Result<_>>()?;
        Ok(Self {
            layers,
            norm: LayerNorm::new(d, vb.pp("norm"))?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor, pos: Option<&Tensor>, mask: Option<&Tensor>) -> candle_core::Result<Tensor> {
        let mut x = x.clone();
        for l in &self.layers {
            x = l.forward(&x, pos, mask)?;
        }
        self.norm.forward(&x)
    }
}

pub(crate) struct Decoder {
    layers: Vec<DecoderLayer>,
    norm: LayerNorm,
}

impl Decoder {
    pub(crate) fn new(t: &Transformer, vb: VarBuilder) -> candle_core::Result<Self> {
        let d = t.d_model;
        let layers = (0..t.decoder_layers)
            .map(|i| {
                let vb = vb.pp(format!("layer{i}"));
                Ok(DecoderLayer {
                    ln1: LayerNorm::new(d, vb.pp("ln1"))?,
                    self_attn: Attention::new(d, t.heads, vb.pp("self_attn"))?,
                    ln2: LayerNorm::new(d, vb.pp("ln2"))?,
                    cross: Attention::new(d, t.heads, vb.pp("cross"))?,
                    ln3: LayerNorm::new(d, vb.pp("ln3"))?,
                    ff: Mlp::new(d, t.ff_dim, d, vb.pp("ff"))?,
                })
            })
            .collect::<candle_core::Result<_>>()?;
        Ok(Self {
            layers,
            norm: LayerNorm::new(d, vb.pp("norm"))?,
        })
    }

    /// `queries, qpos: [1,N,d]` (broadcast over the batch), `mem: [B,S,d]`.
    pub(crate) fn forward(
        &self,
        queries: &Tensor,
        qpos: &Tensor,
        mem: &Tensor,
        mem_pos: Option<&Tensor>,
        mask: Option<&Tensor>,
    ) -> candle_core::Result<Tensor> {
        let b = mem.dim(0)?;
        let (_, n, d) = queries.dims3()?;
        let mut x = queries.broadcast_as((b, n, d))?.contiguous()?;
        let mem_keys = add_pos(mem, mem_pos)?;
        for l in &self.layers {
            x = l.forward(&x, qpos, mem, &mem_keys, mask)?;
        }
        self.norm.forward(&x)
    }
}

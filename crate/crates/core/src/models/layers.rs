//! Building blocks: linear maps, layer norm, attention, feed-forward,
//! Transformer encoder/decoder layers and the Conformer block.

use crate::error::Result;
use crate::tensor::{Graph, Init, ParamId, ParamStore, RngStream, Var};

/// Training flag plus the stream that drives dropout and layerdrop.
#[derive(Clone, Debug)]
pub struct Mode {
    train: bool,
    rng: RngStream,
}

impl Mode {
    pub fn eval() -> Self {
        Mode { train: false, rng: RngStream::new(0) }
    }

    pub fn train(rng: RngStream) -> Self {
        Mode { train: true, rng }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// The dropout stream in training mode, `None` otherwise.
    pub fn rng(&mut self) -> Option<&mut RngStream> {
        self.train.then_some(&mut self.rng)
    }

    /// Per-layer skip decision; never skips in eval mode.
    pub fn skip_layer(&mut self, layerdrop: f64) -> bool {
        self.train && layerdrop > 0.0 && self.rng.bernoulli(layerdrop)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    /// Declares `{base}.{role}_weight` [din, dout] and `{base}.{role}_bias`.
    pub fn declare(store: &mut ParamStore, base: &str, role: &str, din: usize, dout: usize, bias: bool) -> Result<Self> {
        let w = store.declare(format!("{base}.{role}_weight"), &[din, dout], Init::WEIGHT)?;
        let b = if bias { Some(store.declare(format!("{base}.{role}_bias"), &[dout], Init::Zeros)?) } else { None };
        Ok(Linear { w, b })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    /// Declares `{name}.gain` and `{name}.bias`; `name`'s last segment must start with `ln`.
    pub fn declare(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.declare(format!("{name}.gain"), &[d], Init::Ones)?,
            bias: store.declare(format!("{name}.bias"), &[d], Init::Zeros)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    /// `base` is e.g. `encoder.3.self_attn`. Keys and values come from inputs of width `dkv`.
    pub fn declare(store: &mut ParamStore, base: &str, d: usize, dkv: usize, heads: usize) -> Result<Self> {
        Ok(MultiHeadAttention {
            q: Linear::declare(store, base, "q", d, d, true)?,
            k: Linear::declare(store, base, "k", dkv, d, true)?,
            v: Linear::declare(store, base, "v", dkv, d, true)?,
            out: Linear::declare(store, base, "out", d, d, true)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, xq: Var, xkv: Var, causal: bool) -> Result<Var> {
        let q = self.q.forward(g, store, xq)?;
        let k = self.k.forward(g, store, xkv)?;
        let v = self.v.forward(g, store, xkv)?;
        let a = g.attention(q, k, v, self.heads, causal)?;
        self.out.forward(g, store, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Silu,
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
    pub act: Activation,
}

impl FeedForward {
    pub fn declare(store: &mut ParamStore, base: &str, d: usize, ffn: usize, act: Activation) -> Result<Self> {
        Ok(FeedForward {
            fc1: Linear::declare(store, base, "fc1", d, ffn, true)?,
            fc2: Linear::declare(store, base, "fc2", ffn, d, true)?,
            act,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, dropout: f64, mode: &mut Mode) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = match self.act {
            Activation::Gelu => g.gelu(h),
            Activation::Silu => g.silu(h),
        };
        let h = g.dropout(h, dropout, mode.rng())?;
        self.fc2.forward(g, store, h)
    }
}

fn residual(g: &mut Graph, x: Var, y: Var, dropout: f64, mode: &mut Mode) -> Result<Var> {
    let y = g.dropout(y, dropout, mode.rng())?;
    g.add(x, y)
}

/// Pre-norm self-attention + feed-forward layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn declare(store: &mut ParamStore, base: &str, d: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(EncoderLayer {
            ln_self: LayerNorm::declare(store, &format!("{base}.ln_self"), d)?,
            self_attn: MultiHeadAttention::declare(store, &format!("{base}.self_attn"), d, d, heads)?,
            ln_ffn: LayerNorm::declare(store, &format!("{base}.ln_ffn"), d)?,
            ffn: FeedForward::declare(store, &format!("{base}.ffn"), d, ffn, Activation::Gelu)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, dropout: f64, mode: &mut Mode) -> Result<Var> {
        let h = self.ln_self.forward(g, store, x)?;
        let a = self.self_attn.forward(g, store, h, h, false)?;
        let x = residual(g, x, a, dropout, mode)?;
        let h = self.ln_ffn.forward(g, store, x)?;
        let f = self.ffn.forward(g, store, h, dropout, mode)?;
        residual(g, x, f, dropout, mode)
    }
}

/// Pre-norm causal self-attention, cross-attention and feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_cross: LayerNorm,
    pub encoder_attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub fn declare(store: &mut ParamStore, base: &str, d: usize, d_mem: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(DecoderLayer {
            ln_self: LayerNorm::declare(store, &format!("{base}.ln_self"), d)?,
            self_attn: MultiHeadAttention::declare(store, &format!("{base}.self_attn"), d, d, heads)?,
            ln_cross: LayerNorm::declare(store, &format!("{base}.ln_cross"), d)?,
            encoder_attn: MultiHeadAttention::declare(store, &format!("{base}.encoder_attn"), d, d_mem, heads)?,
            ln_ffn: LayerNorm::declare(store, &format!("{base}.ln_ffn"), d)?,
            ffn: FeedForward::declare(store, &format!("{base}.ffn"), d, ffn, Activation::Gelu)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        memory: Var,
        dropout: f64,
        mode: &mut Mode,
    ) -> Result<Var> {
        let h = self.ln_self.forward(g, store, x)?;
        let a = self.self_attn.forward(g, store, h, h, true)?;
        let x = residual(g, x, a, dropout, mode)?;
        let h = self.ln_cross.forward(g, store, x)?;
        let c = self.encoder_attn.forward(g, store, h, memory, false)?;
        let x = residual(g, x, c, dropout, mode)?;
        let h = self.ln_ffn.forward(g, store, x)?;
        let f = self.ffn.forward(g, store, h, dropout, mode)?;
        residual(g, x, f, dropout, mode)
    }
}

/// Half-step FFN, self-attention, convolution module, half-step FFN, final norm.
#[derive(Clone, Debug)]
pub struct ConformerBlock {
    pub ln_ffn1: LayerNorm,
    pub ffn1: FeedForward,
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_conv: LayerNorm,
    pub pw1: Linear,
    pub dw_weight: ParamId,
    pub dw_bias: ParamId,
    /// Stands in for batch norm inside the convolution module.
    pub ln_conv_inner: LayerNorm,
    pub pw2: Linear,
    pub ln_ffn2: LayerNorm,
    pub ffn2: FeedForward,
    pub ln_final: LayerNorm,
    pub kernel: usize,
}

impl ConformerBlock {
    pub fn declare(store: &mut ParamStore, base: &str, d: usize, heads: usize, ffn: usize, kernel: usize) -> Result<Self> {
        let conv = format!("{base}.conv");
        Ok(ConformerBlock {
            ln_ffn1: LayerNorm::declare(store, &format!("{base}.ln_ffn1"), d)?,
            ffn1: FeedForward::declare(store, &format!("{base}.ffn1"), d, ffn, Activation::Silu)?,
            ln_self: LayerNorm::declare(store, &format!("{base}.ln_self"), d)?,
            self_attn: MultiHeadAttention::declare(store, &format!("{base}.self_attn"), d, d, heads)?,
            ln_conv: LayerNorm::declare(store, &format!("{base}.ln_conv"), d)?,
            pw1: Linear::declare(store, &conv, "pw1", d, 2 * d, true)?,
            dw_weight: store.declare(format!("{conv}.dw_weight"), &[d, 1, kernel], Init::WEIGHT)?,
            dw_bias: store.declare(format!("{conv}.dw_bias"), &[d], Init::Zeros)?,
            ln_conv_inner: LayerNorm::declare(store, &format!("{base}.ln_conv_inner"), d)?,
            pw2: Linear::declare(store, &conv, "pw2", d, d, true)?,
            ln_ffn2: LayerNorm::declare(store, &format!("{base}.ln_ffn2"), d)?,
            ffn2: FeedForward::declare(store, &format!("{base}.ffn2"), d, ffn, Activation::Silu)?,
            ln_final: LayerNorm::declare(store, &format!("{base}.ln_final"), d)?,
            kernel,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, dropout: f64, mode: &mut Mode) -> Result<Var> {
        let (_, d) = g.dims2(x)?;
        let h = self.ln_ffn1.forward(g, store, x)?;
        let f = self.ffn1.forward(g, store, h, dropout, mode)?;
        let f = g.scale(f, 0.5);
        let x = residual(g, x, f, dropout, mode)?;

        let h = self.ln_self.forward(g, store, x)?;
        let a = self.self_attn.forward(g, store, h, h, false)?;
        let x = residual(g, x, a, dropout, mode)?;

        let h = self.ln_conv.forward(g, store, x)?;
        let h = self.pw1.forward(g, store, h)?;
        let h = g.glu(h)?;
        let w = g.param(store, self.dw_weight);
        let b = g.param(store, self.dw_bias);
        let h = g.conv1d(h, w, Some(b), 1, (self.kernel - 1) / 2, d)?;
        let h = self.ln_conv_inner.forward(g, store, h)?;
        let h = g.silu(h);
        let h = self.pw2.forward(g, store, h)?;
        let x = residual(g, x, h, dropout, mode)?;

        let h = self.ln_ffn2.forward(g, store, x)?;
        let f = self.ffn2.forward(g, store, h, dropout, mode)?;
        let f = g.scale(f, 0.5);
        let x = residual(g, x, f, dropout, mode)?;
        self.ln_final.forward(g, store, x)
    }
}

/// Fixed sinusoidal position table, [t, d].
pub fn sinusoidal_positions(t: usize, d: usize) -> Vec<f64> {
    let half = d / 2;
    let mut out = vec![0.0; t * d];
    for p in 0..t {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            out[p * d + i] = (p as f64 * freq).sin();
            out[p * d + half + i] = (p as f64 * freq).cos();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_params, Tensor};

    fn store_with<F: FnOnce(&mut ParamStore) -> T, T>(f: F, seed: u64) -> (ParamStore, T) {
        let mut s = ParamStore::new();
        let m = f(&mut s);
        s.materialize(&RngStream::new(seed));
        (s, m)
    }

    fn input(t: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed);
        Tensor::new(vec![t, d], (0..t * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn conformer_zero_weights_is_layer_norm() {
        let (mut s, blk) = store_with(|s| ConformerBlock::declare(s, "encoder.0", 8, 2, 16, 3).unwrap(), 1);
        let names: Vec<String> = s.names().map(String::from).collect();
        for n in names {
            if !n.ends_with(".gain") {
                let shape = s.get(&n).unwrap().shape().to_vec();
                s.assign(&n, &Tensor::zeros(&shape)).unwrap();
            }
        }
        let x = input(5, 8, 2);
        let mut g = Graph::no_grad();
        let xv = g.input(&x);
        let y = blk.forward(&mut g, &s, xv, 0.0, &mut Mode::eval()).unwrap();
        assert_eq!(g.shape(y), &[5, 8]);
        for i in 0..5 {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            for j in 0..8 {
                let want = (row[j] - mean) / (var + LN_EPS).sqrt();
                assert!((g.value(y)[i * 8 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conformer_grad_check() {
        for seed in 0..3 {
            let (mut s, blk) = store_with(|s| ConformerBlock::declare(s, "encoder.0", 4, 2, 8, 3).unwrap(), seed);
            crate::models::randomize(&mut s, seed);
            let x = input(4, 4, seed + 10);
            // a fixed random projection; sum(y^2) would be flat under the final norm
            let w: Vec<f64> = input(4, 4, seed + 20).data().to_vec();
            let r = grad_check_params(
                |g, st| {
                    let xv = g.input(&x);
                    let y = blk.forward(g, st, xv, 0.0, &mut Mode::eval())?;
                    let p = g.mul_const(y, w.clone())?;
                    Ok(g.sum(p))
                },
                &s,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn decoder_layer_is_causal() {
        let (s, layer) = store_with(|s| DecoderLayer::declare(s, "decoder.0", 8, 8, 2, 16).unwrap(), 3);
        let mem = input(3, 8, 4);
        let run = |x: &Tensor| {
            let mut g = Graph::no_grad();
            let xv = g.input(x);
            let m = g.input(&mem);
            let y = layer.forward(&mut g, &s, xv, m, 0.0, &mut Mode::eval()).unwrap();
            g.value(y).to_vec()
        };
        let x = input(5, 8, 5);
        let mut x2 = x.clone();
        for j in 0..8 {
            x2.data_mut()[3 * 8 + j] += 1.0;
        }
        let (a, b) = (run(&x), run(&x2));
        assert_eq!(a[..3 * 8], b[..3 * 8]);
        assert_ne!(a[3 * 8..], b[3 * 8..]);
    }
}

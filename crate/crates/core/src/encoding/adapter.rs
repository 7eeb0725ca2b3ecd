//! Text-conditioned weight adapter.
//!
//! Scores how well a visual token set `V` aligns with text tokens `T`:
//!
//! ```text
//! Q = T W_Q,  K = V W_K,  Vv = V W_V
//! H = softmax(Q K^T / sqrt(d)) Vv
//! Ṽ = LayerNorm(V + H)
//! g = mean over rows of Ṽ
//! h1 = GELU(g W_1 + b_1),  h2 = GELU(h1 W_2 + b_2)
//! score = h2 w + b
//! ```

use rand::Rng;

use super::attention::{cross_attention, AttentionParams};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct WeightAdapter {
    pub attn: AttentionParams,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
    width: usize,
}

impl WeightAdapter {
    /// `width` is the token width `d`; `hidden` the MLP width.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = width;
        Ok(Self {
            attn: AttentionParams {
                query: Some(store.add_xavier(format!("{prefix}.wq"), d, d, rng)?),
                key: store.add_xavier(format!("{prefix}.wk"), d, d, rng)?,
                value: store.add_xavier(format!("{prefix}.wv"), d, d, rng)?,
            },
            ln_gain: store.add(format!("{prefix}.ln_gain"), Matrix::filled(1, d, 1.0))?,
            ln_bias: store.add(format!("{prefix}.ln_bias"), Matrix::zeros(1, d))?,
            w1: store.add_xavier(format!("{prefix}.w1"), d, hidden, rng)?,
            b1: store.add(format!("{prefix}.b1"), Matrix::zeros(1, hidden))?,
            w2: store.add_xavier(format!("{prefix}.w2"), hidden, hidden, rng)?,
            b2: store.add(format!("{prefix}.b2"), Matrix::zeros(1, hidden))?,
            head_w: store.add_xavier(format!("{prefix}.head_w"), hidden, 1, rng)?,
            head_b: store.add(format!("{prefix}.head_b"), Matrix::zeros(1, 1))?,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Scalar confidence (1x1) for visual tokens `v` given text tokens `t`.
    pub fn score(&self, tape: &mut Tape, store: &ParamStore, v: Var, t: Var) -> Result<Var> {
        let (vs, ts) = (tape.value(v).shape(), tape.value(t).shape());
        if vs.1 != self.width || ts.1 != self.width {
            return Err(Error::shape("adapter_score(visual, text)", vs, ts));
        }
        let h = cross_attention(tape, store, t, v, &self.attn)?;
        let resid = tape.add(v, h)?;
        let gain = tape.param(store, self.ln_gain);
        let bias = tape.param(store, self.ln_bias);
        let normed = tape.layer_norm(resid, gain, bias)?;
        let pooled = tape.mean_pool_rows(normed);

        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let z1 = tape.matmul(pooled, w1)?;
        let z1 = tape.add(z1, b1)?;
        let h1 = tape.gelu(z1);

        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let z2 = tape.matmul(h1, w2)?;
        let z2 = tape.add(z2, b2)?;
        let h2 = tape.gelu(z2);

        let hw = tape.param(store, self.head_w);
        let hb = tape.param(store, self.head_b);
        let out = tape.matmul(h2, hw)?;
        tape.add(out, hb)
    }
}

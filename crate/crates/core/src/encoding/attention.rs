use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Var};

/// Single-head projections for one cross-attention step.
///
/// `query` is optional: chained steps feed the previous output in as the
/// query unchanged.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub query: Option<ParamId>,
    pub key: ParamId,
    pub value: ParamId,
}

/// `softmax(Q K^T / sqrt(D_k)) V` with `Q = q_src W_Q` (or `q_src` itself),
/// `K = kv_src W_K`, `V = kv_src W_V`.
///
/// Output rows follow `q_src`, output width follows `W_V`.
pub fn cross_attention(
    tape: &mut Tape,
    store: &ParamStore,
    q_src: Var,
    kv_src: Var,
    params: &AttentionParams,
) -> Result<Var> {
    let q = match params.query {
        Some(wq) => {
            let w = tape.param(store, wq);
            tape.matmul(q_src, w)?
        }
        None => q_src,
    };
    let wk = tape.param(store, params.key);
    let wv = tape.param(store, params.value);
    let k = tape.matmul(kv_src, wk)?;
    let v = tape.matmul(kv_src, wv)?;
    let (qs, ks) = (tape.value(q).shape(), tape.value(k).shape());
    if qs.1 != ks.1 {
        return Err(Error::shape("cross_attention(query, key)", qs, ks));
    }
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (ks.1 as f64).sqrt());
    let attn = tape.row_softmax(scaled);
    tape.matmul(attn, v)
}

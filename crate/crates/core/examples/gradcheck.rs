//! Finite-difference audit of the full encoder and of a few tape primitives.

use anyhow::Result;
use facetune::encoding::{encoder_grad_check, EncoderConfig};
use facetune::numerics::{grad_check, Matrix, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let cfg = EncoderConfig {
        width: 6,
        layer_widths: vec![4, 6, 5],
        num_queries: 3,
        adapter_hidden: 5,
        shared_kv: false,
    };
    for seed in 0..5 {
        let report = encoder_grad_check(&cfg, seed, 1e-4)?;
        println!("encoder seed {seed}:\n{report}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let x = store.add("x", Matrix::uniform(3, 5, 1.0, &mut rng))?;
    let g = store.add("gain", Matrix::uniform(1, 5, 1.0, &mut rng))?;
    let b = store.add("bias", Matrix::uniform(1, 5, 1.0, &mut rng))?;
    let report = grad_check(&mut store, &[x, g, b], 1e-6, |t, s| {
        let (x, g, b) = (t.param(s, x), t.param(s, g), t.param(s, b));
        let n = t.layer_norm(x, g, b)?;
        let h = t.gelu(n);
        let p = t.row_softmax(h);
        let m = t.mean_pool_rows(p);
        Ok(t.sum_squares(m))
    })?;
    println!("softmax(gelu(layer_norm(x))) pooled:\n{report}");
    Ok(())
}

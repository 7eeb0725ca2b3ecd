//! Forward pass through the encoding stack: progressive cross-attention over
//! the facial block stack, query aggregation for both streams, adapter
//! scores and the softmax fusion.

use anyhow::Result;
use facetune::encoding::{fuse, fused_visual, EncoderConfig, HierarchicalEncoder};
use facetune::numerics::{Matrix, ParamStore, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig::default();
    let enc = HierarchicalEncoder::new(&mut store, &cfg, &mut rng)?;
    println!("parameter groups: {:?}", store.groups());
    for (_, t) in store.iter() {
        println!("  {:<36} {:?}", t.name(), t.value.shape());
    }

    let input = enc.random_input(5, 12, 4, &mut rng)?;
    let mut tape = Tape::new();
    let out = enc.forward(&mut tape, &store, &input)?;
    println!(
        "scores: general {:.4}, facial {:.4}",
        tape.scalar(out.score_general),
        tape.scalar(out.score_facial)
    );
    println!(
        "fusion weights: general {:.4}, facial {:.4}",
        tape.scalar(out.weight_general),
        tape.scalar(out.weight_facial)
    );
    println!("fused tokens: {:?}", tape.value(out.fused).shape());

    // The fusion rule on its own.
    for (sg, sf) in [(0.0, 0.0), (1.0, 0.0), (0.0, 3.0), (40.0, -40.0)] {
        let w = fuse(sg, sf);
        println!("fuse({sg}, {sf}) = ({:.6}, {:.6})", w.general, w.facial);
    }
    let a = Matrix::filled(2, 3, 1.0);
    let b = Matrix::filled(2, 3, 3.0);
    let mixed = fused_visual(&a, &b, fuse(0.0, 0.0))?;
    println!("equal weights mix 1 and 3 into {:?}", mixed.row(0));
    Ok(())
}

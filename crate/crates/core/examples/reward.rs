//! Fine-grained structured reward over the attribute, emotion and action
//! channels, and the learnable channel weights.

use anyhow::Result;
use facetune::reward::{
    channel_sims, fine_grained_reward, parse_annotations, update_channel_weights,
    write_annotations, Channel, ChannelWeights, StructuredResponse, Vocabulary,
};

fn main() -> Result<()> {
    let vocab = Vocabulary::full();
    for c in Channel::ALL {
        println!("{c}: {} tokens", vocab.len(c));
    }

    let truth = StructuredResponse::from_tokens(
        &vocab,
        &["male", "no_beard", "eyeglasses"],
        &["happy"],
        &["smile", "nod"],
    )?;
    let guess =
        StructuredResponse::from_tokens(&vocab, &["male", "no_beard"], &["happy"], &["talk"])?;
    let sims = channel_sims(&guess, &truth);
    println!("per-channel similarity: {sims:?}");

    let mut alpha = ChannelWeights::uniform();
    println!(
        "uniform reward: {:.4}",
        fine_grained_reward(&guess, &truth, &alpha)
    );
    // Descending on -sims raises the weight of well-matched channels.
    for _ in 0..5 {
        let grad = alpha.logit_grad(sims.map(|s| -s));
        alpha = update_channel_weights(&alpha, grad, 1.0);
    }
    println!(
        "after 5 steps: weights {:?}, reward {:.4}",
        alpha.weights(),
        fine_grained_reward(&guess, &truth, &alpha)
    );

    let text = write_annotations([("clip1", &truth), ("clip2", &guess)], &vocab);
    print!("{text}");
    let back = parse_annotations(&text, &vocab)?;
    assert_eq!(back["clip1"], truth);
    println!("round-tripped {} records", back.len());
    Ok(())
}

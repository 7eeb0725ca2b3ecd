//! The factorised toy policy: sampling, exact log-probabilities and their
//! gradients, and the closed-form KL to a reference.

use anyhow::Result;
use facetune::policy::ToyPolicy;
use facetune::reward::Vocabulary;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let vocab = Vocabulary::trimmed(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sizes = [3, 3, 3];
    let policy = ToyPolicy::random(sizes, 4, true, 1.0, &mut rng);
    let reference = ToyPolicy::for_vocab(&vocab, 4, true);
    let x = [0.5, -1.0, 0.25, 2.0];

    let support = policy.support()?;
    let total: f64 = support
        .iter()
        .map(|y| policy.prob(&x, y))
        .sum::<Result<f64, _>>()?;
    println!("{} responses, total probability {total:.12}", support.len());

    for y in policy.sample_candidates(&x, 4, &mut rng)? {
        let lp = policy.log_prob(&x, &y)?;
        let g = policy.log_prob_grad(&x, &y)?;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "attr {:?} emo {:?} act {:?}  log p = {lp:.4}  |grad| = {norm:.4}",
            y.token_names(&vocab, facetune::reward::Channel::Attribute),
            y.token_names(&vocab, facetune::reward::Channel::Emotion),
            y.token_names(&vocab, facetune::reward::Channel::Action),
        );
    }
    println!(
        "KL(policy || uniform reference) = {:.6}",
        policy.kl_divergence(&reference, &x)?
    );
    Ok(())
}

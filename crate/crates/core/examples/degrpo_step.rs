//! A few optimizer steps on a tiny hand-built sample set, printing each
//! sample's utility, recurrent state and lifecycle after every step.

use anyhow::Result;
use facetune::degrpo::{degrpo_step, DeGrpoConfig, Learner, Mode, OpTrace, SampleRecord};
use facetune::policy::ToyPolicy;
use facetune::reward::{ChannelWeights, StructuredResponse, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let vocab = Vocabulary::trimmed(3);
    let cfg = DeGrpoConfig {
        lr_policy: 1.0,
        batch_size: 4,
        ..DeGrpoConfig::default()
    };
    let mut records = vec![
        SampleRecord::new(
            "a",
            vec![1.0, 0.0],
            StructuredResponse::from_tokens(&vocab, &["male"], &["happy"], &[] as &[&str])?,
            cfg.s0,
        ),
        SampleRecord::new(
            "b",
            vec![0.0, 1.0],
            StructuredResponse::from_tokens(&vocab, &[] as &[&str], &[] as &[&str], &["blow"])?,
            cfg.s0,
        ),
        SampleRecord::new("c", vec![1.0, 1.0], StructuredResponse::empty(), cfg.s0),
        SampleRecord::new(
            "d",
            vec![0.1, -0.1],
            StructuredResponse::from_tokens(&vocab, &["male"], &[] as &[&str], &["blow"])?,
            cfg.s0,
        ),
    ];
    let policy = ToyPolicy::for_vocab(&vocab, 2, true);
    let mut learner = Learner::new(policy, ChannelWeights::uniform());
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    for iteration in 0..8 {
        let batch: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].is_active())
            .collect();
        if batch.is_empty() {
            println!("every sample removed");
            break;
        }
        let mut trace = OpTrace::default();
        let step = degrpo_step(
            &mut records,
            &batch,
            &mut learner,
            &cfg,
            Mode::DeGrpo,
            iteration,
            &mut rng,
            &mut trace,
        )?;
        println!(
            "iter {iteration}: loss {:+.5}  mean reward {:.3}  threshold {:?}",
            step.batch_loss, step.mean_reward, step.threshold
        );
        for s in &step.samples {
            println!(
                "  {}  U {:>8.4}  s {:.4}  {}{}",
                s.id,
                s.utility.unwrap_or(f64::NAN),
                s.s.unwrap_or(f64::NAN),
                s.mode,
                if s.degenerate { "  (degenerate)" } else { "" }
            );
        }
    }
    Ok(())
}

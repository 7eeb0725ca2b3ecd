//! Three-stage pretraining of the encoder on a planted regression target,
//! with per-stage freezing of parameter groups.

use anyhow::Result;
use facetune::encoding::{EncoderConfig, HierarchicalEncoder};
use facetune::harness::{pretrain, RegressionTask, StageSchedule};
use facetune::numerics::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let enc = HierarchicalEncoder::new(&mut store, &EncoderConfig::default(), &mut rng)?;
    let task = RegressionTask::planted(&enc, 6, &mut rng)?;
    let schedule = StageSchedule::default();
    let logs = pretrain(&enc, &mut store, &schedule, &task)?;
    for (log, stage) in logs.iter().zip(&schedule.stages) {
        let first = log.losses.first().copied().unwrap_or(f64::NAN);
        let last = log.losses.last().copied().unwrap_or(f64::NAN);
        let mut groups: Vec<&str> = log
            .updated
            .iter()
            .map(|n| n.split('.').next().unwrap_or(n))
            .collect();
        groups.dedup();
        println!(
            "{:<10} trainable {:?}  frozen {:?}\n           loss {first:.5} -> {last:.5}  updated groups {groups:?}",
            stage.name, stage.trainable, stage.frozen
        );
    }
    Ok(())
}

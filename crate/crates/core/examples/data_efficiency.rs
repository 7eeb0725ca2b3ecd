//! Paired-seed comparison of utility-scheduled and vanilla training on the
//! 30%-informative synthetic dataset.
//!
//! ```text
//! cargo run --release --example data_efficiency -- [seeds] [config.toml]
//! ```

use std::collections::BTreeSet;
use std::time::Instant;

use anyhow::Result;
use facetune::degrpo::{Lifecycle, Mode};
use facetune::harness::{generate_dataset, run_training, RunConfig, RunReport};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn dips(curve: &[f64]) -> Vec<f64> {
    curve
        .windows(2)
        .map(|w| w[0] - w[1])
        .filter(|&d| d > 0.0)
        .collect()
}

fn visits(r: &RunReport) -> f64 {
    r.visits_to_target.map_or(f64::INFINITY, |v| v as f64)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);
    let base = match args.next() {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::default(),
    };
    let start = Instant::now();
    let (mut de, mut va) = (Vec::new(), Vec::new());
    let mut curves: Vec<Vec<f64>> = Vec::new();
    for seed in 0..seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.dataset.seed = seed;
        let d = run_training(&cfg, Mode::DeGrpo)?;
        let v = run_training(&cfg, Mode::Vanilla)?;
        println!(
            "seed {seed}: de-grpo visits {:>8} (final eval {:.3}, exhausted {})  vanilla visits {:>8} (final eval {:.3})",
            format!("{:?}", d.visits_to_target),
            d.final_eval_reward,
            d.exhausted,
            format!("{:?}", v.visits_to_target),
            v.final_eval_reward,
        );
        let data = generate_dataset(&cfg.dataset)?;
        let removed: BTreeSet<&str> = d
            .rows
            .iter()
            .filter(|r| r.mode == Lifecycle::Removed)
            .map(|r| r.sample_id.as_str())
            .collect();
        let informative = data
            .samples
            .iter()
            .filter(|s| s.informative && removed.contains(s.id.as_str()))
            .count();
        println!(
            "  removed {} samples ({informative} informative), {} round-mean dips",
            removed.len(),
            dips(&d.round_mean_rewards).len()
        );
        curves.push(d.round_mean_rewards.clone());
        de.push(visits(&d));
        va.push(visits(&v));
    }
    let (md, mv) = (median(de), median(va));
    println!(
        "median visits-to-target: de-grpo {md}, vanilla {mv}, ratio {:.3}",
        md / mv
    );
    let rounds = curves.iter().map(Vec::len).min().unwrap_or(0);
    let avg: Vec<f64> = (0..rounds)
        .map(|r| curves.iter().map(|c| c[r]).sum::<f64>() / curves.len() as f64)
        .collect();
    let avg_dips = dips(&avg);
    println!(
        "seed-averaged round means: {}",
        avg.iter()
            .map(|r| format!("{r:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    println!(
        "{} dips, worst {:.4}",
        avg_dips.len(),
        avg_dips.iter().copied().fold(0.0, f64::max)
    );
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

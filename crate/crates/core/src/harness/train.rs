use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::{generate_dataset, generate_eval_set, stream, Sample};
use super::stages::{pretrain, RegressionTask, StageLog};
use crate::degrpo::{degrpo_step, Learner, Lifecycle, Mode, OpTrace, SampleRecord};
use crate::encoding::HierarchicalEncoder;
use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::policy::ToyPolicy;
use crate::reward::{fine_grained_reward, ChannelWeights};

pub const METRICS_HEADER: &str = "iteration,sample_id,U,s,delta_mode,batch_loss,mean_reward";
pub const PLOT_HEADER: &str = "recurrence_round,iteration,mean_reward";

// rng streams derived from the run seed
const STREAM_TRAIN: u64 = 10;
const STREAM_EVAL: u64 = 11;
const STREAM_PRETRAIN: u64 = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub sample_id: String,
    pub utility: Option<f64>,
    pub s: Option<f64>,
    pub mode: Lifecycle,
    pub batch_loss: f64,
    pub mean_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub round: usize,
    /// Active samples before the step.
    pub active: usize,
    /// Cumulative sample visits after the step.
    pub visits: usize,
    pub batch_loss: f64,
    pub mean_reward: f64,
    pub eval_reward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub iterations: Vec<IterationLog>,
    pub rows: Vec<MetricRow>,
    pub target_reward: f64,
    pub visits_to_target: Option<usize>,
    pub iterations_to_target: Option<usize>,
    pub round_mean_rewards: Vec<f64>,
    pub exhausted: bool,
    pub initial_eval_reward: f64,
    pub final_eval_reward: f64,
    pub pretrain: Vec<StageLog>,
    pub final_alpha: [f64; 3],
}

/// Compact JSON summary of a [`RunReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub iterations: usize,
    pub total_visits: usize,
    pub target_reward: f64,
    pub visits_to_target: Option<usize>,
    pub iterations_to_target: Option<usize>,
    pub exhausted: bool,
    pub initial_eval_reward: f64,
    pub final_eval_reward: f64,
    pub round_mean_rewards: Vec<f64>,
    /// Active-set size before each iteration.
    pub active_trajectory: Vec<usize>,
    pub final_alpha: [f64; 3],
    pub pretrain_final_losses: Vec<(String, f64)>,
}

impl RunReport {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            mode: self.mode,
            seed: self.seed,
            iterations: self.iterations.len(),
            total_visits: self.iterations.last().map_or(0, |l| l.visits),
            target_reward: self.target_reward,
            visits_to_target: self.visits_to_target,
            iterations_to_target: self.iterations_to_target,
            exhausted: self.exhausted,
            initial_eval_reward: self.initial_eval_reward,
            final_eval_reward: self.final_eval_reward,
            round_mean_rewards: self.round_mean_rewards.clone(),
            active_trajectory: self.iterations.iter().map(|l| l.active).collect(),
            final_alpha: self.final_alpha,
            pretrain_final_losses: self
                .pretrain
                .iter()
                .map(|s| {
                    (
                        s.stage.clone(),
                        s.losses.last().copied().unwrap_or(f64::NAN),
                    )
                })
                .collect(),
        }
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration,
                r.sample_id,
                opt(r.utility),
                opt(r.s),
                r.mode,
                r.batch_loss,
                r.mean_reward
            );
        }
        out
    }

    /// Writes metrics, summary and plot data under `dir`.
    pub fn write(&self, dir: &Path, cfg: &RunConfig) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(&cfg.output.metrics), self.metrics_csv())?;
        let json = serde_json::to_string_pretty(&self.summary())
            .map_err(|e| Error::Contract(format!("summary serialization: {e}")))?;
        std::fs::write(dir.join(&cfg.output.summary), json)?;
        std::fs::write(dir.join(&cfg.output.plot), emit_plot_data(self))?;
        Ok(())
    }
}

/// Tidy `recurrence_round,iteration,mean_reward` rows copied from the report.
pub fn emit_plot_data(report: &RunReport) -> String {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for l in &report.iterations {
        let _ = writeln!(out, "{},{},{}", l.round, l.iteration, l.mean_reward);
    }
    out
}

/// Mean reward of `eval_candidates` sampled responses per sample, with a fixed stream.
pub fn evaluate(
    policy: &ToyPolicy,
    eval: &[Sample],
    alpha: &ChannelWeights,
    candidates: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = stream(seed, STREAM_EVAL);
    let mut total = 0.0;
    for s in eval {
        for y in policy.sample_candidates(&s.x, candidates, &mut rng)? {
            total += fine_grained_reward(&y, &s.truth, alpha);
        }
    }
    Ok(total / (eval.len() * candidates) as f64)
}

fn run_pretraining(cfg: &RunConfig) -> Result<(Vec<StageLog>, Option<[f64; 3]>)> {
    if !cfg.pretrain.enabled {
        return Ok((Vec::new(), None));
    }
    let mut rng = stream(cfg.seed, STREAM_PRETRAIN);
    let mut store = ParamStore::new();
    let enc = HierarchicalEncoder::new(&mut store, &cfg.pretrain.encoder, &mut rng)?;
    let task = RegressionTask::planted(&enc, cfg.pretrain.samples, &mut rng)?;
    let logs = pretrain(&enc, &mut store, &cfg.pretrain.schedule, &task)?;
    let last_override = cfg
        .pretrain
        .schedule
        .stages
        .iter()
        .rev()
        .find_map(|s| s.channel_weights);
    Ok((logs, last_override))
}

/// Runs the RL loop in `mode`.
///
/// A recurrence round is one pass, in a seeded random order, over the samples
/// active when the round starts; samples removed during the round are skipped.
/// In vanilla mode every sample stays active, so a round is a full epoch.
pub fn run_training(cfg: &RunConfig, mode: Mode) -> Result<RunReport> {
    cfg.validate()?;
    let (pretrain_logs, alpha_override) = run_pretraining(cfg)?;
    let data = generate_dataset(&cfg.dataset)?;
    let eval = generate_eval_set(&cfg.dataset, cfg.training.eval_samples)?;
    let alpha = match cfg.training.alpha.or(alpha_override) {
        Some(w) => ChannelWeights::from_weights(w)?,
        None => ChannelWeights::uniform(),
    };
    let eval_alpha = ChannelWeights::uniform();
    let policy = ToyPolicy::for_vocab(&data.vocab, cfg.dataset.feature_dim, true);
    let mut learner = Learner::new(policy, alpha);
    let mut records: Vec<SampleRecord> = data.records(cfg.degrpo.s0);
    let mut rng = stream(cfg.seed, STREAM_TRAIN);
    let t = &cfg.training;
    let target = t.target_fraction;

    let eval_now = |p: &ToyPolicy| evaluate(p, &eval, &eval_alpha, t.eval_candidates, cfg.seed);
    let initial_eval = eval_now(&learner.policy)?;
    let mut last_eval = initial_eval;
    let mut report = RunReport {
        mode,
        seed: cfg.seed,
        iterations: Vec::new(),
        rows: Vec::new(),
        target_reward: target,
        visits_to_target: None,
        iterations_to_target: None,
        round_mean_rewards: Vec::new(),
        exhausted: false,
        initial_eval_reward: initial_eval,
        final_eval_reward: initial_eval,
        pretrain: pretrain_logs,
        final_alpha: learner.alpha.weights(),
    };
    if initial_eval >= target {
        report.visits_to_target = Some(0);
        report.iterations_to_target = Some(0);
    }

    let mut iteration = 0;
    let mut visits = 0;
    'rounds: for round in 0..t.max_rounds {
        let mut order: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].is_active())
            .collect();
        if order.is_empty() {
            report.exhausted = true;
            break;
        }
        order.shuffle(&mut rng);
        let mut round_rewards = Vec::new();
        let mut cursor = 0;
        loop {
            let mut batch = Vec::with_capacity(cfg.degrpo.batch_size);
            while batch.len() < cfg.degrpo.batch_size && cursor < order.len() {
                if records[order[cursor]].is_active() {
                    batch.push(order[cursor]);
                }
                cursor += 1;
            }
            if batch.is_empty() {
                break;
            }
            let active = records.iter().filter(|r| r.is_active()).count();
            let mut trace = OpTrace::default();
            let step = degrpo_step(
                &mut records,
                &batch,
                &mut learner,
                &cfg.degrpo,
                mode,
                iteration,
                &mut rng,
                &mut trace,
            )?;
            visits += batch.len();
            for s in &step.samples {
                report.rows.push(MetricRow {
                    iteration,
                    sample_id: s.id.clone(),
                    utility: s.utility,
                    s: s.s,
                    mode: s.mode,
                    batch_loss: step.batch_loss,
                    mean_reward: step.mean_reward,
                });
            }
            let eval_reward = if (iteration + 1) % t.eval_every == 0 {
                last_eval = eval_now(&learner.policy)?;
                Some(last_eval)
            } else {
                None
            };
            if report.visits_to_target.is_none() && eval_reward.is_some_and(|r| r >= target) {
                report.visits_to_target = Some(visits);
                report.iterations_to_target = Some(iteration + 1);
            }
            round_rewards.push(step.mean_reward);
            report.iterations.push(IterationLog {
                iteration,
                round,
                active,
                visits,
                batch_loss: step.batch_loss,
                mean_reward: step.mean_reward,
                eval_reward,
            });
            iteration += 1;
            let stop =
                visits >= t.max_visits || (t.stop_at_target && report.visits_to_target.is_some());
            if stop {
                report.round_mean_rewards.push(mean(&round_rewards));
                break 'rounds;
            }
        }
        report.round_mean_rewards.push(mean(&round_rewards));
    }
    if !report.exhausted && records.iter().all(|r| !r.is_active()) {
        report.exhausted = true;
    }
    report.final_eval_reward = last_eval;
    report.final_alpha = learner.alpha.weights();
    Ok(report)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

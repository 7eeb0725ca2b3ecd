use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::DeGrpoConfig;
use super::lifecycle::{advantage, batch_threshold, lifecycle_factor, recurrent_update, Lifecycle};
use super::objective::{objective, SampleTerms};
use super::pairs::{
    attach_gradients, build_pairs, gradient_sensitivity, mean_gap, reward_separability, utility,
    PreferencePair,
};
use crate::error::{Error, Result};
use crate::policy::{ToyPolicy, ValueBaseline};
use crate::reward::{
    fine_grained_reward, update_channel_weights, ChannelWeights, StructuredResponse,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Utility scoring, recurrent state and lifecycle enabled.
    DeGrpo,
    /// Every sample stays active at full weight.
    Vanilla,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::DeGrpo => "de-grpo",
            Mode::Vanilla => "vanilla",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Removed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub utility: f64,
    pub s: f64,
    pub mode: Lifecycle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub x: Vec<f64>,
    pub truth: StructuredResponse,
    pub s: f64,
    pub status: Status,
    pub history: Vec<HistoryEntry>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, x: Vec<f64>, truth: StructuredResponse, s0: f64) -> Self {
        Self {
            id: id.into(),
            x,
            truth,
            s: s0,
            status: Status::Active,
            history: Vec::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }
}

/// Names of the operations invoked during a step, in call order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpTrace {
    pub ops: Vec<&'static str>,
}

impl OpTrace {
    fn hit(&mut self, op: &'static str) {
        self.ops.push(op);
    }

    pub fn distinct(&self) -> BTreeSet<&'static str> {
        self.ops.iter().copied().collect()
    }
}

/// Operations that only run in [`Mode::DeGrpo`].
pub const DE_ONLY_OPS: [&str; 3] = ["utility", "recurrent_update", "lifecycle_factor"];

#[derive(Clone, Debug, PartialEq)]
pub struct SampleStep {
    /// Index into the record slice.
    pub index: usize,
    pub id: String,
    /// `None` in vanilla mode.
    pub utility: Option<f64>,
    pub s: Option<f64>,
    pub mode: Lifecycle,
    pub degenerate: bool,
    pub mean_reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    pub samples: Vec<SampleStep>,
    pub batch_loss: f64,
    /// Mean candidate reward over the batch.
    pub mean_reward: f64,
    pub threshold: Option<f64>,
}

impl StepReport {
    pub fn removed(&self) -> impl Iterator<Item = &SampleStep> {
        self.samples.iter().filter(|s| s.mode == Lifecycle::Removed)
    }
}

/// Mutable learner state shared across steps.
#[derive(Clone, Debug)]
pub struct Learner {
    pub policy: ToyPolicy,
    /// Frozen at the start of RL.
    pub reference: ToyPolicy,
    pub baseline: ValueBaseline,
    pub alpha: ChannelWeights,
}

impl Learner {
    pub fn new(policy: ToyPolicy, alpha: ChannelWeights) -> Self {
        let baseline = ValueBaseline::zeros(policy.feature_dim());
        Self {
            reference: policy.clone(),
            policy,
            baseline,
            alpha,
        }
    }
}

struct Scored {
    pairs: Vec<PreferencePair>,
    mean_reward: f64,
    utility: Option<f64>,
}

/// One optimizer step over `batch` (indices into `records`).
///
/// Per sample: draw `k` candidates, build pairs, score utility, advance the
/// recurrent state, drop the sample if it falls below the removal threshold,
/// set its advantage. Then one ascent step on the objective for the policy,
/// one descent step per sample for the baseline and, when `lr_alpha > 0`,
/// one step on the channel-weight logits.
#[allow(clippy::too_many_arguments)]
pub fn degrpo_step<R: Rng + ?Sized>(
    records: &mut [SampleRecord],
    batch: &[usize],
    learner: &mut Learner,
    cfg: &DeGrpoConfig,
    mode: Mode,
    iteration: usize,
    rng: &mut R,
    trace: &mut OpTrace,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Exhausted);
    }
    for &i in batch {
        let r = records.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: records.len(),
        })?;
        if !r.is_active() {
            return Err(Error::Contract(format!("sample `{}` is not active", r.id)));
        }
    }
    let old = learner.policy.clone();
    trace.hit("snapshot_old");

    let mut scored = Vec::with_capacity(batch.len());
    for &i in batch {
        let rec = &records[i];
        let cands = learner.policy.sample_candidates(&rec.x, cfg.k, rng)?;
        trace.hit("sample_candidates");
        let mean_reward = cands
            .iter()
            .map(|y| fine_grained_reward(y, &rec.truth, &learner.alpha))
            .sum::<f64>()
            / cands.len() as f64;
        let mut pairs = build_pairs(&cands, &rec.truth, &learner.alpha);
        trace.hit("build_pairs");
        attach_gradients(&mut pairs, &learner.policy, &rec.x)?;
        let mut u = None;
        if !pairs.is_empty() {
            let r_hat = reward_separability(&pairs, cfg.gm_floor)?;
            trace.hit("reward_separability");
            let g_hat = gradient_sensitivity(&pairs, cfg.gm_floor, cfg.tracked_params.as_deref())?;
            trace.hit("gradient_sensitivity");
            if mode == Mode::DeGrpo {
                u = Some(utility(r_hat, g_hat));
                trace.hit("utility");
            }
        } else if mode == Mode::DeGrpo {
            u = Some(0.0);
            trace.hit("utility");
        }
        scored.push(Scored {
            pairs,
            mean_reward,
            utility: u,
        });
    }

    let threshold = match mode {
        Mode::DeGrpo => {
            let us: Vec<f64> = scored.iter().filter_map(|s| s.utility).collect();
            Some(batch_threshold(&us)?)
        }
        Mode::Vanilla => None,
    };

    let mut steps = Vec::with_capacity(batch.len());
    let mut advantages = Vec::with_capacity(batch.len());
    for (&i, sc) in batch.iter().zip(&scored) {
        let rec = &mut records[i];
        let mut step = SampleStep {
            index: i,
            id: rec.id.clone(),
            utility: sc.utility,
            s: None,
            mode: Lifecycle::Full,
            degenerate: sc.pairs.is_empty(),
            mean_reward: sc.mean_reward,
        };
        if let (Mode::DeGrpo, Some(u), Some(tau)) = (mode, sc.utility, threshold) {
            rec.s = recurrent_update(rec.s, u, tau, cfg.lambda);
            trace.hit("recurrent_update");
            step.s = Some(rec.s);
            if cfg.removal_rule.removes(rec.s, cfg.tau_remove) {
                rec.status = Status::Removed;
                step.mode = Lifecycle::Removed;
            } else {
                step.mode = match lifecycle_factor(rec.s, cfg) {
                    // the boundary value survives the strict in-loop check
                    Lifecycle::Removed => Lifecycle::Full,
                    m => m,
                };
                trace.hit("lifecycle_factor");
            }
            rec.history.push(HistoryEntry {
                iteration,
                utility: u,
                s: rec.s,
                mode: step.mode,
            });
        }
        let contributes = step.mode != Lifecycle::Removed && !sc.pairs.is_empty();
        if contributes {
            let factor = step.mode.factor(cfg);
            let b = learner.baseline.predict(&rec.x)?;
            let a = advantage(&sc.pairs, b, factor)?;
            trace.hit("advantage");
            advantages.push((i, a, factor));
        }
        steps.push(step);
    }

    let terms: Vec<SampleTerms<'_>> = advantages
        .iter()
        .map(|&(i, a, factor)| {
            let k = batch
                .iter()
                .position(|&b| b == i)
                .expect("index from batch");
            SampleTerms {
                x: &records[i].x,
                pairs: &scored[k].pairs,
                advantage: a,
                delta_factor: factor,
            }
        })
        .collect();
    let obj = objective(&terms, &learner.policy, &old, &learner.reference, cfg)?;
    trace.hit("objective");

    for (t, g) in learner.policy.params_mut().iter_mut().zip(&obj.grad) {
        *t += cfg.lr_policy * g;
    }
    for &(i, _, _) in &advantages {
        let k = batch
            .iter()
            .position(|&b| b == i)
            .expect("index from batch");
        let target = mean_gap(&scored[k].pairs)?;
        learner
            .baseline
            .update(&records[i].x, target, cfg.lr_baseline)?;
        trace.hit("baseline_update");
    }
    if cfg.lr_alpha > 0.0 {
        let loss_grad = learner.alpha.logit_grad(obj.alpha_grad.map(|g| -g));
        learner.alpha = update_channel_weights(&learner.alpha, loss_grad, cfg.lr_alpha);
    }

    let mean_reward = scored.iter().map(|s| s.mean_reward).sum::<f64>() / scored.len() as f64;
    Ok(StepReport {
        iteration,
        samples: steps,
        batch_loss: obj.loss,
        mean_reward,
        threshold,
    })
}

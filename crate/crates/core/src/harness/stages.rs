//! Progressive freeze/unfreeze schedule over parameter groups, plus the
//! regression pretraining loop that exercises it.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{
    EncoderInput, HierarchicalEncoder, GROUP_ADAPTERS, GROUP_AGGREGATOR, GROUP_ENCODER,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
    pub steps: usize,
    pub lr: f64,
    /// Channel weights to use while this stage is current.
    #[serde(default)]
    pub channel_weights: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSchedule {
    pub stages: Vec<StageSpec>,
}

impl Default for StageSchedule {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|g| g.to_string()).collect::<Vec<_>>();
        Self {
            stages: vec![
                StageSpec {
                    name: "align".into(),
                    trainable: s(&[GROUP_ENCODER, GROUP_ADAPTERS]),
                    frozen: s(&[GROUP_AGGREGATOR]),
                    steps: 20,
                    lr: 5e-2,
                    channel_weights: None,
                },
                StageSpec {
                    name: "aggregate".into(),
                    trainable: s(&[GROUP_AGGREGATOR]),
                    frozen: s(&[GROUP_ENCODER, GROUP_ADAPTERS]),
                    steps: 20,
                    lr: 5e-2,
                    channel_weights: None,
                },
                StageSpec {
                    name: "finetune".into(),
                    trainable: s(&[GROUP_ADAPTERS, GROUP_AGGREGATOR]),
                    frozen: s(&[GROUP_ENCODER]),
                    steps: 20,
                    lr: 2e-2,
                    channel_weights: None,
                },
            ],
        }
    }
}

/// Trainability per parameter group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeMask {
    pub trainable: BTreeMap<String, bool>,
}

impl FreezeMask {
    pub fn is_trainable(&self, group: &str) -> bool {
        self.trainable.get(group).copied().unwrap_or(false)
    }
}

impl StageSchedule {
    /// Every group of `groups` must be listed exactly once per stage, and
    /// every group must be trainable in some stage.
    pub fn validate(&self, groups: &[String]) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("schedule.stages", "needs at least one stage"));
        }
        let want: BTreeSet<&str> = groups.iter().map(String::as_str).collect();
        let mut ever = BTreeSet::new();
        for (i, st) in self.stages.iter().enumerate() {
            let field = format!("schedule.stages[{i}]");
            let mut seen = BTreeSet::new();
            for g in st.trainable.iter().chain(&st.frozen) {
                if !seen.insert(g.as_str()) {
                    return Err(Error::config(&field, format!("group `{g}` listed twice")));
                }
                if !want.contains(g.as_str()) {
                    return Err(Error::config(&field, format!("unknown group `{g}`")));
                }
            }
            if let Some(missing) = want.difference(&seen).next() {
                return Err(Error::config(
                    &field,
                    format!("group `{missing}` has no trainable/frozen flag"),
                ));
            }
            if !(st.lr >= 0.0 && st.lr.is_finite()) {
                return Err(Error::config(
                    format!("{field}.lr"),
                    "must be finite and non-negative",
                ));
            }
            if let Some(w) = st.channel_weights {
                if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::config(
                        format!("{field}.channel_weights"),
                        "weights must be positive",
                    ));
                }
            }
            ever.extend(st.trainable.iter().map(String::as_str));
        }
        if let Some(g) = want.difference(&ever).next() {
            return Err(Error::config(
                "schedule.stages",
                format!("group `{g}` is never trainable"),
            ));
        }
        Ok(())
    }
}

pub fn apply_stage(
    schedule: &StageSchedule,
    stage: usize,
    store: &ParamStore,
) -> Result<FreezeMask> {
    schedule.validate(&store.groups())?;
    let st = schedule.stages.get(stage).ok_or(Error::IndexOutOfRange {
        index: stage,
        len: schedule.stages.len(),
    })?;
    let mut trainable = BTreeMap::new();
    for g in &st.trainable {
        trainable.insert(g.clone(), true);
    }
    for g in &st.frozen {
        trainable.insert(g.clone(), false);
    }
    Ok(FreezeMask { trainable })
}

/// Fixed inputs and a planted linear target for the fused output.
#[derive(Clone, Debug)]
pub struct RegressionTask {
    pub inputs: Vec<EncoderInput>,
    pub targets: Vec<Matrix>,
}

impl RegressionTask {
    /// Targets are `text * W_target` for a random `W_target`.
    pub fn planted<R: Rng + ?Sized>(
        enc: &HierarchicalEncoder,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = enc.cfg.width;
        let w = Matrix::uniform(d, d, 0.5, rng);
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let input = enc.random_input(4, 6, 3, rng)?;
            targets.push(input.text.matmul(&w)?);
            inputs.push(input);
        }
        Ok(Self { inputs, targets })
    }

    /// Mean squared error, optionally accumulating gradients into `store`.
    pub fn loss(
        &self,
        enc: &HierarchicalEncoder,
        store: &mut ParamStore,
        with_grad: bool,
    ) -> Result<f64> {
        let mut total = 0.0;
        let n = self.inputs.len() as f64;
        for (input, target) in self.inputs.iter().zip(&self.targets) {
            let mut tape = Tape::new();
            let out = enc.forward(&mut tape, store, input)?;
            let t = tape.leaf(target.clone());
            let diff = tape.sub(out.fused, t)?;
            let sq = tape.sum_squares(diff);
            let l = tape.scale(sq, 1.0 / (n * target.len() as f64));
            total += tape.scalar(l);
            if with_grad {
                let g = tape.backward(l)?;
                tape.accumulate(&g, store);
            }
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    pub losses: Vec<f64>,
    /// Parameter names whose values changed during the stage.
    pub updated: Vec<String>,
}

/// Runs every stage in order. Frozen groups receive no updates.
pub fn pretrain(
    enc: &HierarchicalEncoder,
    store: &mut ParamStore,
    schedule: &StageSchedule,
    task: &RegressionTask,
) -> Result<Vec<StageLog>> {
    let mut logs = Vec::with_capacity(schedule.stages.len());
    for (i, st) in schedule.stages.iter().enumerate() {
        let mask = apply_stage(schedule, i, store)?;
        let before: Vec<Matrix> = store.iter().map(|(_, t)| t.value.clone()).collect();
        let mut losses = Vec::with_capacity(st.steps + 1);
        for _ in 0..st.steps {
            store.zero_grad();
            losses.push(task.loss(enc, store, true)?);
            store.sgd_step(st.lr, |t| mask.is_trainable(t.group()));
        }
        losses.push(task.loss(enc, store, false)?);
        let updated = store
            .iter()
            .zip(&before)
            .filter(|((_, t), b)| t.value != **b)
            .map(|((_, t), _)| t.name().to_string())
            .collect();
        logs.push(StageLog {
            stage: st.name.clone(),
            losses,
            updated,
        });
    }
    store.zero_grad();
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::EncoderConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> (HierarchicalEncoder, ParamStore, RegressionTask) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            width: 4,
            layer_widths: vec![3, 5],
            num_queries: 2,
            adapter_hidden: 4,
            shared_kv: false,
        };
        let enc = HierarchicalEncoder::new(&mut store, &cfg, &mut rng).unwrap();
        let task = RegressionTask::planted(&enc, 3, &mut rng).unwrap();
        (enc, store, task)
    }

    #[test]
    fn default_schedule_covers_groups() {
        let (_, store, _) = model();
        let sched = StageSchedule::default();
        sched.validate(&store.groups()).unwrap();
        let m = apply_stage(&sched, 0, &store).unwrap();
        assert!(!m.is_trainable(GROUP_AGGREGATOR));
        assert!(m.is_trainable(GROUP_ENCODER) && m.is_trainable(GROUP_ADAPTERS));
        assert!(apply_stage(&sched, 3, &store).is_err());
    }

    #[test]
    fn incomplete_stage_is_rejected() {
        let (_, store, _) = model();
        let mut sched = StageSchedule::default();
        sched.stages[1].frozen.clear();
        match sched.validate(&store.groups()) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "schedule.stages[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frozen_groups_are_bit_identical_and_loss_drops() {
        let (enc, mut store, task) = model();
        let sched = StageSchedule::default();
        let logs = pretrain(&enc, &mut store, &sched, &task).unwrap();
        for (log, st) in logs.iter().zip(&sched.stages) {
            let groups: BTreeSet<&str> = log
                .updated
                .iter()
                .map(|n| n.split('.').next().unwrap())
                .collect();
            let trainable: BTreeSet<&str> = st.trainable.iter().map(String::as_str).collect();
            assert_eq!(groups, trainable, "stage {}", st.name);
        }
        let first = logs[0].losses[0];
        let last = *logs.last().unwrap().losses.last().unwrap();
        assert!(last < first, "{first} -> {last}");
    }
}

//! Structured responses, per-channel set similarity and the weighted
//! fine-grained reward.

mod vocab;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use vocab::{Channel, Vocabulary};

/// Token-index sets for the three channels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StructuredResponse {
    sets: [BTreeSet<usize>; 3],
}

impl StructuredResponse {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_sets(attr: BTreeSet<usize>, emo: BTreeSet<usize>, act: BTreeSet<usize>) -> Self {
        Self {
            sets: [attr, emo, act],
        }
    }

    /// Builds a response from token names, failing on the first unknown one.
    pub fn from_tokens<S: AsRef<str>>(
        vocab: &Vocabulary,
        attr: &[S],
        emo: &[S],
        act: &[S],
    ) -> Result<Self> {
        Ok(Self {
            sets: [
                vocab.parse_set(Channel::Attribute, attr)?,
                vocab.parse_set(Channel::Emotion, emo)?,
                vocab.parse_set(Channel::Action, act)?,
            ],
        })
    }

    pub fn channel(&self, c: Channel) -> &BTreeSet<usize> {
        &self.sets[c.index()]
    }

    pub fn channel_mut(&mut self, c: Channel) -> &mut BTreeSet<usize> {
        &mut self.sets[c.index()]
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks every index against `vocab`.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for c in Channel::ALL {
            if let Some(&i) = self.channel(c).iter().find(|&&i| i >= vocab.len(c)) {
                return Err(Error::UnknownToken {
                    channel: c.to_string(),
                    token: format!("#{i}"),
                });
            }
        }
        Ok(())
    }

    pub fn token_names<'v>(&self, vocab: &'v Vocabulary, c: Channel) -> Vec<&'v str> {
        self.channel(c)
            .iter()
            .filter_map(|&i| vocab.name(c, i))
            .collect()
    }
}

/// Set-F1 between predicted and reference token sets.
pub fn channel_sim(pred: &BTreeSet<usize>, truth: &BTreeSet<usize>) -> f64 {
    match (pred.is_empty(), truth.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let inter = pred.intersection(truth).count();
            2.0 * inter as f64 / (pred.len() + truth.len()) as f64
        }
    }
}

/// Name-level [`channel_sim`] that reports unknown tokens.
pub fn channel_sim_tokens<S: AsRef<str>>(
    vocab: &Vocabulary,
    c: Channel,
    pred: &[S],
    truth: &[S],
) -> Result<f64> {
    Ok(channel_sim(
        &vocab.parse_set(c, pred)?,
        &vocab.parse_set(c, truth)?,
    ))
}

/// Similarity function applied per channel.
pub type SimFn = fn(&BTreeSet<usize>, &BTreeSet<usize>) -> f64;

pub fn channel_sims(y: &StructuredResponse, truth: &StructuredResponse) -> [f64; 3] {
    channel_sims_with(channel_sim, y, truth)
}

pub fn channel_sims_with(
    sim: SimFn,
    y: &StructuredResponse,
    truth: &StructuredResponse,
) -> [f64; 3] {
    Channel::ALL.map(|c| sim(y.channel(c), truth.channel(c)))
}

/// Softmax-normalized weights over the three channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeights {
    pub logits: [f64; 3],
}

impl Default for ChannelWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl ChannelWeights {
    pub fn uniform() -> Self {
        Self { logits: [0.0; 3] }
    }

    pub fn from_logits(logits: [f64; 3]) -> Self {
        Self { logits }
    }

    /// Logits whose softmax is `w`. Weights must be positive.
    pub fn from_weights(w: [f64; 3]) -> Result<Self> {
        if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Contract(format!(
                "channel weights must be positive: {w:?}"
            )));
        }
        Ok(Self {
            logits: w.map(f64::ln),
        })
    }

    pub fn weights(&self) -> [f64; 3] {
        let m = self
            .logits
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let e = self.logits.map(|z| (z - m).exp());
        let s: f64 = e.iter().sum();
        e.map(|v| v / s)
    }

    /// Chain rule from a gradient w.r.t. the weights to one w.r.t. the logits.
    pub fn logit_grad(&self, grad_weights: [f64; 3]) -> [f64; 3] {
        let w = self.weights();
        let dot: f64 = w.iter().zip(&grad_weights).map(|(a, b)| a * b).sum();
        [0, 1, 2].map(|k| w[k] * (grad_weights[k] - dot))
    }
}

/// `sum_j alpha_j * sim_j` over attribute, emotion and action channels.
pub fn fine_grained_reward(
    y: &StructuredResponse,
    truth: &StructuredResponse,
    alpha: &ChannelWeights,
) -> f64 {
    weighted(channel_sims(y, truth), alpha)
}

pub fn weighted(sims: [f64; 3], alpha: &ChannelWeights) -> f64 {
    let w = alpha.weights();
    w.iter().zip(&sims).map(|(a, s)| a * s).sum()
}

/// One descent step on the logits.
pub fn update_channel_weights(alpha: &ChannelWeights, grad: [f64; 3], lr: f64) -> ChannelWeights {
    let mut logits = alpha.logits;
    for (z, g) in logits.iter_mut().zip(grad) {
        *z -= lr * g;
    }
    ChannelWeights { logits }
}

/// Parses `sample_id<TAB>channel<TAB>token` records. Every sample id that
/// appears gets an entry, so a line with an empty token declares an empty
/// response.
pub fn parse_annotations(
    text: &str,
    vocab: &Vocabulary,
) -> Result<BTreeMap<String, StructuredResponse>> {
    let mut out: BTreeMap<String, StructuredResponse> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, ch, tok] = fields[..] else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        };
        let c = Channel::parse(ch).ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("unknown channel `{ch}`"),
        })?;
        let entry = out.entry(id.to_string()).or_default();
        if !tok.is_empty() {
            let idx = vocab.index(c, tok)?;
            entry.channel_mut(c).insert(idx);
        }
    }
    Ok(out)
}

/// Inverse of [`parse_annotations`]. Samples with no tokens at all are
/// written as a single `id<TAB>attr<TAB>` line.
pub fn write_annotations<'a, I>(records: I, vocab: &Vocabulary) -> String
where
    I: IntoIterator<Item = (&'a str, &'a StructuredResponse)>,
{
    let mut s = String::new();
    for (id, y) in records {
        if y.is_empty() {
            s.push_str(&format!("{id}\t{}\t\n", Channel::Attribute));
            continue;
        }
        for c in Channel::ALL {
            for t in y.token_names(vocab, c) {
                s.push_str(&format!("{id}\t{c}\t{t}\n"));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn sim_examples() {
        assert_eq!(channel_sim(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert_eq!(channel_sim(&set(&[1]), &set(&[2])), 0.0);
        assert_eq!(channel_sim(&set(&[0, 1]), &set(&[1, 2])), 0.5);
        assert_eq!(channel_sim(&set(&[]), &set(&[])), 1.0);
        assert_eq!(channel_sim(&set(&[]), &set(&[3])), 0.0);
    }

    #[test]
    fn sim_names_unknown_token() {
        let v = Vocabulary::full();
        let err =
            channel_sim_tokens(&v, Channel::Action, &["talk", "moonwalk"], &["talk"]).unwrap_err();
        assert!(err.to_string().contains("moonwalk"));
        let s =
            channel_sim_tokens(&v, Channel::Action, &["talk", "nod"], &["nod", "sing"]).unwrap();
        assert_eq!(s, 0.5);
    }

    #[test]
    fn reward_examples() {
        let alpha = ChannelWeights::from_weights([0.5, 0.3, 0.2]).unwrap();
        let r = weighted([1.0, 0.0, 0.5], &alpha);
        assert!((r - 0.6).abs() < 1e-15);

        let v = Vocabulary::full();
        let t = StructuredResponse::from_tokens(&v, &["male"], &["happy"], &["smile"]).unwrap();
        let a = ChannelWeights::uniform();
        assert!((fine_grained_reward(&t, &t, &a) - 1.0).abs() < 1e-15);
        let y = StructuredResponse::from_tokens(&v, &["young"], &["sad"], &["nod"]).unwrap();
        assert_eq!(fine_grained_reward(&y, &t, &a), 0.0);
    }

    #[test]
    fn weight_update_examples() {
        let a = ChannelWeights::uniform();
        assert_eq!(
            update_channel_weights(&a, [0.0; 3], 0.3).weights(),
            a.weights()
        );
        let b = update_channel_weights(&a, [-1.0, 0.0, 0.0], 0.1);
        let w = b.weights();
        let e = 0.1f64.exp();
        let expect = [e / (e + 2.0), 1.0 / (e + 2.0), 1.0 / (e + 2.0)];
        for k in 0..3 {
            assert!((w[k] - expect[k]).abs() < 1e-15);
        }
        assert!(w[0] > 1.0 / 3.0 && w[1] < 1.0 / 3.0);
    }

    #[test]
    fn logit_grad_matches_finite_differences() {
        let a = ChannelWeights::from_logits([0.3, -0.7, 1.1]);
        let gw = [0.4, -1.3, 0.9];
        let f = |z: [f64; 3]| weighted(gw, &ChannelWeights::from_logits(z));
        let g = a.logit_grad(gw);
        for k in 0..3 {
            let (mut p, mut m) = (a.logits, a.logits);
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let fd = (f(p) - f(m)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn annotation_roundtrip() {
        let v = Vocabulary::trimmed(8);
        let a = StructuredResponse::from_tokens(&v, &["male", "young"], &["sad"], &[]).unwrap();
        let b = StructuredResponse::empty();
        let text = write_annotations([("s0", &a), ("s1", &b)], &v);
        let back = parse_annotations(&text, &v).unwrap();
        assert_eq!(back["s0"], a);
        assert_eq!(back["s1"], b);
        assert!(matches!(
            parse_annotations("s0\tattr\n", &v),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_annotations("s0\tattr\tsmile\n", &v),
            Err(Error::UnknownToken { .. })
        ));
    }

    fn arb_response() -> impl Strategy<Value = StructuredResponse> {
        let s = || proptest::collection::btree_set(0usize..8, 0..5);
        (s(), s(), s()).prop_map(|(a, e, x)| StructuredResponse::from_sets(a, e, x))
    }

    proptest! {
        #[test]
        fn reward_bounded_and_symmetric(y in arb_response(), t in arb_response(),
                                        z in proptest::array::uniform3(-5.0f64..5.0)) {
            let a = ChannelWeights::from_logits(z);
            let r = fine_grained_reward(&y, &t, &a);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
            prop_assert!((r - fine_grained_reward(&t, &y, &a)).abs() < 1e-15);
            let exact = y == t;
            prop_assert_eq!((r - 1.0).abs() < 1e-12, exact);
        }

        #[test]
        fn weights_stay_on_simplex(steps in proptest::collection::vec(
            (proptest::array::uniform3(-10.0f64..10.0), 0.0f64..1.0), 0..30)) {
            let mut a = ChannelWeights::uniform();
            for (g, lr) in steps {
                a = update_channel_weights(&a, g, lr);
                let w = a.weights();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(w.iter().all(|&x| x > 0.0));
            }
        }
    }
}

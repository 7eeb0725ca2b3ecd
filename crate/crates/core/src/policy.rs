//! Factorized structured-response policy with exact log-probabilities,
//! score-function gradients and KL, plus a linear value baseline.
//!
//! Every token has a logit `z_t = W_t . [x, 1]`. Attribute and action tokens
//! are independent Bernoulli inclusions with probability `sigmoid(z_t)`. When
//! the emotion channel is exclusive it is a categorical over
//! `{none, e_1, .., e_m}` with logits `(0, z_1, .., z_m)`; otherwise it is
//! Bernoulli like the others.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::checkpoint;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::reward::{Channel, StructuredResponse, Vocabulary};

/// `ln(sigmoid(z))` without overflow.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyPolicy {
    sizes: [usize; 3],
    feature_dim: usize,
    /// `n_tokens x (feature_dim + 1)`; the last column is the bias.
    weight: Matrix,
    emotion_exclusive: bool,
}

impl ToyPolicy {
    pub fn zeros(sizes: [usize; 3], feature_dim: usize, emotion_exclusive: bool) -> Self {
        let n: usize = sizes.iter().sum();
        Self {
            sizes,
            feature_dim,
            weight: Matrix::zeros(n, feature_dim + 1),
            emotion_exclusive,
        }
    }

    pub fn for_vocab(vocab: &Vocabulary, feature_dim: usize, emotion_exclusive: bool) -> Self {
        Self::zeros(
            Channel::ALL.map(|c| vocab.len(c)),
            feature_dim,
            emotion_exclusive,
        )
    }

    /// Uniform weights in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        sizes: [usize; 3],
        feature_dim: usize,
        emotion_exclusive: bool,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(sizes, feature_dim, emotion_exclusive);
        p.weight = Matrix::uniform(p.weight.rows(), p.weight.cols(), scale, rng);
        p
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_tokens(&self) -> usize {
        self.weight.rows()
    }

    pub fn emotion_exclusive(&self) -> bool {
        self.emotion_exclusive
    }

    pub fn num_params(&self) -> usize {
        self.weight.len()
    }

    pub fn params(&self) -> &[f64] {
        self.weight.as_slice()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.weight.as_mut_slice()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    /// Row of token `i` of channel `c` in the flat layout.
    pub fn token_row(&self, c: Channel, i: usize) -> usize {
        self.sizes[..c.index()].iter().sum::<usize>() + i
    }

    /// Sets the bias of every token, leaving the feature weights alone.
    pub fn set_all_biases(&mut self, b: f64) {
        let f = self.feature_dim;
        for t in 0..self.num_tokens() {
            self.weight[(t, f)] = b;
        }
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::shape(
                "policy(features)",
                (1, x.len()),
                (1, self.feature_dim),
            ));
        }
        Ok(())
    }

    fn check_y(&self, y: &StructuredResponse) -> Result<()> {
        for c in Channel::ALL {
            if let Some(&i) = y.channel(c).iter().find(|&&i| i >= self.sizes[c.index()]) {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.sizes[c.index()],
                });
            }
        }
        if self.emotion_exclusive && y.channel(Channel::Emotion).len() > 1 {
            return Err(Error::Contract(
                "response has several emotions under an exclusive emotion channel".into(),
            ));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let f = self.feature_dim;
        Ok((0..self.num_tokens())
            .map(|t| {
                let row = self.weight.row(t);
                row[..f].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[f]
            })
            .collect())
    }

    /// Emotion log-normalizer `ln(1 + sum exp z_j)` for the exclusive channel.
    fn emotion_lse(&self, z: &[f64]) -> f64 {
        let r = self.emotion_range();
        let m = z[r.clone()].iter().copied().fold(0.0f64, f64::max);
        let s: f64 = (-m).exp() + z[r].iter().map(|&v| (v - m).exp()).sum::<f64>();
        m + s.ln()
    }

    fn emotion_range(&self) -> std::ops::Range<usize> {
        let start = self.sizes[0];
        start..start + self.sizes[1]
    }

    fn is_categorical(&self, t: usize) -> bool {
        self.emotion_exclusive && self.emotion_range().contains(&t)
    }

    /// Marginal inclusion probability of each token.
    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(x)?;
        let lse = if self.emotion_exclusive {
            self.emotion_lse(&z)
        } else {
            0.0
        };
        Ok((0..z.len())
            .map(|t| {
                if self.is_categorical(t) {
                    (z[t] - lse).exp()
                } else {
                    sigmoid(z[t])
                }
            })
            .collect())
    }

    fn included(&self, y: &StructuredResponse) -> Vec<bool> {
        let mut inc = vec![false; self.num_tokens()];
        for c in Channel::ALL {
            for &i in y.channel(c) {
                inc[self.token_row(c, i)] = true;
            }
        }
        inc
    }

    pub fn log_prob(&self, x: &[f64], y: &StructuredResponse) -> Result<f64> {
        self.check_y(y)?;
        let z = self.logits(x)?;
        let inc = self.included(y);
        let mut lp = 0.0;
        for t in 0..z.len() {
            if self.is_categorical(t) {
                continue;
            }
            lp += if inc[t] {
                log_sigmoid(z[t])
            } else {
                log_sigmoid(-z[t])
            };
        }
        if self.emotion_exclusive {
            let lse = self.emotion_lse(&z);
            let chosen = self.emotion_range().find(|&t| inc[t]);
            lp += chosen.map_or(0.0, |t| z[t]) - lse;
        }
        Ok(lp)
    }

    pub fn prob(&self, x: &[f64], y: &StructuredResponse) -> Result<f64> {
        Ok(self.log_prob(x, y)?.exp())
    }

    /// Gradient of [`ToyPolicy::log_prob`] w.r.t. the flat parameters.
    pub fn log_prob_grad(&self, x: &[f64], y: &StructuredResponse) -> Result<Vec<f64>> {
        self.check_y(y)?;
        let p = self.probs(x)?;
        let inc = self.included(y);
        let f = self.feature_dim;
        let mut g = vec![0.0; self.num_params()];
        for t in 0..p.len() {
            let d = f64::from(u8::from(inc[t])) - p[t];
            let row = &mut g[t * (f + 1)..(t + 1) * (f + 1)];
            for (gi, xi) in row[..f].iter_mut().zip(x) {
                *gi = d * xi;
            }
            row[f] = d;
        }
        Ok(g)
    }

    /// `KL(self || other)` at features `x`.
    pub fn kl_divergence(&self, other: &ToyPolicy, x: &[f64]) -> Result<f64> {
        self.check_compatible(other)?;
        let (p, q) = (self.probs(x)?, other.probs(x)?);
        let mut kl = 0.0;
        for t in 0..p.len() {
            if self.is_categorical(t) {
                continue;
            }
            kl += bernoulli_kl(p[t], q[t]);
        }
        if self.emotion_exclusive {
            let r = self.emotion_range();
            let pn = 1.0 - p[r.clone()].iter().sum::<f64>();
            let qn = 1.0 - q[r.clone()].iter().sum::<f64>();
            kl += xlogy_ratio(pn, qn);
            for t in r {
                kl += xlogy_ratio(p[t], q[t]);
            }
        }
        Ok(kl)
    }

    /// Gradient of `KL(self || other)` w.r.t. `self`'s flat parameters.
    pub fn kl_grad(&self, other: &ToyPolicy, x: &[f64]) -> Result<Vec<f64>> {
        self.check_compatible(other)?;
        let (zp, zq) = (self.logits(x)?, other.logits(x)?);
        let p = self.probs(x)?;
        let f = self.feature_dim;
        let mut dz = vec![0.0; p.len()];
        for t in 0..p.len() {
            if !self.is_categorical(t) {
                // d/dz [p ln(p/q) + (1-p) ln((1-p)/(1-q))] = p(1-p)(z_p - z_q)
                dz[t] = p[t] * (1.0 - p[t]) * (zp[t] - zq[t]);
            }
        }
        if self.emotion_exclusive {
            // log-ratio per outcome, none outcome has zero logits on both sides
            let r = self.emotion_range();
            let (lp, lq) = (self.emotion_lse(&zp), other.emotion_lse(&zq));
            let none_ratio = -lp + lq;
            let mut mean = (1.0 - p[r.clone()].iter().sum::<f64>()) * none_ratio;
            for t in r.clone() {
                mean += p[t] * (zp[t] - lp - zq[t] + lq);
            }
            for t in r {
                dz[t] = p[t] * ((zp[t] - lp - zq[t] + lq) - mean);
            }
        }
        let mut g = vec![0.0; self.num_params()];
        for (t, d) in dz.iter().enumerate() {
            let row = &mut g[t * (f + 1)..(t + 1) * (f + 1)];
            for (gi, xi) in row[..f].iter_mut().zip(x) {
                *gi = d * xi;
            }
            row[f] = *d;
        }
        Ok(g)
    }

    fn check_compatible(&self, other: &ToyPolicy) -> Result<()> {
        if self.sizes != other.sizes
            || self.feature_dim != other.feature_dim
            || self.emotion_exclusive != other.emotion_exclusive
        {
            return Err(Error::Contract("policies have different layouts".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<StructuredResponse> {
        let p = self.probs(x)?;
        let mut y = StructuredResponse::empty();
        for c in Channel::ALL {
            let off = self.token_row(c, 0);
            if c == Channel::Emotion && self.emotion_exclusive {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for i in 0..self.sizes[c.index()] {
                    acc += p[off + i];
                    if u < acc {
                        y.channel_mut(c).insert(i);
                        break;
                    }
                }
                continue;
            }
            for i in 0..self.sizes[c.index()] {
                if rng.gen::<f64>() < p[off + i] {
                    y.channel_mut(c).insert(i);
                }
            }
        }
        Ok(y)
    }

    /// `k` independent draws from `rng`.
    pub fn sample_candidates<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<StructuredResponse>> {
        (0..k).map(|_| self.sample(x, rng)).collect()
    }

    pub fn sample_candidates_seeded(
        &self,
        x: &[f64],
        k: usize,
        seed: u64,
    ) -> Result<Vec<StructuredResponse>> {
        self.sample_candidates(x, k, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Every response in the support. Refuses vocabularies over 20 tokens.
    pub fn support(&self) -> Result<Vec<StructuredResponse>> {
        let n = self.num_tokens();
        if n > 20 {
            return Err(Error::Contract(format!(
                "support of {n} tokens is too large to list"
            )));
        }
        let mut out = Vec::new();
        for mask in 0u32..(1 << n) {
            let mut sets: [BTreeSet<usize>; 3] = Default::default();
            for c in Channel::ALL {
                for i in 0..self.sizes[c.index()] {
                    if mask >> self.token_row(c, i) & 1 == 1 {
                        sets[c.index()].insert(i);
                    }
                }
            }
            if self.emotion_exclusive && sets[1].len() > 1 {
                continue;
            }
            let [a, e, x] = sets;
            out.push(StructuredResponse::from_sets(a, e, x));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, checkpoint::encode([("policy.weight", &self.weight)]))?;
        Ok(())
    }

    /// Loads weights saved by [`ToyPolicy::save`] into a policy of the same layout.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let entries = checkpoint::decode(&std::fs::read(path)?)?;
        match entries.as_slice() {
            [(name, m)] if name == "policy.weight" && m.shape() == self.weight.shape() => {
                self.weight = m.clone();
                Ok(())
            }
            _ => Err(Error::Checkpoint(
                "not a policy checkpoint of this layout".into(),
            )),
        }
    }
}

fn xlogy_ratio(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    xlogy_ratio(p, q) + xlogy_ratio(1.0 - p, 1.0 - q)
}

/// `b(x) = theta . x + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueBaseline {
    pub theta: Vec<f64>,
    pub bias: f64,
}

impl ValueBaseline {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            theta: vec![0.0; feature_dim],
            bias: 0.0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.theta.len() {
            return Err(Error::shape(
                "baseline(features)",
                (1, x.len()),
                (1, self.theta.len()),
            ));
        }
        Ok(self.theta.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias)
    }

    /// Gradient of `(b(x) - target)^2` as `(d theta, d bias)`.
    pub fn squared_error_grad(&self, x: &[f64], target: f64) -> Result<(Vec<f64>, f64)> {
        let r = 2.0 * (self.predict(x)? - target);
        Ok((x.iter().map(|v| r * v).collect(), r))
    }

    /// One gradient-descent step on `(b(x) - target)^2`.
    pub fn update(&mut self, x: &[f64], target: f64, lr: f64) -> Result<()> {
        if !target.is_finite() {
            return Err(Error::Contract(format!(
                "non-finite baseline target {target}"
            )));
        }
        let (gt, gb) = self.squared_error_grad(x, target)?;
        for (t, g) in self.theta.iter_mut().zip(gt) {
            *t -= lr * g;
        }
        self.bias -= lr * gb;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_token_half() {
        let p = ToyPolicy::zeros([1, 0, 0], 2, true);
        let x = [0.3, -1.0];
        let a = StructuredResponse::from_sets([0].into(), BTreeSet::new(), BTreeSet::new());
        let b = StructuredResponse::empty();
        assert!((p.log_prob(&x, &a).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!((p.log_prob(&x, &b).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let g = p.log_prob_grad(&x, &a).unwrap();
        assert_eq!(g[2], 0.5);
    }

    #[test]
    fn argmax_response_hand_sum() {
        let mut p = ToyPolicy::zeros([3, 0, 2], 0, false);
        p.set_all_biases((0.9f64 / 0.1).ln());
        let all = StructuredResponse::from_sets([0, 1, 2].into(), BTreeSet::new(), [0, 1].into());
        let lp = p.log_prob(&[], &all).unwrap();
        assert!((lp - 5.0 * 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_features_give_zero_feature_gradient() {
        let p = ToyPolicy::random([2, 3, 2], 4, true, 1.0, &mut rng(3));
        let y = p.sample(&[0.0; 4], &mut rng(4)).unwrap();
        let g = p.log_prob_grad(&[0.0; 4], &y).unwrap();
        for t in 0..p.num_tokens() {
            assert!(g[t * 5..t * 5 + 4].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn extreme_probabilities_sample_deterministically() {
        let mut p = ToyPolicy::zeros([3, 2, 3], 1, false);
        p.set_all_biases(-50.0);
        for y in p.sample_candidates_seeded(&[1.0], 5, 9).unwrap() {
            assert!(y.is_empty());
        }
        p.set_all_biases(50.0);
        for y in p.sample_candidates_seeded(&[1.0], 5, 9).unwrap() {
            assert_eq!(y.len(), 8);
        }
    }

    #[test]
    fn seeded_draws_replay() {
        let p = ToyPolicy::random([8, 8, 8], 3, true, 1.0, &mut rng(1));
        let x = [0.2, -0.4, 0.9];
        assert_eq!(
            p.sample_candidates_seeded(&x, 6, 42).unwrap(),
            p.sample_candidates_seeded(&x, 6, 42).unwrap()
        );
    }

    #[test]
    fn bernoulli_kl_example() {
        let mut p = ToyPolicy::zeros([1, 0, 0], 0, false);
        p.set_all_biases((0.9f64 / 0.1).ln());
        let q = ToyPolicy::zeros([1, 0, 0], 0, false);
        let expect = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        assert!((p.kl_divergence(&q, &[]).unwrap() - expect).abs() < 1e-14);
        assert_eq!(p.kl_divergence(&p, &[]).unwrap(), 0.0);
    }

    #[test]
    fn exclusive_emotion_rejects_two_emotions() {
        let p = ToyPolicy::zeros([1, 3, 1], 0, true);
        let y = StructuredResponse::from_sets(BTreeSet::new(), [0, 2].into(), BTreeSet::new());
        assert!(p.log_prob(&[], &y).is_err());
        assert!(ToyPolicy::zeros([1, 3, 1], 0, false)
            .log_prob(&[], &y)
            .is_ok());
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, theta: &[f64], grad: &[f64], tol: f64) {
        for k in 0..theta.len() {
            let mut a = theta.to_vec();
            let mut b = theta.to_vec();
            a[k] += 1e-5;
            b[k] -= 1e-5;
            let fd = (f(&a) - f(&b)) / 2e-5;
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(rel <= tol, "param {k}: fd {fd} analytic {}", grad[k]);
        }
    }

    #[test]
    fn log_prob_grad_matches_finite_differences() {
        for seed in 0..10 {
            for exclusive in [true, false] {
                let p = ToyPolicy::random([3, 3, 2], 3, exclusive, 1.0, &mut rng(seed));
                let x: Vec<f64> = Matrix::uniform(1, 3, 1.0, &mut rng(seed + 100)).into_vec();
                let y = p.sample(&x, &mut rng(seed + 200)).unwrap();
                let g = p.log_prob_grad(&x, &y).unwrap();
                let f = |th: &[f64]| {
                    let mut q = p.clone();
                    q.params_mut().copy_from_slice(th);
                    q.log_prob(&x, &y).unwrap()
                };
                fd_check(f, p.params(), &g, 1e-6);
            }
        }
    }

    #[test]
    fn kl_grad_matches_finite_differences() {
        for seed in 0..10 {
            for exclusive in [true, false] {
                let p = ToyPolicy::random([2, 3, 2], 2, exclusive, 1.0, &mut rng(seed));
                let q = ToyPolicy::random([2, 3, 2], 2, exclusive, 1.0, &mut rng(seed + 50));
                let x = [0.7, -0.3];
                let g = p.kl_grad(&q, &x).unwrap();
                let f = |th: &[f64]| {
                    let mut r = p.clone();
                    r.params_mut().copy_from_slice(th);
                    r.kl_divergence(&q, &x).unwrap()
                };
                fd_check(f, p.params(), &g, 1e-6);
            }
        }
    }

    #[test]
    fn support_sums_to_one_and_kl_matches_enumeration() {
        for exclusive in [true, false] {
            let p = ToyPolicy::random([4, 3, 3], 2, exclusive, 1.5, &mut rng(11));
            let q = ToyPolicy::random([4, 3, 3], 2, exclusive, 1.5, &mut rng(12));
            let x = [0.4, -0.8];
            let support = p.support().unwrap();
            let mut total = 0.0;
            let mut kl = 0.0;
            for y in &support {
                let (lp, lq) = (p.log_prob(&x, y).unwrap(), q.log_prob(&x, y).unwrap());
                total += lp.exp();
                kl += lp.exp() * (lp - lq);
            }
            assert!((total - 1.0).abs() < 1e-10);
            assert!((kl - p.kl_divergence(&q, &x).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn baseline_examples() {
        let mut b = ValueBaseline::zeros(0);
        b.update(&[], 0.4, 0.5).unwrap();
        assert!((b.bias - 0.4).abs() < 1e-15);

        let fitted = ValueBaseline {
            theta: vec![0.5],
            bias: 0.1,
        };
        let (gt, gb) = fitted.squared_error_grad(&[2.0], 1.1).unwrap();
        assert_eq!((gt[0], gb), (0.0, 0.0));

        let mut lin = ValueBaseline::zeros(2);
        let x = [0.3, -0.6];
        lin.update(&x, 1.0, 0.1).unwrap();
        let after = lin.predict(&x).unwrap();
        assert!(after > 0.0 && after < 1.0);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ftck");
        let p = ToyPolicy::random([2, 2, 2], 3, true, 1.0, &mut rng(5));
        p.save(&path).unwrap();
        let mut q = ToyPolicy::zeros([2, 2, 2], 3, true);
        q.load(&path).unwrap();
        assert_eq!(p, q);
        let mut wrong = ToyPolicy::zeros([2, 2, 3], 3, true);
        assert!(wrong.load(&path).is_err());
    }
}

//! Clipped pairwise surrogate with a KL term.
//!
//! Per pair, with `rho = pi_current / pi_old` and `d = rho_w - rho_l`:
//!
//! ```text
//! term = min(ln sigmoid(d) * A, ln sigmoid(clip(d, 1 - eps, 1 + eps)) * A)
//!        + sign * beta * KL(pi_current || pi_ref)(x)
//! ```
//!
//! `J` is the mean of `term` over all pairs in the batch and the loss is `-J`.

use super::config::DeGrpoConfig;
use super::pairs::PreferencePair;
use crate::error::{Error, Result};
use crate::policy::{log_sigmoid, sigmoid, ToyPolicy};

/// One sample's contribution to the objective.
#[derive(Clone, Copy, Debug)]
pub struct SampleTerms<'a> {
    pub x: &'a [f64],
    pub pairs: &'a [PreferencePair],
    pub advantage: f64,
    /// Multiplier applied to the mean gap inside the advantage.
    pub delta_factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairTerm {
    pub rho_w: f64,
    pub rho_l: f64,
    pub delta: f64,
    pub unclipped: f64,
    pub clipped: f64,
    /// `min(unclipped, clipped)`.
    pub surrogate: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct ObjectiveReport {
    pub objective: f64,
    pub loss: f64,
    /// `dJ/dtheta` over the current policy's flat parameters.
    pub grad: Vec<f64>,
    /// `dJ/dalpha` w.r.t. the normalized channel weights.
    pub alpha_grad: [f64; 3],
    pub terms: Vec<PairTerm>,
}

pub fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

pub fn objective(
    samples: &[SampleTerms<'_>],
    current: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &DeGrpoConfig,
) -> Result<ObjectiveReport> {
    let n_params = current.num_params();
    let total: usize = samples.iter().map(|s| s.pairs.len()).sum();
    let mut report = ObjectiveReport {
        objective: 0.0,
        loss: 0.0,
        grad: vec![0.0; n_params],
        alpha_grad: [0.0; 3],
        terms: Vec::with_capacity(total),
    };
    if total == 0 {
        return Ok(report);
    }
    let inv = 1.0 / total as f64;
    let (lo, hi) = (1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
    let kl_coef = cfg.kl_sign.sign() * cfg.beta;
    let mut pair_index = 0;

    for s in samples {
        if s.pairs.is_empty() {
            continue;
        }
        let kl = current.kl_divergence(reference, s.x)?;
        let kl_grad = if kl_coef != 0.0 {
            Some(current.kl_grad(reference, s.x)?)
        } else {
            None
        };
        let a = s.advantage;
        let mut dj_da = 0.0;
        let mut mean_sim_diff = [0.0; 3];

        for p in s.pairs {
            let lw = current.log_prob(s.x, &p.winner)? - old.log_prob(s.x, &p.winner)?;
            let ll = current.log_prob(s.x, &p.loser)? - old.log_prob(s.x, &p.loser)?;
            let (rho_w, rho_l) = (lw.exp(), ll.exp());
            if !(rho_w.is_finite() && rho_l.is_finite()) {
                return Err(Error::NumericRange { pair: pair_index });
            }
            let delta = rho_w - rho_l;
            let dc = clip(delta, lo, hi);
            let unclipped = log_sigmoid(delta) * a;
            let clipped = log_sigmoid(dc) * a;
            let surrogate = unclipped.min(clipped);
            let inside = (lo..=hi).contains(&delta);

            // the clipped branch is constant in theta unless clip is the identity
            if unclipped < clipped || inside {
                let c = inv * a * (1.0 - sigmoid(delta));
                let gw = current.log_prob_grad(s.x, &p.winner)?;
                let gl = current.log_prob_grad(s.x, &p.loser)?;
                for (r, (w, l)) in report.grad.iter_mut().zip(gw.iter().zip(&gl)) {
                    *r += c * (rho_w * w - rho_l * l);
                }
            }
            dj_da += if unclipped <= clipped {
                log_sigmoid(delta)
            } else {
                log_sigmoid(dc)
            };
            for (m, (w, l)) in mean_sim_diff.iter_mut().zip(p.sims_w.iter().zip(&p.sims_l)) {
                *m += (w - l) / s.pairs.len() as f64;
            }
            if let Some(g) = &kl_grad {
                for (r, gk) in report.grad.iter_mut().zip(g) {
                    *r += inv * kl_coef * gk;
                }
            }
            report.objective += inv * (surrogate + kl_coef * kl);
            report.terms.push(PairTerm {
                rho_w,
                rho_l,
                delta,
                unclipped,
                clipped,
                surrogate,
                kl,
            });
            pair_index += 1;
        }
        for (g, m) in report.alpha_grad.iter_mut().zip(mean_sim_diff) {
            *g += inv * dj_da * s.delta_factor * m;
        }
    }
    report.loss = -report.objective;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrpo::pairs::{build_pairs, mean_gap};
    use crate::reward::{ChannelWeights, StructuredResponse};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ToyPolicy, Vec<f64>, Vec<PreferencePair>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ToyPolicy::random([3, 3, 2], 3, true, 1.0, &mut rng);
        let x = vec![0.5, -0.2, 0.8];
        let truth = p.sample(&x, &mut rng).unwrap();
        let cands = p.sample_candidates(&x, 6, &mut rng).unwrap();
        let pairs = build_pairs(&cands, &truth, &ChannelWeights::uniform());
        assert!(!pairs.is_empty());
        (p, x, pairs)
    }

    #[test]
    fn anchor_gives_half_log() {
        let (p, x, pairs) = setup(1);
        let cfg = DeGrpoConfig::default();
        let a = 0.3;
        let s = [SampleTerms {
            x: &x,
            pairs: &pairs,
            advantage: a,
            delta_factor: 1.0,
        }];
        let r = objective(&s, &p, &p, &p, &cfg).unwrap();
        for t in &r.terms {
            assert_eq!(t.delta, 0.0);
            assert!((t.surrogate - 0.5f64.ln() * a).abs() < 1e-15);
            assert_eq!(t.kl, 0.0);
        }
        assert!((r.objective - 0.5f64.ln() * a).abs() < 1e-15);
    }

    #[test]
    fn inside_clip_range_both_branches_agree() {
        let (p, x, pairs) = setup(2);
        let mut cur = p.clone();
        // raise the probability of the first winner just enough to land d inside [0.8, 1.2]
        let target = &pairs[0];
        let mut found = false;
        for step in 0..400 {
            let g = cur.log_prob_grad(&x, &target.winner).unwrap();
            for (t, gi) in cur.params_mut().iter_mut().zip(&g) {
                *t += 0.01 * gi;
            }
            let s = [SampleTerms {
                x: &x,
                pairs: &pairs[..1],
                advantage: 0.4,
                delta_factor: 1.0,
            }];
            let r = objective(&s, &cur, &p, &p, &DeGrpoConfig::default()).unwrap();
            let d = r.terms[0].delta;
            if (0.8..=1.2).contains(&d) {
                assert_eq!(r.terms[0].unclipped, r.terms[0].clipped);
                found = true;
                break;
            }
            assert!(step < 399, "never reached the clip range");
        }
        assert!(found);
    }

    #[test]
    fn branch_selection_outside_range() {
        let a: f64 = 0.7;
        let (u, c) = (log_sigmoid(0.5) * a, log_sigmoid(clip(0.5, 0.8, 1.2)) * a);
        assert_eq!(u.min(c), u);
        let a = -a;
        let (u, c) = (log_sigmoid(0.5) * a, log_sigmoid(clip(0.5, 0.8, 1.2)) * a);
        assert_eq!(u.min(c), c);
    }

    fn fd_objective(
        cur: &ToyPolicy,
        old: &ToyPolicy,
        reference: &ToyPolicy,
        x: &[f64],
        pairs: &[PreferencePair],
        a: f64,
        cfg: &DeGrpoConfig,
    ) {
        let s = [SampleTerms {
            x,
            pairs,
            advantage: a,
            delta_factor: 1.0,
        }];
        let r = objective(&s, cur, old, reference, cfg).unwrap();
        for k in 0..cur.num_params() {
            let (mut hi, mut lo) = (cur.clone(), cur.clone());
            hi.params_mut()[k] += 1e-5;
            lo.params_mut()[k] -= 1e-5;
            let fh = objective(&s, &hi, old, reference, cfg).unwrap().objective;
            let fl = objective(&s, &lo, old, reference, cfg).unwrap().objective;
            let fd = (fh - fl) / 2e-5;
            let g = r.grad[k];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            assert!(rel <= 1e-4, "param {k}: fd {fd} analytic {g}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let (p, x, pairs) = setup(10 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let cur = {
                let mut c = p.clone();
                let noise = ToyPolicy::random([3, 3, 2], 3, true, 0.3, &mut rng);
                for (t, n) in c.params_mut().iter_mut().zip(noise.params()) {
                    *t += n;
                }
                c
            };
            let reference = ToyPolicy::random([3, 3, 2], 3, true, 1.0, &mut rng);
            for kl_sign in [
                super::super::KlSign::Penalize,
                super::super::KlSign::Literal,
            ] {
                let cfg = DeGrpoConfig {
                    beta: 0.3,
                    kl_sign,
                    ..Default::default()
                };
                fd_objective(&cur, &p, &reference, &x, &pairs, 0.6, &cfg);
                fd_objective(&cur, &p, &reference, &x, &pairs, -0.6, &cfg);
            }
        }
    }

    #[test]
    fn alpha_gradient_matches_finite_differences() {
        let (p, x, _) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let truth = p.sample(&x, &mut rng).unwrap();
        let cands = p.sample_candidates(&x, 6, &mut rng).unwrap();
        let cfg = DeGrpoConfig::default();
        let b = 0.05;
        let eval = |alpha: &ChannelWeights| {
            let pairs = build_pairs(&cands, &truth, alpha);
            let a = 0.5 * (mean_gap(&pairs).unwrap() - b);
            let s = [SampleTerms {
                x: &x,
                pairs: &pairs,
                advantage: a,
                delta_factor: 0.5,
            }];
            objective(&s, &p, &p, &p, &cfg).unwrap()
        };
        let alpha = ChannelWeights::from_logits([0.2, -0.1, 0.4]);
        let g = alpha.logit_grad(eval(&alpha).alpha_grad);
        for (k, gk) in g.iter().enumerate() {
            let (mut hi, mut lo) = (alpha, alpha);
            hi.logits[k] += 1e-6;
            lo.logits[k] -= 1e-6;
            let fd = (eval(&hi).objective - eval(&lo).objective) / 2e-6;
            assert!((fd - gk).abs() < 1e-7, "logit {k}: fd {fd} analytic {gk}");
        }
    }

    #[test]
    fn overflowing_ratio_is_reported() {
        let x = [1.0];
        let mut cur = ToyPolicy::zeros([1, 0, 0], 1, false);
        let mut old = cur.clone();
        cur.set_all_biases(800.0);
        old.set_all_biases(-800.0);
        let full =
            StructuredResponse::from_sets([0].into(), Default::default(), Default::default());
        let pair = PreferencePair {
            winner: full,
            loser: StructuredResponse::empty(),
            r_w: 1.0,
            r_l: 0.0,
            sims_w: [1.0; 3],
            sims_l: [0.0; 3],
            g_w: None,
            g_l: None,
        };
        let pairs = [pair];
        let s = [SampleTerms {
            x: &x,
            pairs: &pairs,
            advantage: 1.0,
            delta_factor: 1.0,
        }];
        assert!(matches!(
            objective(&s, &cur, &old, &old, &DeGrpoConfig::default()),
            Err(Error::NumericRange { pair: 0 })
        ));
    }
}

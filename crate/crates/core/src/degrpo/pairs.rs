use crate::error::{Error, Result};
use crate::policy::ToyPolicy;
use crate::reward::{channel_sims, weighted, ChannelWeights, StructuredResponse};

#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub winner: StructuredResponse,
    pub loser: StructuredResponse,
    pub r_w: f64,
    pub r_l: f64,
    /// Per-channel similarities behind `r_w` and `r_l`.
    pub sims_w: [f64; 3],
    pub sims_l: [f64; 3],
    /// Score-function gradients of the current policy, when attached.
    pub g_w: Option<Vec<f64>>,
    pub g_l: Option<Vec<f64>>,
}

impl PreferencePair {
    pub fn gap(&self) -> f64 {
        self.r_w - self.r_l
    }
}

/// Every unordered pair of candidates with distinct rewards, winner first.
/// An empty result marks a degenerate sample.
pub fn build_pairs(
    candidates: &[StructuredResponse],
    truth: &StructuredResponse,
    alpha: &ChannelWeights,
) -> Vec<PreferencePair> {
    let sims: Vec<[f64; 3]> = candidates.iter().map(|y| channel_sims(y, truth)).collect();
    let rewards: Vec<f64> = sims.iter().map(|&s| weighted(s, alpha)).collect();
    let mut out = Vec::new();
    for i in 0..candidates.len() {
        for j in i + 1..candidates.len() {
            if rewards[i] == rewards[j] {
                continue;
            }
            let (w, l) = if rewards[i] > rewards[j] {
                (i, j)
            } else {
                (j, i)
            };
            out.push(PreferencePair {
                winner: candidates[w].clone(),
                loser: candidates[l].clone(),
                r_w: rewards[w],
                r_l: rewards[l],
                sims_w: sims[w],
                sims_l: sims[l],
                g_w: None,
                g_l: None,
            });
        }
    }
    out
}

/// Fills `g_w` and `g_l` from `policy` at features `x`.
pub fn attach_gradients(pairs: &mut [PreferencePair], policy: &ToyPolicy, x: &[f64]) -> Result<()> {
    for p in pairs {
        p.g_w = Some(policy.log_prob_grad(x, &p.winner)?);
        p.g_l = Some(policy.log_prob_grad(x, &p.loser)?);
    }
    Ok(())
}

/// `exp(mean(ln(max(v, floor))))`.
pub fn geometric_mean(values: &[f64], floor: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let s: f64 = values.iter().map(|&v| v.max(floor).ln()).sum();
    Ok((s / values.len() as f64).exp())
}

/// Geometric mean of the absolute reward gaps.
pub fn reward_separability(pairs: &[PreferencePair], floor: f64) -> Result<f64> {
    let gaps: Vec<f64> = pairs.iter().map(|p| (p.r_w - p.r_l).abs()).collect();
    geometric_mean(&gaps, floor)
}

/// Geometric mean of `||g_w - g_l||_2`, restricted to `tracked` indices when given.
pub fn gradient_sensitivity(
    pairs: &[PreferencePair],
    floor: f64,
    tracked: Option<&[usize]>,
) -> Result<f64> {
    let mut norms = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let (Some(gw), Some(gl)) = (&p.g_w, &p.g_l) else {
            return Err(Error::Contract(format!("pair {i} carries no gradients")));
        };
        if gw.len() != gl.len() {
            return Err(Error::Contract(format!("pair {i} gradient lengths differ")));
        }
        let sq: f64 = match tracked {
            Some(idx) => idx
                .iter()
                .map(|&k| {
                    gw.get(k)
                        .zip(gl.get(k))
                        .map(|(a, b)| (a - b) * (a - b))
                        .ok_or(Error::IndexOutOfRange {
                            index: k,
                            len: gw.len(),
                        })
                })
                .sum::<Result<f64>>()?,
            None => gw.iter().zip(gl).map(|(a, b)| (a - b) * (a - b)).sum(),
        };
        norms.push(sq.sqrt());
    }
    geometric_mean(&norms, floor)
}

pub fn utility(separability: f64, sensitivity: f64) -> f64 {
    separability * sensitivity
}

/// Mean of `r_w - r_l`.
pub fn mean_gap(pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    Ok(pairs.iter().map(PreferencePair::gap).sum::<f64>() / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::Vocabulary;

    fn pair(r_w: f64, r_l: f64, g_w: Vec<f64>, g_l: Vec<f64>) -> PreferencePair {
        PreferencePair {
            winner: StructuredResponse::empty(),
            loser: StructuredResponse::empty(),
            r_w,
            r_l,
            sims_w: [0.0; 3],
            sims_l: [0.0; 3],
            g_w: Some(g_w),
            g_l: Some(g_l),
        }
    }

    fn with_attrs(v: &Vocabulary, names: &[&str]) -> StructuredResponse {
        StructuredResponse::from_tokens(v, names, &[], &[]).unwrap()
    }

    #[test]
    fn pair_counts() {
        let v = Vocabulary::trimmed(8);
        let alpha = ChannelWeights::from_weights([0.98, 0.01, 0.01]).unwrap();
        let truth = with_attrs(&v, &["male", "young", "chubby", "pale_skin"]);
        // attribute F1 against the truth: 1, 0, 2/3, 2/3
        let cands = vec![
            truth.clone(),
            with_attrs(&v, &["blurry"]),
            with_attrs(&v, &["male", "young"]),
            with_attrs(&v, &["chubby", "pale_skin"]),
        ];
        let pairs = build_pairs(&cands, &truth, &alpha);
        assert_eq!(pairs.len(), 5);
        assert!(pairs.iter().all(|p| p.r_w > p.r_l));

        let same = vec![truth.clone(); 4];
        assert!(build_pairs(&same, &truth, &alpha).is_empty());

        let distinct = vec![
            truth.clone(),
            with_attrs(&v, &["blurry"]),
            with_attrs(&v, &["male"]),
            with_attrs(&v, &["male", "young", "chubby"]),
        ];
        assert_eq!(build_pairs(&distinct, &truth, &alpha).len(), 6);
    }

    #[test]
    fn geometric_mean_examples() {
        let p = vec![
            pair(0.9, 0.7, vec![1.0], vec![0.0]),
            pair(0.8, 0.0, vec![0.0], vec![4.0]),
        ];
        assert!((reward_separability(&p, 1e-8).unwrap() - 0.4).abs() < 1e-12);
        assert!((gradient_sensitivity(&p, 1e-8, None).unwrap() - 2.0).abs() < 1e-12);
        let c = vec![pair(0.5, 0.2, vec![], vec![]); 3];
        assert!((reward_separability(&c, 1e-8).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn equal_gradients_hit_the_floor() {
        let p = vec![pair(1.0, 0.0, vec![0.3, 0.1], vec![0.3, 0.1]); 4];
        let g = gradient_sensitivity(&p, 1e-8, None).unwrap();
        assert!((g - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn missing_gradients_and_empty_pairs() {
        let mut p = pair(1.0, 0.0, vec![], vec![]);
        p.g_w = None;
        assert!(matches!(
            gradient_sensitivity(&[p], 1e-8, None),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            reward_separability(&[], 1e-8),
            Err(Error::EmptyPairs)
        ));
    }

    #[test]
    fn tracked_subset() {
        let p = vec![pair(1.0, 0.0, vec![3.0, 4.0, 100.0], vec![0.0; 3])];
        assert!((gradient_sensitivity(&p, 1e-8, Some(&[0, 1])).unwrap() - 5.0).abs() < 1e-12);
        assert!(gradient_sensitivity(&p, 1e-8, Some(&[7])).is_err());
    }

    #[test]
    fn utility_examples() {
        assert!((utility(0.4, 2.0) - 0.8).abs() < 1e-15);
        assert_eq!(utility(0.0, 123.0), 0.0);
        assert_eq!(utility(1.0, 1.0), 1.0);
    }
}

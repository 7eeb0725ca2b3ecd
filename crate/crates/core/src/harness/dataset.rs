//! Synthetic annotated samples over the attribute, emotion and action channels.
//!
//! Informative samples follow a hidden linear rule: with a teacher logit
//! `z_t = W*_t . [x, 1]`, attribute and action tokens are present iff
//! `z_t > 0`, and the emotion is the argmax of `(0, z_e1, .., z_em)`, where
//! index 0 means none. Noise samples get uniformly random annotations.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrpo::SampleRecord;
use crate::error::{Error, Result};
use crate::policy::ToyPolicy;
use crate::reward::{
    parse_annotations, write_annotations, Channel, StructuredResponse, Vocabulary,
};

/// Which vocabulary a dataset uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabSource {
    Full,
    Trimmed { per_channel: usize },
    File { path: String },
}

impl VocabSource {
    pub fn load(&self) -> Result<Vocabulary> {
        match self {
            VocabSource::Full => Ok(Vocabulary::full()),
            VocabSource::Trimmed { per_channel } => Ok(Vocabulary::trimmed(*per_channel)),
            VocabSource::File { path } => Vocabulary::from_tsv(&std::fs::read_to_string(path)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n: usize,
    pub informative_fraction: f64,
    pub feature_dim: usize,
    pub seed: u64,
    pub vocab: VocabSource,
    /// Scale of the teacher weights.
    pub rule_scale: f64,
    /// Multiplier on noise-sample features. Values below 1 give noise samples
    /// lower feature energy than informative ones.
    pub noise_feature_scale: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n: 512,
            informative_fraction: 0.3,
            feature_dim: 16,
            seed: 0,
            vocab: VocabSource::Trimmed { per_channel: 8 },
            rule_scale: 1.0,
            noise_feature_scale: 0.25,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.informative_fraction) {
            return Err(Error::config(
                "dataset.informative_fraction",
                format!("must lie in [0, 1], got {}", self.informative_fraction),
            ));
        }
        if self.n == 0 {
            return Err(Error::config("dataset.n", "must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("dataset.feature_dim", "must be at least 1"));
        }
        if !(self.noise_feature_scale >= 0.0 && self.noise_feature_scale.is_finite()) {
            return Err(Error::config(
                "dataset.noise_feature_scale",
                "must be finite and non-negative",
            ));
        }
        if !(self.rule_scale > 0.0 && self.rule_scale.is_finite()) {
            return Err(Error::config("dataset.rule_scale", "must be positive"));
        }
        if let VocabSource::Trimmed { per_channel: 0 } = self.vocab {
            return Err(Error::config(
                "dataset.vocab",
                "trimmed vocabulary needs at least 1 token per channel",
            ));
        }
        Ok(())
    }

    pub fn informative_count(&self) -> usize {
        (self.n as f64 * self.informative_fraction).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub x: Vec<f64>,
    pub truth: StructuredResponse,
    pub informative: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub samples: Vec<Sample>,
}

/// Hidden rule behind informative samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub weights: ToyPolicy,
}

impl Teacher {
    pub fn new(spec: &DatasetSpec, vocab: &Vocabulary) -> Self {
        let mut rng = stream(spec.seed, 0);
        let sizes = Channel::ALL.map(|c| vocab.len(c));
        Self {
            weights: ToyPolicy::random(sizes, spec.feature_dim, true, spec.rule_scale, &mut rng),
        }
    }

    pub fn label(&self, x: &[f64]) -> Result<StructuredResponse> {
        let z = self.weights.logits(x)?;
        let sizes = self.weights.sizes();
        let mut y = StructuredResponse::empty();
        for c in Channel::ALL {
            let off = self.weights.token_row(c, 0);
            let zs = &z[off..off + sizes[c.index()]];
            if c == Channel::Emotion {
                let best = zs
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .max_by(|a, b| a.1.total_cmp(b.1));
                if let Some((i, _)) = best {
                    y.channel_mut(c).insert(i);
                }
            } else {
                for (i, &v) in zs.iter().enumerate() {
                    if v > 0.0 {
                        y.channel_mut(c).insert(i);
                    }
                }
            }
        }
        Ok(y)
    }

    /// A policy whose samples match the rule almost surely.
    pub fn oracle_policy(&self, sharpness: f64) -> ToyPolicy {
        let mut p = self.weights.clone();
        for v in p.params_mut() {
            *v *= sharpness;
        }
        p
    }
}

/// Independent ChaCha stream `n` of `seed`.
pub fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

fn features<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    // unit variance before scaling
    let b = 3f64.sqrt();
    (0..dim).map(|_| scale * rng.gen_range(-b..b)).collect()
}

fn uniform_truth<R: Rng + ?Sized>(vocab: &Vocabulary, rng: &mut R) -> StructuredResponse {
    let mut y = StructuredResponse::empty();
    for c in Channel::ALL {
        if c == Channel::Emotion {
            let k = rng.gen_range(0..=vocab.len(c));
            if k > 0 {
                y.channel_mut(c).insert(k - 1);
            }
        } else {
            for i in 0..vocab.len(c) {
                if rng.gen_bool(0.5) {
                    y.channel_mut(c).insert(i);
                }
            }
        }
    }
    y
}

/// Deterministic in `spec`. Informative and noise samples are interleaved
/// by a seeded shuffle.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let vocab = spec.vocab.load()?;
    let teacher = Teacher::new(spec, &vocab);
    let mut rng = stream(spec.seed, 1);
    let n_inf = spec.informative_count();
    let mut kinds: Vec<bool> = (0..spec.n).map(|i| i < n_inf).collect();
    kinds.shuffle(&mut rng);
    let width = spec.n.to_string().len();
    let samples = kinds
        .into_iter()
        .enumerate()
        .map(|(i, informative)| {
            let id = format!("s{i:0width$}");
            if informative {
                let x = features(spec.feature_dim, 1.0, &mut rng);
                let truth = teacher.label(&x)?;
                Ok(Sample {
                    id,
                    x,
                    truth,
                    informative,
                })
            } else {
                let x = features(spec.feature_dim, spec.noise_feature_scale, &mut rng);
                let truth = uniform_truth(&vocab, &mut rng);
                Ok(Sample {
                    id,
                    x,
                    truth,
                    informative,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { vocab, samples })
}

/// `n` held-out informative samples from the same rule.
pub fn generate_eval_set(spec: &DatasetSpec, n: usize) -> Result<Vec<Sample>> {
    let vocab = spec.vocab.load()?;
    let teacher = Teacher::new(spec, &vocab);
    let mut rng = stream(spec.seed, 2);
    (0..n)
        .map(|i| {
            let x = features(spec.feature_dim, 1.0, &mut rng);
            Ok(Sample {
                id: format!("eval{i}"),
                truth: teacher.label(&x)?,
                x,
                informative: true,
            })
        })
        .collect()
}

impl Dataset {
    pub fn records(&self, s0: f64) -> Vec<SampleRecord> {
        self.samples
            .iter()
            .map(|s| SampleRecord::new(s.id.clone(), s.x.clone(), s.truth.clone(), s0))
            .collect()
    }

    pub fn annotations_tsv(&self) -> String {
        write_annotations(
            self.samples.iter().map(|s| (s.id.as_str(), &s.truth)),
            &self.vocab,
        )
    }

    /// `sample_id<TAB>kind<TAB>x_1<TAB>..<TAB>x_F`, kind `informative` or `noise`.
    pub fn features_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let kind = if s.informative {
                "informative"
            } else {
                "noise"
            };
            let _ = write!(out, "{}\t{kind}", s.id);
            for v in &s.x {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `vocab.tsv`, `annotations.tsv` and `features.tsv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("vocab.tsv"), self.vocab.to_tsv())?;
        std::fs::write(dir.join("annotations.tsv"), self.annotations_tsv())?;
        std::fs::write(dir.join("features.tsv"), self.features_tsv())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::from_tsv(&std::fs::read_to_string(dir.join("vocab.tsv"))?)?;
        let mut truths = parse_annotations(
            &std::fs::read_to_string(dir.join("annotations.tsv"))?,
            &vocab,
        )?;
        let text = std::fs::read_to_string(dir.join("features.tsv"))?;
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse {
                line: i + 1,
                message: m,
            };
            let mut f = line.split('\t');
            let id = f
                .next()
                .ok_or_else(|| err("missing id".into()))?
                .to_string();
            let informative = match f.next() {
                Some("informative") => true,
                Some("noise") => false,
                other => return Err(err(format!("bad kind {other:?}"))),
            };
            let x = f
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| err(format!("bad feature `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let truth = truths
                .remove(&id)
                .ok_or_else(|| err(format!("sample `{id}` has no annotation")))?;
            samples.push(Sample {
                id,
                x,
                truth,
                informative,
            });
        }
        if let Some(id) = truths.keys().next() {
            return Err(Error::Parse {
                line: 0,
                message: format!("annotation for unknown sample `{id}`"),
            });
        }
        Ok(Self { vocab, samples })
    }
}

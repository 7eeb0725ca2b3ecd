use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapter::WeightAdapter;
use super::ca2::{Ca2Chain, Ca2Config, LayerFeatureStack};
use super::fusion::{fuse_on_tape, fused_visual_on_tape};
use super::qformer::{QueryAggregator, DEFAULT_QUERIES};
use crate::error::{Error, Result};
use crate::numerics::{grad_check, GradCheckReport, Matrix, ParamStore, Tape, Var};

/// Parameter group names used by the full encoder.
pub const GROUP_ENCODER: &str = "encoder";
pub const GROUP_AGGREGATOR: &str = "aggregator";
pub const GROUP_ADAPTERS: &str = "adapters";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EncoderConfig {
    /// Shared token width `D`; prompt and text tokens use it too.
    pub width: usize,
    /// `D_i` of each facial-encoder block.
    pub layer_widths: Vec<usize>,
    pub num_queries: usize,
    pub adapter_hidden: usize,
    pub shared_kv: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            width: 8,
            layer_widths: vec![6, 8, 10],
            num_queries: DEFAULT_QUERIES,
            adapter_hidden: 8,
            shared_kv: false,
        }
    }
}

/// One forward example for [`HierarchicalEncoder`].
#[derive(Clone, Debug)]
pub struct EncoderInput {
    /// `L_p x D` prompt tokens.
    pub prompt: Matrix,
    /// `M x D` text tokens scored against each stream by the adapters.
    pub text: Matrix,
    /// `L_g x D` tokens from the general visual encoder.
    pub general_visual: Matrix,
    /// Per-block outputs of the facial encoder.
    pub facial_stack: LayerFeatureStack,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub fused: Var,
    pub general_tokens: Var,
    pub facial_tokens: Var,
    pub score_general: Var,
    pub score_facial: Var,
    pub weight_general: Var,
    pub weight_facial: Var,
}

/// Low-level chain, two query aggregators, two adapters and the softmax
/// fusion, composed end to end.
#[derive(Clone, Debug)]
pub struct HierarchicalEncoder {
    pub cfg: EncoderConfig,
    pub ca2: Ca2Chain,
    pub agg_general: QueryAggregator,
    pub agg_facial: QueryAggregator,
    pub adapter_general: WeightAdapter,
    pub adapter_facial: WeightAdapter,
}

impl HierarchicalEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.width;
        let ca2 = Ca2Chain::new(
            store,
            GROUP_ENCODER,
            &Ca2Config {
                layer_widths: cfg.layer_widths.clone(),
                text_width: d,
                shared_dim: d,
                shared_kv: cfg.shared_kv,
            },
            rng,
        )?;
        let agg_general = QueryAggregator::new(
            store,
            &format!("{GROUP_AGGREGATOR}.general"),
            cfg.num_queries,
            d,
            rng,
        )?;
        let agg_facial = QueryAggregator::new(
            store,
            &format!("{GROUP_AGGREGATOR}.facial"),
            cfg.num_queries,
            d,
            rng,
        )?;
        let adapter_general = WeightAdapter::new(
            store,
            &format!("{GROUP_ADAPTERS}.general"),
            d,
            cfg.adapter_hidden,
            rng,
        )?;
        let adapter_facial = WeightAdapter::new(
            store,
            &format!("{GROUP_ADAPTERS}.facial"),
            d,
            cfg.adapter_hidden,
            rng,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            ca2,
            agg_general,
            agg_facial,
            adapter_general,
            adapter_facial,
        })
    }

    /// Draws a random input with `prompt_len` prompt rows, `general_len` general
    /// tokens and `patches` rows per facial block.
    pub fn random_input<R: Rng + ?Sized>(
        &self,
        prompt_len: usize,
        general_len: usize,
        patches: usize,
        rng: &mut R,
    ) -> Result<EncoderInput> {
        let d = self.cfg.width;
        let shapes: Vec<_> = self
            .cfg
            .layer_widths
            .iter()
            .map(|&w| (patches, w))
            .collect();
        Ok(EncoderInput {
            prompt: Matrix::uniform(prompt_len, d, 1.0, rng),
            text: Matrix::uniform(self.cfg.num_queries, d, 1.0, rng),
            general_visual: Matrix::uniform(general_len, d, 1.0, rng),
            facial_stack: LayerFeatureStack::random(&shapes, rng)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &EncoderInput,
    ) -> Result<EncoderOutput> {
        let m = self.cfg.num_queries;
        if input.text.rows() != m {
            return Err(Error::shape(
                "encoder(text)",
                input.text.shape(),
                (m, self.cfg.width),
            ));
        }
        let prompt = tape.leaf(input.prompt.clone());
        let facial_dense = self.ca2.forward(tape, store, prompt, &input.facial_stack)?;
        let facial_tokens = self.agg_facial.forward(tape, store, prompt, facial_dense)?;
        let general_in = tape.leaf(input.general_visual.clone());
        let general_tokens = self.agg_general.forward(tape, store, prompt, general_in)?;

        let text = tape.leaf(input.text.clone());
        let score_general = self
            .adapter_general
            .score(tape, store, general_tokens, text)?;
        let score_facial = self
            .adapter_facial
            .score(tape, store, facial_tokens, text)?;
        let (weight_general, weight_facial) = fuse_on_tape(tape, score_general, score_facial)?;
        let fused = fused_visual_on_tape(
            tape,
            general_tokens,
            facial_tokens,
            weight_general,
            weight_facial,
        )?;
        Ok(EncoderOutput {
            fused,
            general_tokens,
            facial_tokens,
            score_general,
            score_facial,
            weight_general,
            weight_facial,
        })
    }
}

/// Checks the gradient of `sum(fused^2)` with respect to every encoder
/// parameter against central differences, on a model and input drawn from
/// `seed`.
pub fn encoder_grad_check(cfg: &EncoderConfig, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let enc = HierarchicalEncoder::new(&mut store, cfg, &mut rng)?;
    let input = enc.random_input(3, 5, 4, &mut rng)?;
    let ids: Vec<_> = store.ids().collect();
    grad_check(&mut store, &ids, tol, |tape, store| {
        let out = enc.forward(tape, store, &input)?;
        Ok(tape.sum_squares(out.fused))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_has_query_rows_and_convex_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc =
            HierarchicalEncoder::new(&mut store, &EncoderConfig::default(), &mut rng).unwrap();
        let input = enc.random_input(5, 11, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let out = enc.forward(&mut tape, &store, &input).unwrap();
        assert_eq!(tape.value(out.fused).shape(), (DEFAULT_QUERIES, 8));
        let s = tape.scalar(out.weight_general) + tape.scalar(out.weight_facial);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(
            store.groups(),
            vec![
                GROUP_ADAPTERS.to_string(),
                GROUP_AGGREGATOR.into(),
                GROUP_ENCODER.into()
            ]
        );
    }

    #[test]
    fn forward_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut store = ParamStore::new();
            let enc =
                HierarchicalEncoder::new(&mut store, &EncoderConfig::default(), &mut rng).unwrap();
            let input = enc.random_input(3, 6, 2, &mut rng).unwrap();
            let mut tape = Tape::new();
            let out = enc.forward(&mut tape, &store, &input).unwrap();
            tape.value(out.fused).clone().into_vec()
        };
        let (a, b) = (build(), build());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn end_to_end_gradient_matches_differences() {
        let cfg = EncoderConfig {
            width: 4,
            layer_widths: vec![3, 5],
            num_queries: 2,
            adapter_hidden: 4,
            shared_kv: false,
        };
        let report = encoder_grad_check(&cfg, 3, 1e-4).unwrap();
        assert!(report.passed(), "{report}");
    }
}

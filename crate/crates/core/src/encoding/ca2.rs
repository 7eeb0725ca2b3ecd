//! Progressive cross-attention over the outputs of successive encoder blocks.
//!
//! Each block's features are first projected into a shared width `D`. The
//! first step attends from the projected text prompt; every later step uses
//! the previous step's output directly as its query.

use rand::Rng;

use super::attention::{cross_attention, AttentionParams};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

/// Per-block feature matrices. Block `i` is `P_i x D_i`; any temporal axis is
/// flattened into rows.
#[derive(Clone, Debug)]
pub struct LayerFeatureStack {
    layers: Vec<Matrix>,
}

impl LayerFeatureStack {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("layer feature stack is empty".into()));
        }
        if let Some(m) = layers.iter().find(|m| m.rows() == 0 || m.cols() == 0) {
            return Err(Error::Contract(format!(
                "layer features must be non-empty, got {:?}",
                m.shape()
            )));
        }
        Ok(Self { layers })
    }

    /// Random stack with the given `(P_i, D_i)` shapes.
    pub fn random<R: Rng + ?Sized>(shapes: &[(usize, usize)], rng: &mut R) -> Result<Self> {
        Self::new(
            shapes
                .iter()
                .map(|&(p, d)| Matrix::uniform(p, d, 1.0, rng))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, i: usize) -> Result<&Matrix> {
        self.layers.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.layers.len(),
        })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }
}

#[derive(Clone, Debug)]
pub struct Ca2Config {
    /// `D_i` for each block, in order.
    pub layer_widths: Vec<usize>,
    pub text_width: usize,
    pub shared_dim: usize,
    /// One `W_K`/`W_V` pair for every step instead of one per step.
    pub shared_kv: bool,
}

#[derive(Clone, Debug)]
pub struct Ca2Chain {
    projections: Vec<ParamId>,
    steps: Vec<AttentionParams>,
    shared_dim: usize,
}

impl Ca2Chain {
    /// Registers the chain's parameters under `prefix` (e.g. `"encoder"`).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &Ca2Config,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.layer_widths.is_empty() {
            return Err(Error::Contract("chain needs at least one block".into()));
        }
        let d = cfg.shared_dim;
        let mut projections = Vec::with_capacity(cfg.layer_widths.len());
        for (i, &w) in cfg.layer_widths.iter().enumerate() {
            projections.push(store.add_xavier(format!("{prefix}.proj.{i}"), w, d, rng)?);
        }
        let wq = store.add_xavier(format!("{prefix}.wq"), cfg.text_width, d, rng)?;
        let mut steps = Vec::with_capacity(cfg.layer_widths.len());
        if cfg.shared_kv {
            let key = store.add_xavier(format!("{prefix}.wk"), d, d, rng)?;
            let value = store.add_xavier(format!("{prefix}.wv"), d, d, rng)?;
            for i in 0..cfg.layer_widths.len() {
                steps.push(AttentionParams {
                    query: (i == 0).then_some(wq),
                    key,
                    value,
                });
            }
        } else {
            for i in 0..cfg.layer_widths.len() {
                steps.push(AttentionParams {
                    query: (i == 0).then_some(wq),
                    key: store.add_xavier(format!("{prefix}.wk.{i}"), d, d, rng)?,
                    value: store.add_xavier(format!("{prefix}.wv.{i}"), d, d, rng)?,
                });
            }
        }
        Ok(Self {
            projections,
            steps,
            shared_dim: d,
        })
    }

    pub fn shared_dim(&self) -> usize {
        self.shared_dim
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn projection(&self, i: usize) -> ParamId {
        self.projections[i]
    }

    pub fn step(&self, i: usize) -> &AttentionParams {
        &self.steps[i]
    }

    /// Block `i` (0-based) projected into the shared width: `f_i W_i`, no bias.
    pub fn project_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        stack: &LayerFeatureStack,
        i: usize,
    ) -> Result<Var> {
        if i >= self.projections.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.projections.len(),
            });
        }
        let f = tape.leaf(stack.layer(i)?.clone());
        let w = tape.param(store, self.projections[i]);
        tape.matmul(f, w)
    }

    /// Runs every step and returns the last output, one row per prompt row.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prompt: Var,
        stack: &LayerFeatureStack,
    ) -> Result<Var> {
        if stack.len() != self.steps.len() {
            return Err(Error::Contract(format!(
                "chain has {} steps but the stack has {} blocks",
                self.steps.len(),
                stack.len()
            )));
        }
        let mut query = prompt;
        for (i, step) in self.steps.iter().enumerate() {
            let projected = self.project_layer(tape, store, stack, i)?;
            query = cross_attention(tape, store, query, projected, step)?;
        }
        Ok(query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(widths: &[usize], text: usize, d: usize, seed: u64) -> (ParamStore, Ca2Chain) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = Ca2Config {
            layer_widths: widths.to_vec(),
            text_width: text,
            shared_dim: d,
            shared_kv: false,
        };
        let c = Ca2Chain::new(&mut store, "encoder", &cfg, &mut rng).unwrap();
        (store, c)
    }

    #[test]
    fn identity_projection_passes_features_through() {
        let (mut store, c) = chain(&[4], 4, 4, 1);
        *store.value_mut(c.projection(0)) = Matrix::identity(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stack = LayerFeatureStack::random(&[(3, 4)], &mut rng).unwrap();
        let mut tape = Tape::new();
        let out = c.project_layer(&mut tape, &store, &stack, 0).unwrap();
        assert_eq!(tape.value(out), stack.layer(0).unwrap());
    }

    #[test]
    fn zero_features_project_to_zero() {
        let (store, c) = chain(&[5], 4, 6, 1);
        let stack = LayerFeatureStack::new(vec![Matrix::zeros(2, 5)]).unwrap();
        let mut tape = Tape::new();
        let out = c.project_layer(&mut tape, &store, &stack, 0).unwrap();
        assert_eq!(tape.value(out).max_abs(), 0.0);
    }

    #[test]
    fn projection_matches_plain_matmul() {
        let (store, c) = chain(&[4], 4, 6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let stack = LayerFeatureStack::random(&[(3, 4)], &mut rng).unwrap();
        let mut tape = Tape::new();
        let out = c.project_layer(&mut tape, &store, &stack, 0).unwrap();
        let expected = stack
            .layer(0)
            .unwrap()
            .matmul(store.value(c.projection(0)))
            .unwrap();
        assert_eq!(tape.value(out), &expected);
    }

    #[test]
    fn out_of_range_block() {
        let (store, c) = chain(&[4, 4], 4, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stack = LayerFeatureStack::random(&[(3, 4), (2, 4)], &mut rng).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            c.project_layer(&mut tape, &store, &stack, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn empty_stack_rejected() {
        assert!(LayerFeatureStack::new(vec![]).is_err());
    }

    #[test]
    fn zero_value_projections_give_zero_output() {
        let (mut store, c) = chain(&[3, 5, 4], 6, 4, 4);
        for i in 0..3 {
            *store.value_mut(c.step(i).value) = Matrix::zeros(4, 4);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stack = LayerFeatureStack::random(&[(2, 3), (4, 5), (3, 4)], &mut rng).unwrap();
        let mut tape = Tape::new();
        let p = tape.leaf(Matrix::uniform(3, 6, 1.0, &mut rng));
        let out = c.forward(&mut tape, &store, p, &stack).unwrap();
        assert_eq!(tape.value(out).max_abs(), 0.0);
    }

    #[test]
    fn shared_kv_registers_one_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cfg = Ca2Config {
            layer_widths: vec![3, 3, 3],
            text_width: 3,
            shared_dim: 4,
            shared_kv: true,
        };
        let c = Ca2Chain::new(&mut store, "encoder", &cfg, &mut rng).unwrap();
        // 3 projections + wq + wk + wv
        assert_eq!(store.len(), 6);
        assert_eq!(c.step(0).key, c.step(2).key);
        assert!(c.step(0).query.is_some() && c.step(1).query.is_none());
    }
}

use rand::Rng;

use super::attention::{cross_attention, AttentionParams};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Var};

/// Default number of learnable query rows.
pub const DEFAULT_QUERIES: usize = 8;

/// `M` learnable query rows that cross-attend over visual tokens.
///
/// The queries are conditioned on the prompt by adding its mean-pooled row to
/// each of them before a single attention block. Output is always `M x D`.
#[derive(Clone, Debug)]
pub struct QueryAggregator {
    queries: ParamId,
    attn: AttentionParams,
    num_queries: usize,
    width: usize,
}

impl QueryAggregator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        num_queries: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_queries == 0 {
            return Err(Error::Contract(
                "aggregator needs at least one query".into(),
            ));
        }
        let queries = store.add_xavier(format!("{prefix}.queries"), num_queries, width, rng)?;
        let attn = AttentionParams {
            query: Some(store.add_xavier(format!("{prefix}.wq"), width, width, rng)?),
            key: store.add_xavier(format!("{prefix}.wk"), width, width, rng)?,
            value: store.add_xavier(format!("{prefix}.wv"), width, width, rng)?,
        };
        Ok(Self {
            queries,
            attn,
            num_queries,
            width,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn queries(&self) -> ParamId {
        self.queries
    }

    pub fn attention(&self) -> &AttentionParams {
        &self.attn
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prompt: Var,
        visual: Var,
    ) -> Result<Var> {
        let ps = tape.value(prompt).shape();
        if ps.1 != self.width {
            return Err(Error::shape(
                "qformer(prompt)",
                ps,
                (self.num_queries, self.width),
            ));
        }
        if tape.value(visual).rows() == 0 {
            return Err(Error::Contract("no visual tokens".into()));
        }
        let q = tape.param(store, self.queries);
        let pooled = tape.mean_pool_rows(prompt);
        let conditioned = tape.add_row(q, pooled)?;
        cross_attention(tape, store, conditioned, visual, &self.attn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{row_softmax, Matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agg(m: usize, d: usize, seed: u64) -> (ParamStore, QueryAggregator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = QueryAggregator::new(&mut store, "aggregator.test", m, d, &mut rng).unwrap();
        (store, a)
    }

    #[test]
    fn single_query_single_token() {
        let (store, a) = agg(1, 4, 3);
        let vis = Matrix::row_vector(&[0.5, -1.0, 0.25, 2.0]);
        let mut tape = Tape::new();
        let p = tape.leaf(Matrix::from_rows(&[vec![1.0; 4], vec![-2.0; 4]]).unwrap());
        let v = tape.leaf(vis.clone());
        let out = a.forward(&mut tape, &store, p, v).unwrap();
        let expected = vis.matmul(store.value(a.attention().value)).unwrap();
        assert_eq!(tape.value(out).shape(), (1, 4));
        for (x, y) in tape.value(out).as_slice().iter().zip(expected.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_prompt_leaves_only_learnable_queries() {
        let (store, a) = agg(3, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vis = Matrix::uniform(5, 4, 1.0, &mut rng);
        let run = |prompt: Matrix| {
            let mut tape = Tape::new();
            let p = tape.leaf(prompt);
            let v = tape.leaf(vis.clone());
            let out = a.forward(&mut tape, &store, p, v).unwrap();
            tape.value(out).clone()
        };
        // different zero prompts, same result
        assert_eq!(run(Matrix::zeros(1, 4)), run(Matrix::zeros(7, 4)));
        // a non-zero prompt changes the output
        assert_ne!(run(Matrix::zeros(1, 4)), run(Matrix::filled(1, 4, 0.3)));
    }

    #[test]
    fn matches_procedural_recomputation() {
        let (store, a) = agg(4, 6, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let prompt = Matrix::uniform(3, 6, 1.0, &mut rng);
        let vis = Matrix::uniform(8, 6, 1.0, &mut rng);
        let mut tape = Tape::new();
        let p = tape.leaf(prompt.clone());
        let v = tape.leaf(vis.clone());
        let out = a.forward(&mut tape, &store, p, v).unwrap();
        assert_eq!(tape.value(out).shape(), (4, 6));

        // step 1: queries + mean prompt row
        let mut q = store.value(a.queries()).clone();
        for c in 0..6 {
            let mean = (0..3).map(|r| prompt[(r, c)]).sum::<f64>() / 3.0;
            for r in 0..4 {
                q[(r, c)] += mean;
            }
        }
        // step 2: projections and scaled scores
        let qq = q.matmul(store.value(a.attention().query.unwrap())).unwrap();
        let kk = vis.matmul(store.value(a.attention().key)).unwrap();
        let vv = vis.matmul(store.value(a.attention().value)).unwrap();
        let s = qq.matmul(&kk.transpose()).unwrap().scale(1.0 / 6f64.sqrt());
        // step 3: weighted sum
        let expected = row_softmax(&s).matmul(&vv).unwrap();
        for (x, y) in tape.value(out).as_slice().iter().zip(expected.as_slice()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn prompt_width_must_match() {
        let (store, a) = agg(2, 4, 1);
        let mut tape = Tape::new();
        let p = tape.leaf(Matrix::zeros(1, 3));
        let v = tape.leaf(Matrix::zeros(2, 4));
        assert!(a.forward(&mut tape, &store, p, v).is_err());
    }
}

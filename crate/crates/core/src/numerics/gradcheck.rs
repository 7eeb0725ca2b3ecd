//! Central finite-difference audit of tape gradients.

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which errors are measured in absolute rather than relative
/// terms. Entries whose true derivative is ~0 would otherwise compare pure
/// round-off against round-off.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "  {:<32} entries={:<5} max_rel_err={:.3e}",
                t.name, t.entries, t.max_rel_error
            )?;
        }
        write!(
            f,
            "  => {} (max {:.3e}, tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tol
        )
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences for every entry of every tensor in `params`.
///
/// `f` is re-run from scratch on a fresh tape for each perturbation; it must
/// read parameters only through the store it is handed.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    tol: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    store.zero_grad();
    tape.accumulate(&grads, store);

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = f(&mut t, store)?;
        if t.value(v).shape() != (1, 1) {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        Ok(t.scalar(v))
    };

    let mut tensors = Vec::with_capacity(params.len());
    for &id in params {
        let analytic = store.get(id).grad.clone();
        let n = analytic.len();
        let mut worst = 0.0_f64;
        for k in 0..n {
            let orig = store.value(id).as_slice()[k];
            store.value_mut(id).as_mut_slice()[k] = orig + FD_STEP;
            let plus = eval(store)?;
            store.value_mut(id).as_mut_slice()[k] = orig - FD_STEP;
            let minus = eval(store)?;
            store.value_mut(id).as_mut_slice()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.as_slice()[k], numeric));
        }
        tensors.push(TensorCheck {
            name: store.get(id).name().to_string(),
            max_rel_error: worst,
            entries: n,
        });
    }
    store.zero_grad();
    Ok(GradCheckReport { tensors, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&store, w);
        let y = tape.sum_squares(v);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(v).unwrap()[(0, 0)], 6.0);

        let report = grad_check(&mut store, &[w], 1e-8, |t, s| {
            let v = t.param(s, w);
            Ok(t.sum_squares(v))
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut store = ParamStore::new();
        let x = store
            .add("x", Matrix::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&store, x);
        let s = tape.row_softmax(v);
        let y = tape.sum(s);
        let g = tape.backward(y).unwrap();
        assert!(g.get(v).unwrap().max_abs() < 1e-15);

        let report = grad_check(&mut store, &[x], 1e-4, |t, s| {
            let v = t.param(s, x);
            let sm = t.row_softmax(v);
            Ok(t.sum(sm))
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn non_scalar_is_a_contract_error() {
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::zeros(2, 2)).unwrap();
        let err = grad_check(&mut store, &[x], 1e-4, |t, s| Ok(t.param(s, x))).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}

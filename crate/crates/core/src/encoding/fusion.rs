use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Convex mixing weights for the general and facial streams.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionWeights {
    pub general: f64,
    pub facial: f64,
}

/// Two-way softmax of the adapter scores.
///
/// The smaller weight is computed in closed form and the larger one as its
/// complement, so the pair sums to exactly 1.
pub fn fuse(s_general: f64, s_facial: f64) -> FusionWeights {
    let d = s_facial - s_general;
    if d <= 0.0 {
        let e = d.exp();
        let facial = e / (1.0 + e);
        FusionWeights {
            general: 1.0 - facial,
            facial,
        }
    } else {
        let e = (-d).exp();
        let general = e / (1.0 + e);
        FusionWeights {
            general,
            facial: 1.0 - general,
        }
    }
}

/// `w_general * v_general + w_facial * v_facial`.
pub fn fused_visual(v_general: &Matrix, v_facial: &Matrix, w: FusionWeights) -> Result<Matrix> {
    if v_general.shape() != v_facial.shape() {
        return Err(Error::shape(
            "fused_visual",
            v_general.shape(),
            v_facial.shape(),
        ));
    }
    v_general.zip_map(v_facial, |g, f| w.general * g + w.facial * f)
}

/// Differentiable counterpart of [`fuse`]: returns the two 1x1 weights.
pub fn fuse_on_tape(tape: &mut Tape, s_general: Var, s_facial: Var) -> Result<(Var, Var)> {
    let both = tape.hcat(s_general, s_facial)?;
    let w = tape.row_softmax(both);
    Ok((tape.select(w, 0, 0)?, tape.select(w, 0, 1)?))
}

/// Differentiable counterpart of [`fused_visual`].
pub fn fused_visual_on_tape(
    tape: &mut Tape,
    v_general: Var,
    v_facial: Var,
    w_general: Var,
    w_facial: Var,
) -> Result<Var> {
    let (gs, fs) = (tape.value(v_general).shape(), tape.value(v_facial).shape());
    if gs != fs {
        return Err(Error::shape("fused_visual", gs, fs));
    }
    let a = tape.scale_by(v_general, w_general)?;
    let b = tape.scale_by(v_facial, w_facial)?;
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_scores_split_evenly() {
        assert_eq!(
            fuse(0.3, 0.3),
            FusionWeights {
                general: 0.5,
                facial: 0.5
            }
        );
    }

    #[test]
    fn unit_gap() {
        let e = std::f64::consts::E;
        let w = fuse(1.0, 0.0);
        assert!((w.general - e / (e + 1.0)).abs() < 1e-15);
        assert!((w.facial - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn large_gap_selects_general_stream() {
        let vg = Matrix::filled(2, 3, 1.5);
        let vf = Matrix::filled(2, 3, -4.0);
        let out = fused_visual(&vg, &vf, fuse(50.0, 0.0)).unwrap();
        for (a, b) in out.as_slice().iter().zip(vg.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_streams_are_a_fixed_point() {
        let v = Matrix::from_rows(&[vec![0.1, -2.0], vec![3.0, 4.5]]).unwrap();
        for (sg, sf) in [(0.0, 0.0), (3.0, -1.0), (-7.0, 2.0)] {
            let out = fused_visual(&v, &v, fuse(sg, sf)).unwrap();
            for (a, b) in out.as_slice().iter().zip(v.as_slice()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quarter_weights() {
        let w = FusionWeights {
            general: 0.25,
            facial: 0.75,
        };
        let out = fused_visual(&Matrix::filled(2, 2, 1.0), &Matrix::filled(2, 2, 3.0), w).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn shape_mismatch() {
        let w = fuse(0.0, 0.0);
        assert!(fused_visual(&Matrix::zeros(2, 2), &Matrix::zeros(3, 2), w).is_err());
    }

    #[test]
    fn tape_matches_closed_form() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::scalar(0.8));
        let b = tape.leaf(Matrix::scalar(-0.4));
        let (wg, wf) = fuse_on_tape(&mut tape, a, b).unwrap();
        let w = fuse(0.8, -0.4);
        assert!((tape.scalar(wg) - w.general).abs() < 1e-15);
        assert!((tape.scalar(wf) - w.facial).abs() < 1e-15);
    }

    proptest! {
        // beyond a gap of ~36 the larger weight rounds to exactly 1.0
        #[test]
        fn weights_on_simplex(sg in -15.0f64..15.0, sf in -15.0f64..15.0) {
            let w = fuse(sg, sf);
            prop_assert_eq!(w.general + w.facial, 1.0);
            prop_assert!(w.general > 0.0 && w.general < 1.0);
            prop_assert!(w.facial > 0.0 && w.facial < 1.0);
        }

        #[test]
        fn shift_invariant(sg in -20.0f64..20.0, sf in -20.0f64..20.0, c in -50.0f64..50.0) {
            let a = fuse(sg, sf);
            let b = fuse(sg + c, sf + c);
            prop_assert!((a.general - b.general).abs() < 1e-12);
            prop_assert!((a.facial - b.facial).abs() < 1e-12);
        }
    }
}

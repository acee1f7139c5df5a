//! Probe fusion and scoring: cross-attention from the pooled image feature
//! to the probe token states, residual added, then cosine similarity.

use crate::array::{Array, Real};
use crate::error::{Error, Result};
use crate::nn::{AttnOpts, Mha};
use crate::ops;
use crate::params::ParamSet;
use crate::tape::Var;
use rand::Rng;

/// Cross-attention block fusing probe information into the image feature.
/// The output projection starts at zero so fusion is initially the identity
/// on its residual path.
pub struct ProbeFusion {
    pub mhca: Mha,
}

impl ProbeFusion {
    pub fn new(ps: &mut ParamSet, dim: usize, heads: usize, rng: &mut impl Rng) -> ProbeFusion {
        ProbeFusion {
            mhca: Mha::with_out_init(ps, "fuse", dim, heads, true, rng),
        }
    }

    /// f_attn (1 x E) attends over the probe token states (L x dim) and the
    /// result is added back onto f_attn.
    pub fn fuse<'t>(
        &self,
        ps: &ParamSet,
        f_attn: Var<'t>,
        probe_tokens: Var<'t>,
    ) -> Result<Var<'t>> {
        if probe_tokens.dims()[0] == 0 {
            return Err(Error::InvalidArgument("probe token sequence is empty".into()));
        }
        let attended = self.mhca.attend(ps, f_attn, probe_tokens, AttnOpts::default());
        Ok(ops::add(attended, f_attn))
    }
}

/// Cosine similarity of two nonzero vectors, in [-1, 1].
pub fn similarity(a: &Array, b: &Array) -> Result<Real> {
    if a.numel() != b.numel() {
        return Err(Error::ShapeMismatch {
            op: "similarity",
            detail: format!("{} vs {} elements", a.numel(), b.numel()),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na < 1e-12 || nb < 1e-12 {
        return Err(Error::InvalidArgument(
            "similarity of a zero vector is undefined".into(),
        ));
    }
    Ok(a.dot(b) / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use crate::rng;
    use crate::tape::Tape;

    #[test]
    fn zero_output_projection_is_identity() {
        let mut ps = ParamSet::new();
        let fuse = ProbeFusion::new(&mut ps, 8, 2, &mut rng::seeded(1));
        let tape = Tape::new();
        let f = tape.constant(Array::randn(&[1, 8], 0.0, 1.0, &mut rng::seeded(2)));
        let probe = tape.constant(Array::randn(&[5, 8], 0.0, 1.0, &mut rng::seeded(3)));
        let out = fuse.fuse(&ps, f, probe).unwrap().value();
        assert_eq!(out.data(), f.value().data());
    }

    #[test]
    fn single_probe_token_bypasses_the_query() {
        // One key: softmax weight is 1 regardless of the query, so the
        // attention term is out(v(token)) for any f_attn.
        let mut ps = ParamSet::new();
        let mut r = rng::seeded(4);
        let fuse = ProbeFusion::new(&mut ps, 8, 2, &mut r);
        // Give the zero-initialized output projection real weights so the
        // attention term is visible.
        ps.set_value(
            fuse.mhca.out.w,
            Array::randn(&[8, 8], 0.0, 0.5, &mut r),
        );
        let tape = Tape::new();
        let token = tape.constant(Array::randn(&[1, 8], 0.0, 1.0, &mut r));
        let fa = tape.constant(Array::randn(&[1, 8], 0.0, 1.0, &mut r));
        let fb = tape.constant(Array::randn(&[1, 8], 0.0, 1.0, &mut r));
        let outa = fuse.fuse(&ps, fa, token).unwrap().value();
        let outb = fuse.fuse(&ps, fb, token).unwrap().value();

        let expect = fuse.mhca.value_out_path(&ps, token).value();
        for i in 0..8 {
            let terma = outa.data()[i] - fa.value().data()[i];
            let termb = outb.data()[i] - fb.value().data()[i];
            assert!((terma - expect.data()[i]).abs() < 1e-12);
            assert!((termb - expect.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_probe_rejected() {
        let mut ps = ParamSet::new();
        let fuse = ProbeFusion::new(&mut ps, 8, 2, &mut rng::seeded(5));
        let tape = Tape::new();
        let f = tape.constant(Array::randn(&[1, 8], 0.0, 1.0, &mut rng::seeded(6)));
        let probe = tape.constant(Array::zeros(&[0, 8]));
        assert!(fuse.fuse(&ps, f, probe).is_err());
    }

    #[test]
    fn fusion_gradients_flow_through_both_inputs() {
        let mut ps = ParamSet::new();
        let mut r = rng::seeded(7);
        let fuse = ProbeFusion::new(&mut ps, 8, 2, &mut r);
        ps.set_value(fuse.mhca.out.w, Array::randn(&[8, 8], 0.0, 0.5, &mut r));
        let fa = ps.add("test.f_attn", Array::randn(&[1, 8], 0.0, 1.0, &mut r));
        let pt = ps.add("test.probe", Array::randn(&[4, 8], 0.0, 1.0, &mut r));
        let cfg = GradCheckConfig {
            samples_per_param: 6,
            tolerance: 1e-4,
            ..GradCheckConfig::default()
        };
        let ids = ps.trainable_ids();
        let report = grad_check(&mut ps, &ids, &cfg, |tape, ps| {
            let f = tape.param(ps, fa);
            let probe = tape.param(ps, pt);
            ops::sum_all(fuse.fuse(ps, f, probe).unwrap())
        });
        assert!(report.passed(), "{}", report.summary());

        let tape = Tape::new();
        let out = fuse
            .fuse(&ps, tape.param(&ps, fa), tape.param(&ps, pt))
            .unwrap();
        let grads = tape.backward(ops::sum_all(out));
        assert!(grads.wrt(&ps, fa).data().iter().any(|&g| g != 0.0));
        assert!(grads.wrt(&ps, pt).data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn cosine_basics() {
        let a = Array::from_vec(&[3], vec![1.0, 2.0, 2.0]);
        let same = similarity(&a, &a).unwrap();
        assert!((same - 1.0).abs() < 1e-12);

        let x = Array::from_vec(&[2], vec![1.0, 0.0]);
        let y = Array::from_vec(&[2], vec![0.0, 5.0]);
        assert!(similarity(&x, &y).unwrap().abs() < 1e-12);

        let scaled = a.map(|v| v * 2.0);
        let s1 = similarity(&a, &scaled).unwrap();
        assert!((s1 - 1.0).abs() < 1e-12);

        let b = Array::from_vec(&[3], vec![-0.3, 0.9, 0.1]);
        let ab = similarity(&a, &b).unwrap();
        let ba = similarity(&b, &a).unwrap();
        let a2b = similarity(&a.map(|v| v * 2.0), &b).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((ab - a2b).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn zero_vector_rejected() {
        let a = Array::from_vec(&[2], vec![1.0, 1.0]);
        let z = Array::zeros(&[2]);
        assert!(similarity(&a, &z).is_err());
        assert!(similarity(&z, &a).is_err());
    }
}

//! Network layers as parameter-id bundles. A layer registers its tensors in
//! a [`ParamSet`] once at construction and then applies itself to tape
//! variables; the layer structs themselves hold no values, so checkpoints
//! are purely a property of the parameter set.

use crate::array::{Array, Real};
use crate::ops;
use crate::params::{ParamId, ParamSet};
use crate::tape::Var;
use rand::Rng;

/// Affine map on rows: `y = x W + b`, weights stored (in, out).
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Linear {
        let std = 1.0 / (in_dim as Real).sqrt();
        let w = ps.add(format!("{name}.w"), Array::randn(&[in_dim, out_dim], 0.0, std, rng));
        let b = ps.add(format!("{name}.b"), Array::zeros(&[out_dim]));
        Linear {
            w,
            b: Some(b),
            in_dim,
            out_dim,
        }
    }

    /// All-zero weights and bias; used where training must start at identity
    /// around a residual branch.
    pub fn new_zeroed(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        let w = ps.add(format!("{name}.w"), Array::zeros(&[in_dim, out_dim]));
        let b = ps.add(format!("{name}.b"), Array::zeros(&[out_dim]));
        Linear {
            w,
            b: Some(b),
            in_dim,
            out_dim,
        }
    }

    pub fn new_no_bias(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Linear {
        let std = 1.0 / (in_dim as Real).sqrt();
        let w = ps.add(format!("{name}.w"), Array::randn(&[in_dim, out_dim], 0.0, std, rng));
        Linear {
            w,
            b: None,
            in_dim,
            out_dim,
        }
    }

    /// Rebind to parameters registered by a previous construction.
    pub fn lookup(ps: &ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        let w = ps
            .lookup(&format!("{name}.w"))
            .unwrap_or_else(|| panic!("missing parameter {name}.w"));
        Linear {
            w,
            b: ps.lookup(&format!("{name}.b")),
            in_dim,
            out_dim,
        }
    }

    pub fn apply<'t>(&self, ps: &ParamSet, x: Var<'t>) -> Var<'t> {
        let tape = x.tape();
        let y = ops::matmul(x, tape.param(ps, self.w));
        match self.b {
            Some(b) => ops::add_bias(y, tape.param(ps, b)),
            None => y,
        }
    }
}

pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: Real,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: ps.add(format!("{name}.g"), Array::filled(&[dim], 1.0)),
            beta: ps.add(format!("{name}.b"), Array::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn apply<'t>(&self, ps: &ParamSet, x: Var<'t>) -> Var<'t> {
        let tape = x.tape();
        ops::layer_norm(x, tape.param(ps, self.gamma), tape.param(ps, self.beta), self.eps)
    }
}

/// Options for one attention application.
#[derive(Default)]
pub struct AttnOpts<'a, 't> {
    /// Additive logit mask, shape (n_q, n_kv); `-1e4` entries knock keys out
    /// (exactly, since `exp(-1e4)` underflows to zero).
    pub logit_bias: Option<&'a Array>,
    /// Per-key scale applied to value vectors after the value projection.
    pub value_scale: Option<Var<'t>>,
}

/// Multi-head attention with learned Q/K/V/output projections.
///
/// Acts on row-major token matrices (tokens x dim). Queries and keys/values
/// may be different sequences (cross-attention).
pub struct Mha {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Mha {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Mha {
        Self::with_out_init(ps, name, dim, heads, false, rng)
    }

    /// `zero_out` zero-initializes the output projection, making the layer's
    /// initial output exactly zero (residual-identity start).
    pub fn with_out_init(
        ps: &mut ParamSet,
        name: &str,
        dim: usize,
        heads: usize,
        zero_out: bool,
        rng: &mut impl Rng,
    ) -> Mha {
        assert!(heads >= 1 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        let q = Linear::new(ps, &format!("{name}.q"), dim, dim, rng);
        let k = Linear::new(ps, &format!("{name}.k"), dim, dim, rng);
        let v = Linear::new(ps, &format!("{name}.v"), dim, dim, rng);
        let out = if zero_out {
            Linear::new_zeroed(ps, &format!("{name}.o"), dim, dim)
        } else {
            Linear::new(ps, &format!("{name}.o"), dim, dim, rng)
        };
        Mha {
            q,
            k,
            v,
            out,
            heads,
            dim,
        }
    }

    /// Value projection then output projection, applied per row with no
    /// attention mixing. Shared by the localization branch, which reads the
    /// pooling layer's value/output maps at every spatial location.
    pub fn value_out_path<'t>(&self, ps: &ParamSet, x: Var<'t>) -> Var<'t> {
        self.out.apply(ps, self.v.apply(ps, x))
    }

    pub fn attend<'t>(
        &self,
        ps: &ParamSet,
        queries: Var<'t>,
        keys_values: Var<'t>,
        opts: AttnOpts<'_, 't>,
    ) -> Var<'t> {
        let tape = queries.tape();
        let qp = self.q.apply(ps, queries);
        let kp = self.k.apply(ps, keys_values);
        let mut vp = self.v.apply(ps, keys_values);
        if let Some(scale) = opts.value_scale {
            vp = ops::scale_rows(vp, scale);
        }

        let dh = self.dim / self.heads;
        let inv_sqrt = 1.0 / (dh as Real).sqrt();
        let bias = opts.logit_bias.map(|m| tape.constant(m.clone()));

        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ops::slice_cols(qp, h * dh, dh);
            let kh = ops::slice_cols(kp, h * dh, dh);
            let vh = ops::slice_cols(vp, h * dh, dh);
            let mut logits = ops::mul_scalar(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
            if let Some(b) = bias {
                logits = ops::add(logits, b);
            }
            let weights = ops::softmax_rows(logits);
            head_outs.push(ops::matmul(weights, vh));
        }
        let merged = ops::concat_cols(&head_outs);
        self.out.apply(ps, merged)
    }
}

/// Strided conv + GELU, one backbone stage.
pub struct ConvBlock {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvBlock {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> ConvBlock {
        let fan_in = (c_in * ksize * ksize) as Real;
        let std = (2.0 / fan_in).sqrt();
        ConvBlock {
            w: ps.add(
                format!("{name}.w"),
                Array::randn(&[c_out, c_in, ksize, ksize], 0.0, std, rng),
            ),
            b: ps.add(format!("{name}.b"), Array::zeros(&[c_out])),
            stride,
            pad,
        }
    }

    pub fn apply<'t>(&self, ps: &ParamSet, x: Var<'t>) -> Var<'t> {
        let tape = x.tape();
        let y = ops::conv2d(x, tape.param(ps, self.w), tape.param(ps, self.b), self.stride, self.pad);
        ops::gelu(y)
    }
}

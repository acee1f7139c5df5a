//! Differentiable operations on [`Var`] handles.
//!
//! Each op computes its forward value eagerly and records one VJP closure
//! per parent. Closures capture the `Rc` forward values they need, so the
//! backward pass never recomputes activations.
//!
//! Shape errors here are programmer errors (graph structure is fixed by the
//! model configuration), so ops panic with a descriptive message instead of
//! returning `Result`.

use crate::array::{self, Array, ConvGeom, Real};
use crate::tape::{Var, VjpFn};
use std::rc::Rc;

fn unary<'t>(a: Var<'t>, value: Array, vjp: impl Fn(&Array) -> Array + 'static) -> Var<'t> {
    a.tape().record(value, vec![(a.id(), Box::new(vjp) as VjpFn)])
}

fn binary<'t>(
    a: Var<'t>,
    b: Var<'t>,
    value: Array,
    vjp_a: impl Fn(&Array) -> Array + 'static,
    vjp_b: impl Fn(&Array) -> Array + 'static,
) -> Var<'t> {
    assert!(a.same_tape(&b), "operands recorded on different tapes");
    a.tape().record(
        value,
        vec![
            (a.id(), Box::new(vjp_a) as VjpFn),
            (b.id(), Box::new(vjp_b) as VjpFn),
        ],
    )
}

// ---- elementwise arithmetic ----

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let (av, bv) = (a.value(), b.value());
    let value = av.zip_map(&bv, |x, y| x + y);
    binary(a, b, value, |g| g.clone(), |g| g.clone())
}

pub fn sub<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let (av, bv) = (a.value(), b.value());
    let value = av.zip_map(&bv, |x, y| x - y);
    binary(a, b, value, |g| g.clone(), |g| g.map(|v| -v))
}

pub fn mul<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let (av, bv) = (a.value(), b.value());
    let value = av.zip_map(&bv, |x, y| x * y);
    let (ac, bc) = (Rc::clone(&av), Rc::clone(&bv));
    binary(
        a,
        b,
        value,
        move |g| g.zip_map(&bc, |gv, y| gv * y),
        move |g| g.zip_map(&ac, |gv, x| gv * x),
    )
}

pub fn neg(a: Var<'_>) -> Var<'_> {
    let value = a.value().map(|x| -x);
    unary(a, value, |g| g.map(|v| -v))
}

pub fn add_scalar(a: Var<'_>, c: Real) -> Var<'_> {
    let value = a.value().map(|x| x + c);
    unary(a, value, |g| g.clone())
}

pub fn mul_scalar(a: Var<'_>, c: Real) -> Var<'_> {
    let value = a.value().map(|x| x * c);
    unary(a, value, move |g| g.map(|v| v * c))
}

/// `c - a`.
pub fn rsub_scalar(a: Var<'_>, c: Real) -> Var<'_> {
    let value = a.value().map(|x| c - x);
    unary(a, value, |g| g.map(|v| -v))
}

pub fn recip(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    let value = av.map(|x| 1.0 / x);
    unary(a, value, move |g| g.zip_map(&av, |gv, x| -gv / (x * x)))
}

// ---- elementwise nonlinearities ----

pub fn exp(a: Var<'_>) -> Var<'_> {
    let value = a.value().map(Real::exp);
    let y = Rc::new(value.clone());
    unary(a, value, move |g| g.zip_map(&y, |gv, yv| gv * yv))
}

pub fn ln(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    let value = av.map(Real::ln);
    unary(a, value, move |g| g.zip_map(&av, |gv, x| gv / x))
}

pub fn sigmoid(a: Var<'_>) -> Var<'_> {
    let value = a.value().map(|x| 1.0 / (1.0 + (-x).exp()));
    let y = Rc::new(value.clone());
    unary(a, value, move |g| {
        g.zip_map(&y, |gv, yv| gv * yv * (1.0 - yv))
    })
}

pub fn relu(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    let value = av.map(|x| x.max(0.0));
    unary(a, value, move |g| {
        g.zip_map(&av, |gv, x| if x > 0.0 { gv } else { 0.0 })
    })
}

const GELU_C: Real = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: Real = 0.044715;

fn gelu_scalar(x: Real) -> Real {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: Real) -> Real {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Smooth GELU (tanh form). Used everywhere a kink would break
/// finite-difference verification.
pub fn gelu(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    let value = av.map(gelu_scalar);
    unary(a, value, move |g| {
        g.zip_map(&av, |gv, x| gv * gelu_grad_scalar(x))
    })
}

/// Clamp with pass-through gradient strictly inside `[lo, hi]`.
pub fn clamp(a: Var<'_>, lo: Real, hi: Real) -> Var<'_> {
    assert!(lo < hi, "clamp bounds out of order");
    let av = a.value();
    let value = av.map(|x| x.clamp(lo, hi));
    unary(a, value, move |g| {
        g.zip_map(&av, |gv, x| if x > lo && x < hi { gv } else { 0.0 })
    })
}

// ---- reductions ----

pub fn sum_all(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    let dims = av.dims().to_vec();
    let value = Array::scalar(av.sum());
    unary(a, value, move |g| Array::filled(&dims, g.item()))
}

pub fn mean_all(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    let n = av.numel() as Real;
    let dims = av.dims().to_vec();
    let value = Array::scalar(av.sum() / n);
    unary(a, value, move |g| Array::filled(&dims, g.item() / n))
}

/// Mean of the main diagonal of a square matrix.
pub fn diag_mean(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    assert_eq!(av.ndim(), 2, "diag_mean needs a matrix");
    let n = av.dims()[0];
    assert_eq!(n, av.dims()[1], "diag_mean needs a square matrix");
    let sum: Real = (0..n).map(|i| av.at2(i, i)).sum();
    let value = Array::scalar(sum / n as Real);
    unary(a, value, move |g| {
        let mut out = Array::zeros(&[n, n]);
        let gv = g.item() / n as Real;
        for i in 0..n {
            out.data_mut()[i * n + i] = gv;
        }
        out
    })
}

// ---- matrix ops ----

pub fn matmul<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let (av, bv) = (a.value(), b.value());
    let value = array::matmul(&av, &bv).expect("matmul");
    let (ac, bc) = (Rc::clone(&av), Rc::clone(&bv));
    binary(
        a,
        b,
        value,
        move |g| array::matmul_bt(g, &bc).expect("matmul vjp dA"),
        move |g| array::matmul_at(&ac, g).expect("matmul vjp dB"),
    )
}

pub fn transpose(a: Var<'_>) -> Var<'_> {
    let value = a.value().transpose2();
    unary(a, value, |g| g.transpose2())
}

/// Matrix plus a length-C row vector, broadcast over rows.
pub fn add_bias<'t>(a: Var<'t>, bias: Var<'t>) -> Var<'t> {
    let (av, bv) = (a.value(), bias.value());
    assert_eq!(av.ndim(), 2, "add_bias lhs must be a matrix");
    let (r, c) = (av.dims()[0], av.dims()[1]);
    assert_eq!(bv.numel(), c, "bias length must match columns");
    let mut value = (*av).clone();
    for i in 0..r {
        for j in 0..c {
            value.data_mut()[i * c + j] += bv.data()[j];
        }
    }
    binary(
        a,
        bias,
        value,
        |g| g.clone(),
        move |g| {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += g.data()[i * c + j];
                }
            }
            Array::from_vec(&[c], out)
        },
    )
}

// ---- shape ops ----

pub fn reshape<'t>(a: Var<'t>, dims: &[usize]) -> Var<'t> {
    let av = a.value();
    let old: Vec<usize> = av.dims().to_vec();
    let value = av.reshape(dims);
    unary(a, value, move |g| g.reshape(&old))
}

/// Stack matrices with equal column counts along axis 0.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_rows of nothing");
    let tape = parts[0].tape();
    let values: Vec<Rc<Array>> = parts.iter().map(|p| p.value()).collect();
    let c = values[0].dims()[1];
    let mut data = Vec::new();
    let mut offsets = Vec::with_capacity(parts.len());
    let mut row = 0usize;
    for v in &values {
        assert_eq!(v.ndim(), 2, "concat_rows needs matrices");
        assert_eq!(v.dims()[1], c, "concat_rows column mismatch");
        offsets.push((row, v.dims()[0]));
        row += v.dims()[0];
        data.extend_from_slice(v.data());
    }
    let value = Array::from_vec(&[row, c], data);
    let parents = parts
        .iter()
        .zip(offsets)
        .map(|(p, (start, len))| {
            let vjp = move |g: &Array| {
                let gd = &g.data()[start * c..(start + len) * c];
                Array::from_vec(&[len, c], gd.to_vec())
            };
            (p.id(), Box::new(vjp) as VjpFn)
        })
        .collect();
    tape.record(value, parents)
}

pub fn slice_rows(a: Var<'_>, start: usize, len: usize) -> Var<'_> {
    let av = a.value();
    assert_eq!(av.ndim(), 2, "slice_rows needs a matrix");
    let (r, c) = (av.dims()[0], av.dims()[1]);
    assert!(start + len <= r, "slice_rows out of range");
    let value = Array::from_vec(&[len, c], av.data()[start * c..(start + len) * c].to_vec());
    unary(a, value, move |g| {
        let mut out = Array::zeros(&[r, c]);
        out.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
        out
    })
}

/// Gather rows by index (duplicates allowed). Backward scatter-adds.
pub fn select_rows<'t>(a: Var<'t>, indices: &[usize]) -> Var<'t> {
    let av = a.value();
    assert_eq!(av.ndim(), 2, "select_rows needs a matrix");
    let (r, c) = (av.dims()[0], av.dims()[1]);
    let mut data = Vec::with_capacity(indices.len() * c);
    for &i in indices {
        assert!(i < r, "row index {i} out of range for {r} rows");
        data.extend_from_slice(&av.data()[i * c..(i + 1) * c]);
    }
    let value = Array::from_vec(&[indices.len(), c], data);
    let idx: Vec<usize> = indices.to_vec();
    unary(a, value, move |g| {
        let mut out = Array::zeros(&[r, c]);
        for (k, &i) in idx.iter().enumerate() {
            let gd = &g.data()[k * c..(k + 1) * c];
            let od = &mut out.data_mut()[i * c..(i + 1) * c];
            for (o, &gv) in od.iter_mut().zip(gd) {
                *o += gv;
            }
        }
        out
    })
}

/// Concatenate matrices with equal row counts along axis 1.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_cols of nothing");
    let tape = parts[0].tape();
    let values: Vec<Rc<Array>> = parts.iter().map(|p| p.value()).collect();
    let r = values[0].dims()[0];
    let widths: Vec<usize> = values
        .iter()
        .map(|v| {
            assert_eq!(v.ndim(), 2, "concat_cols needs matrices");
            assert_eq!(v.dims()[0], r, "concat_cols row mismatch");
            v.dims()[1]
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut data = vec![0.0; r * total];
    let mut col = 0usize;
    let mut offsets = Vec::with_capacity(parts.len());
    for (v, &w) in values.iter().zip(&widths) {
        for i in 0..r {
            data[i * total + col..i * total + col + w]
                .copy_from_slice(&v.data()[i * w..(i + 1) * w]);
        }
        offsets.push((col, w));
        col += w;
    }
    let value = Array::from_vec(&[r, total], data);
    let parents = parts
        .iter()
        .zip(offsets)
        .map(|(p, (start, w))| {
            let vjp = move |g: &Array| {
                let mut out = vec![0.0; r * w];
                for i in 0..r {
                    out[i * w..(i + 1) * w]
                        .copy_from_slice(&g.data()[i * total + start..i * total + start + w]);
                }
                Array::from_vec(&[r, w], out)
            };
            (p.id(), Box::new(vjp) as VjpFn)
        })
        .collect();
    tape.record(value, parents)
}

pub fn slice_cols(a: Var<'_>, start: usize, len: usize) -> Var<'_> {
    let av = a.value();
    assert_eq!(av.ndim(), 2, "slice_cols needs a matrix");
    let (r, c) = (av.dims()[0], av.dims()[1]);
    assert!(start + len <= c, "slice_cols out of range");
    let mut data = vec![0.0; r * len];
    for i in 0..r {
        data[i * len..(i + 1) * len]
            .copy_from_slice(&av.data()[i * c + start..i * c + start + len]);
    }
    let value = Array::from_vec(&[r, len], data);
    unary(a, value, move |g| {
        let mut out = Array::zeros(&[r, c]);
        for i in 0..r {
            out.data_mut()[i * c + start..i * c + start + len]
                .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
        }
        out
    })
}

// ---- row-wise normalization ----

fn softmax_row(row: &[Real], out: &mut [Real]) {
    let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - m).exp();
        *o = e;
        z += e;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub fn softmax_rows(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    assert_eq!(av.ndim(), 2, "softmax_rows needs a matrix");
    let (r, c) = (av.dims()[0], av.dims()[1]);
    let mut value = Array::zeros(&[r, c]);
    for i in 0..r {
        softmax_row(
            &av.data()[i * c..(i + 1) * c],
            &mut value.data_mut()[i * c..(i + 1) * c],
        );
    }
    let y = Rc::new(value.clone());
    unary(a, value, move |g| {
        let mut out = Array::zeros(&[r, c]);
        for i in 0..r {
            let yr = &y.data()[i * c..(i + 1) * c];
            let gr = &g.data()[i * c..(i + 1) * c];
            let dot: Real = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
            let or = &mut out.data_mut()[i * c..(i + 1) * c];
            for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
                *o = yv * (gv - dot);
            }
        }
        out
    })
}

pub fn log_softmax_rows(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    assert_eq!(av.ndim(), 2, "log_softmax_rows needs a matrix");
    let (r, c) = (av.dims()[0], av.dims()[1]);
    let mut value = Array::zeros(&[r, c]);
    let mut soft = Array::zeros(&[r, c]);
    for i in 0..r {
        let row = &av.data()[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let z: Real = row.iter().map(|&x| (x - m).exp()).sum();
        let lz = m + z.ln();
        for j in 0..c {
            value.data_mut()[i * c + j] = row[j] - lz;
            soft.data_mut()[i * c + j] = (row[j] - lz).exp();
        }
    }
    let soft = Rc::new(soft);
    unary(a, value, move |g| {
        let mut out = Array::zeros(&[r, c]);
        for i in 0..r {
            let sr = &soft.data()[i * c..(i + 1) * c];
            let gr = &g.data()[i * c..(i + 1) * c];
            let gsum: Real = gr.iter().sum();
            let or = &mut out.data_mut()[i * c..(i + 1) * c];
            for ((o, &sv), &gv) in or.iter_mut().zip(sr).zip(gr) {
                *o = gv - sv * gsum;
            }
        }
        out
    })
}

/// Row-wise layer normalization with learned per-column gain and shift.
pub fn layer_norm<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>, eps: Real) -> Var<'t> {
    let xv = x.value();
    assert_eq!(xv.ndim(), 2, "layer_norm needs a matrix");
    let (r, c) = (xv.dims()[0], xv.dims()[1]);
    let gv = gamma.value();
    let bv = beta.value();
    assert_eq!(gv.numel(), c, "layer_norm gain length");
    assert_eq!(bv.numel(), c, "layer_norm shift length");

    let mut xhat = Array::zeros(&[r, c]);
    let mut inv_std = vec![0.0; r];
    for i in 0..r {
        let row = &xv.data()[i * c..(i + 1) * c];
        let mean: Real = row.iter().sum::<Real>() / c as Real;
        let var: Real = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<Real>() / c as Real;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[i] = is;
        for j in 0..c {
            xhat.data_mut()[i * c + j] = (row[j] - mean) * is;
        }
    }
    let mut value = Array::zeros(&[r, c]);
    for i in 0..r {
        for j in 0..c {
            value.data_mut()[i * c + j] = xhat.data()[i * c + j] * gv.data()[j] + bv.data()[j];
        }
    }

    let xhat = Rc::new(xhat);
    let inv_std = Rc::new(inv_std);

    let xhat_x = Rc::clone(&xhat);
    let inv_std_x = Rc::clone(&inv_std);
    let gamma_x = Rc::clone(&gv);
    let vjp_x = move |g: &Array| {
        let mut out = Array::zeros(&[r, c]);
        for i in 0..r {
            let gr = &g.data()[i * c..(i + 1) * c];
            let xr = &xhat_x.data()[i * c..(i + 1) * c];
            // dxhat = g * gamma; project out mean and xhat component.
            let mut dxhat = vec![0.0; c];
            for j in 0..c {
                dxhat[j] = gr[j] * gamma_x.data()[j];
            }
            let mean_d: Real = dxhat.iter().sum::<Real>() / c as Real;
            let mean_dx: Real = dxhat
                .iter()
                .zip(xr)
                .map(|(&d, &xh)| d * xh)
                .sum::<Real>()
                / c as Real;
            let or = &mut out.data_mut()[i * c..(i + 1) * c];
            for j in 0..c {
                or[j] = inv_std_x[i] * (dxhat[j] - mean_d - xr[j] * mean_dx);
            }
        }
        out
    };

    let xhat_g = Rc::clone(&xhat);
    let vjp_gamma = move |g: &Array| {
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += g.data()[i * c + j] * xhat_g.data()[i * c + j];
            }
        }
        Array::from_vec(&[c], out)
    };

    let vjp_beta = move |g: &Array| {
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += g.data()[i * c + j];
            }
        }
        Array::from_vec(&[c], out)
    };

    assert!(x.same_tape(&gamma) && x.same_tape(&beta));
    x.tape().record(
        value,
        vec![
            (x.id(), Box::new(vjp_x) as VjpFn),
            (gamma.id(), Box::new(vjp_gamma) as VjpFn),
            (beta.id(), Box::new(vjp_beta) as VjpFn),
        ],
    )
}

/// L2-normalize each row: `y = x / sqrt(|x|^2 + eps)`.
pub fn normalize_rows(a: Var<'_>, eps: Real) -> Var<'_> {
    let av = a.value();
    assert_eq!(av.ndim(), 2, "normalize_rows needs a matrix");
    let (r, c) = (av.dims()[0], av.dims()[1]);
    let mut value = Array::zeros(&[r, c]);
    let mut norms = vec![0.0; r];
    for i in 0..r {
        let row = &av.data()[i * c..(i + 1) * c];
        let n = (row.iter().map(|&v| v * v).sum::<Real>() + eps).sqrt();
        norms[i] = n;
        for j in 0..c {
            value.data_mut()[i * c + j] = row[j] / n;
        }
    }
    let norms = Rc::new(norms);
    unary(a, value, move |g| {
        let mut out = Array::zeros(&[r, c]);
        for i in 0..r {
            let xr = &av.data()[i * c..(i + 1) * c];
            let gr = &g.data()[i * c..(i + 1) * c];
            let n = norms[i];
            let gx: Real = gr.iter().zip(xr).map(|(&gv, &xv)| gv * xv).sum();
            let or = &mut out.data_mut()[i * c..(i + 1) * c];
            for j in 0..c {
                or[j] = gr[j] / n - xr[j] * gx / (n * n * n);
            }
        }
        out
    })
}

/// Scale row `r` of a matrix by `s[r]`.
pub fn scale_rows<'t>(a: Var<'t>, s: Var<'t>) -> Var<'t> {
    let (av, sv) = (a.value(), s.value());
    assert_eq!(av.ndim(), 2, "scale_rows needs a matrix");
    let (r, c) = (av.dims()[0], av.dims()[1]);
    assert_eq!(sv.numel(), r, "scale_rows needs one factor per row");
    let mut value = (*av).clone();
    for i in 0..r {
        let f = sv.data()[i];
        for v in &mut value.data_mut()[i * c..(i + 1) * c] {
            *v *= f;
        }
    }
    let (ac, sc) = (Rc::clone(&av), Rc::clone(&sv));
    let sdims: Vec<usize> = sv.dims().to_vec();
    binary(
        a,
        s,
        value,
        move |g| {
            let mut out = g.clone();
            for i in 0..r {
                let f = sc.data()[i];
                for v in &mut out.data_mut()[i * c..(i + 1) * c] {
                    *v *= f;
                }
            }
            out
        },
        move |g| {
            let mut out = vec![0.0; r];
            for i in 0..r {
                let mut s = 0.0;
                for j in 0..c {
                    s += g.data()[i * c + j] * ac.data()[i * c + j];
                }
                out[i] = s;
            }
            Array::from_vec(&sdims, out)
        },
    )
}

/// Multiply a whole array by a 1-element variable.
pub fn scale_by<'t>(a: Var<'t>, s: Var<'t>) -> Var<'t> {
    let (av, sv) = (a.value(), s.value());
    assert_eq!(sv.numel(), 1, "scale_by needs a scalar factor");
    let f = sv.item();
    let value = av.map(|x| x * f);
    let ac = Rc::clone(&av);
    binary(
        a,
        s,
        value,
        move |g| g.map(|v| v * f),
        move |g| Array::scalar(g.dot(&ac)),
    )
}

// ---- convolution ----

/// 2-D convolution over a CxHxW input with an OxCxKhxKw kernel and a
/// per-output-channel bias. Lowered to one GEMM via im2col; the unfolded
/// patch matrix is kept for the backward pass.
pub fn conv2d<'t>(x: Var<'t>, kernel: Var<'t>, bias: Var<'t>, stride: usize, pad: usize) -> Var<'t> {
    let xv = x.value();
    let kv = kernel.value();
    let bv = bias.value();
    let g = ConvGeom::new(&xv, &kv, stride, pad).expect("conv2d geometry");
    let o = kv.dims()[0];
    assert_eq!(bv.numel(), o, "conv2d bias length must match out channels");

    let cols = Rc::new(array::im2col(&xv, &g));
    let w2 = kv.reshape(&[o, g.patch_len()]);
    let mut out2 = array::matmul(&w2, &cols).expect("conv2d gemm");
    let p = g.n_positions();
    for ch in 0..o {
        let b = bv.data()[ch];
        for v in &mut out2.data_mut()[ch * p..(ch + 1) * p] {
            *v += b;
        }
    }
    let value = out2.reshape(&[o, g.h_out, g.w_out]);

    let kv_x = Rc::clone(&kv);
    let vjp_x = move |grad: &Array| {
        let g2 = grad.reshape(&[o, p]);
        let w2 = kv_x.reshape(&[o, g.patch_len()]);
        let dcols = array::matmul_at(&w2, &g2).expect("conv2d vjp dcols");
        array::col2im(&dcols, &g)
    };

    let kdims: Vec<usize> = kv.dims().to_vec();
    let cols_k = Rc::clone(&cols);
    let vjp_k = move |grad: &Array| {
        let g2 = grad.reshape(&[o, p]);
        let dw2 = array::matmul_bt(&g2, &cols_k).expect("conv2d vjp dW");
        dw2.reshape(&kdims)
    };

    let vjp_b = move |grad: &Array| {
        let mut out = vec![0.0; o];
        for ch in 0..o {
            out[ch] = grad.data()[ch * p..(ch + 1) * p].iter().sum();
        }
        Array::from_vec(&[o], out)
    };

    assert!(x.same_tape(&kernel) && x.same_tape(&bias));
    x.tape().record(
        value,
        vec![
            (x.id(), Box::new(vjp_x) as VjpFn),
            (kernel.id(), Box::new(vjp_k) as VjpFn),
            (bias.id(), Box::new(vjp_b) as VjpFn),
        ],
    )
}

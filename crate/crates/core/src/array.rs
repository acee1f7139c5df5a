//! Dense row-major arrays of up to four axes, plus the handful of compute
//! kernels (GEMM variants, im2col) everything else is built from.

use crate::error::{Error, Result};
use rand::Rng;

/// Element type. `f64` by default; the `f32` feature switches the whole
/// stack to single precision (finite-difference checks are only meaningful
/// in the default build).
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

pub const ELEM_BYTES: usize = std::mem::size_of::<Real>();

/// Array shape: up to 4 axes stored inline.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 4],
    ndim: u8,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Self {
        assert!(
            !dims.is_empty() && dims.len() <= 4,
            "shape must have 1..=4 axes, got {}",
            dims.len()
        );
        let mut d = [1usize; 4];
        d[..dims.len()].copy_from_slice(dims);
        Shape {
            dims: d,
            ndim: dims.len() as u8,
        }
    }

    pub fn scalar() -> Self {
        Shape::new(&[1])
    }

    pub fn ndim(&self) -> usize {
        self.ndim as usize
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.ndim as usize]
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.dims()[axis]
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }
}

impl std::fmt::Debug for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.dims().iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// Dense array of `Real` elements in row-major order.
#[derive(Clone, PartialEq)]
pub struct Array {
    shape: Shape,
    data: Vec<Real>,
}

impl std::fmt::Debug for Array {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.numel() <= 8 {
            write!(f, "Array{}{:?}", self.shape, self.data)
        } else {
            write!(f, "Array{}[..{} elems]", self.shape, self.numel())
        }
    }
}

impl Array {
    pub fn zeros(dims: &[usize]) -> Self {
        let shape = Shape::new(dims);
        Array {
            data: vec![0.0; shape.numel()],
            shape,
        }
    }

    pub fn filled(dims: &[usize], value: Real) -> Self {
        let shape = Shape::new(dims);
        Array {
            data: vec![value; shape.numel()],
            shape,
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<Real>) -> Self {
        let shape = Shape::new(dims);
        assert_eq!(
            shape.numel(),
            data.len(),
            "element count {} does not match shape {}",
            data.len(),
            shape
        );
        Array { shape, data }
    }

    pub fn scalar(value: Real) -> Self {
        Array::from_vec(&[1], vec![value])
    }

    /// I.i.d. normal entries, `mean + std * z`.
    pub fn randn(dims: &[usize], mean: Real, std: Real, rng: &mut impl Rng) -> Self {
        let shape = Shape::new(dims);
        let data = (0..shape.numel())
            .map(|_| {
                // Box-Muller on two uniform draws keeps us independent of
                // distribution-crate version details.
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                mean + std * (z as Real)
            })
            .collect();
        Array { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn ndim(&self) -> usize {
        self.shape.ndim()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Single element of a 1-element array.
    pub fn item(&self) -> Real {
        assert_eq!(self.numel(), 1, "item() on array of shape {}", self.shape);
        self.data[0]
    }

    pub fn at2(&self, i: usize, j: usize) -> Real {
        debug_assert_eq!(self.ndim(), 2);
        self.data[i * self.shape.dim(1) + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, dims: &[usize]) -> Array {
        let shape = Shape::new(dims);
        assert_eq!(
            shape.numel(),
            self.numel(),
            "reshape {} -> {} changes element count",
            self.shape,
            shape
        );
        Array {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Array {
        Array {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array, f: impl Fn(Real, Real) -> Real) -> Array {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Array {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_in_place(&mut self, other: &Array) {
        assert_eq!(self.shape, other.shape, "add_in_place shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, s: Real) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: Real) {
        self.data.iter_mut().for_each(|a| *a = v);
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Array) -> Real {
        assert_eq!(self.numel(), other.numel(), "dot length mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> Real {
        self.dot(self).sqrt()
    }

    /// Transpose of a 2-D array.
    pub fn transpose2(&self) -> Array {
        assert_eq!(self.ndim(), 2, "transpose2 needs a matrix");
        let (r, c) = (self.shape.dim(0), self.shape.dim(1));
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Array::from_vec(&[c, r], out)
    }
}

fn check_matrix(op: &'static str, a: &Array) -> Result<(usize, usize)> {
    if a.ndim() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("expected a matrix, got shape {}", a.shape()),
        });
    }
    Ok((a.shape.dim(0), a.shape.dim(1)))
}

/// `a (m x k) . b (k x n)`.
pub fn matmul(a: &Array, b: &Array) -> Result<Array> {
    let (m, ka) = check_matrix("matmul", a)?;
    let (kb, n) = check_matrix("matmul", b)?;
    if ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            detail: format!("inner dimensions disagree: {} vs {}", a.shape(), b.shape()),
        });
    }
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for k in 0..ka {
            let aik = ad[i * ka + k];
            let b_row = &bd[k * n..(k + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(Array::from_vec(&[m, n], out))
}

/// `a (m x k) . b^T` where `b` is `(n x k)`. Row-dot-row, cache friendly.
pub fn matmul_bt(a: &Array, b: &Array) -> Result<Array> {
    let (m, ka) = check_matrix("matmul_bt", a)?;
    let (n, kb) = check_matrix("matmul_bt", b)?;
    if ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul_bt",
            detail: format!("inner dimensions disagree: {} vs {}^T", a.shape(), b.shape()),
        });
    }
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let a_row = &ad[i * ka..(i + 1) * ka];
        for j in 0..n {
            let b_row = &bd[j * kb..(j + 1) * kb];
            let mut s = 0.0;
            for (&x, &y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            out[i * n + j] = s;
        }
    }
    Ok(Array::from_vec(&[m, n], out))
}

/// `a^T . b` where `a` is `(k x m)`, `b` is `(k x n)`.
pub fn matmul_at(a: &Array, b: &Array) -> Result<Array> {
    let (ka, m) = check_matrix("matmul_at", a)?;
    let (kb, n) = check_matrix("matmul_at", b)?;
    if ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul_at",
            detail: format!("inner dimensions disagree: {}^T vs {}", a.shape(), b.shape()),
        });
    }
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for k in 0..ka {
        let a_row = &ad[k * m..(k + 1) * m];
        let b_row = &bd[k * n..(k + 1) * n];
        for i in 0..m {
            let aki = a_row[i];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    }
    Ok(Array::from_vec(&[m, n], out))
}

/// Geometry of one conv2d application.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        input: &Array,
        kernel: &Array,
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom> {
        if input.ndim() != 3 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("input must be CxHxW, got {}", input.shape()),
            });
        }
        if kernel.ndim() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel must be OxCxKhxKw, got {}", kernel.shape()),
            });
        }
        let (c_in, h_in, w_in) = (input.dims()[0], input.dims()[1], input.dims()[2]);
        let (kc, kh, kw) = (kernel.dims()[1], kernel.dims()[2], kernel.dims()[3]);
        if kc != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel expects {} input channels, input has {}", kc, c_in),
            });
        }
        if kh > h_in + 2 * pad || kw > w_in + 2 * pad {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    kh,
                    kw,
                    h_in + 2 * pad,
                    w_in + 2 * pad
                ),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        Ok(ConvGeom {
            c_in,
            h_in,
            w_in,
            kh,
            kw,
            stride,
            pad,
            h_out: (h_in + 2 * pad - kh) / stride + 1,
            w_out: (w_in + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn n_positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfold conv patches into a `(patch_len x positions)` matrix.
pub fn im2col(input: &Array, g: &ConvGeom) -> Array {
    let k = g.patch_len();
    let p = g.n_positions();
    let mut cols = vec![0.0; k * p];
    let data = input.data();
    for c in 0..g.c_in {
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (c * g.kh + dy) * g.kw + dx;
                let out_row = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h_in as isize {
                        continue;
                    }
                    let src_base = (c * g.h_in + iy as usize) * g.w_in;
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w_in as isize {
                            continue;
                        }
                        out_row[oy * g.w_out + ox] = data[src_base + ix as usize];
                    }
                }
            }
        }
    }
    Array::from_vec(&[k, p], cols)
}

/// Fold a `(patch_len x positions)` gradient back onto the input grid.
pub fn col2im(cols: &Array, g: &ConvGeom) -> Array {
    let p = g.n_positions();
    let mut out = vec![0.0; g.c_in * g.h_in * g.w_in];
    let data = cols.data();
    for c in 0..g.c_in {
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (c * g.kh + dy) * g.kw + dx;
                let col_row = &data[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h_in as isize {
                        continue;
                    }
                    let dst_base = (c * g.h_in + iy as usize) * g.w_in;
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w_in as isize {
                            continue;
                        }
                        out[dst_base + ix as usize] += col_row[oy * g.w_out + ox];
                    }
                }
            }
        }
    }
    Array::from_vec(&[g.c_in, g.h_in, g.w_in], out)
}

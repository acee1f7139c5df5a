//! Image side of the model: square padding, bilinear preprocessing, a small
//! strided-conv backbone, the per-location value/output head, the text
//! localization map, and localization-weighted attention pooling.

use crate::array::{Array, Real};
use crate::error::{Error, Result};
use crate::nn::{AttnOpts, ConvBlock, Linear, Mha};
use crate::ops;
use crate::params::{ParamId, ParamSet};
use crate::pixmap::Pixmap;
use crate::tape::{Tape, Var};
use rand::Rng;

/// Pads an image to a square with side max(w, h). Content stays at the top
/// left so annotation coordinates survive unchanged; new pixels are black.
/// Idempotent on square inputs.
pub fn square_pad(img: &Pixmap) -> Pixmap {
    let side = img.width().max(img.height());
    if img.width() == side && img.height() == side {
        return img.clone();
    }
    let mut out = Pixmap::new(side, side, [0, 0, 0]);
    for y in 0..img.height() {
        for x in 0..img.width() {
            out.set(x, y, img.get(x, y));
        }
    }
    out
}

/// Splits a square image into its four quadrants and returns
/// [full, top-left, top-right, bottom-left, bottom-right] as raw crops.
/// An odd side splits at floor(side/2); right and bottom patches are one
/// pixel larger. Callers square and preprocess each crop separately.
pub fn subdivide(img: &Pixmap) -> Result<Vec<Pixmap>> {
    if img.width() != img.height() {
        return Err(Error::InvalidArgument(format!(
            "subdivide needs a square image, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let side = img.width();
    if side < 2 {
        return Err(Error::InvalidArgument("image too small to subdivide".into()));
    }
    let half = side / 2;
    let crop = |x0: u32, y0: u32, x1: u32, y1: u32| {
        let mut p = Pixmap::new(x1 - x0, y1 - y0, [0, 0, 0]);
        for y in y0..y1 {
            for x in x0..x1 {
                p.set(x - x0, y - y0, img.get(x, y));
            }
        }
        p
    };
    Ok(vec![
        img.clone(),
        crop(0, 0, half, half),
        crop(half, 0, side, half),
        crop(0, half, half, side),
        crop(half, half, side, side),
    ])
}

/// Bilinear resize of an RGB image to side x side, values scaled to [0, 1],
/// shape 3 x side x side. Identity-sized inputs reproduce their pixels
/// exactly (the sample points land on integer coordinates).
pub fn resize_bilinear(img: &Pixmap, side: usize) -> Array {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array::zeros(&[3, side, side]);
    let sx = w as Real / side as Real;
    let sy = h as Real / side as Real;
    for y in 0..side {
        let fy = ((y as Real + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as Real);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as Real;
        for x in 0..side {
            let fx = ((x as Real + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as Real);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as Real;
            let px = |xx: usize, yy: usize| img.get(xx as u32, yy as u32);
            let (p00, p10, p01, p11) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
            for ch in 0..3 {
                let top = p00[ch] as Real * (1.0 - wx) + p10[ch] as Real * wx;
                let bot = p01[ch] as Real * (1.0 - wx) + p11[ch] as Real * wx;
                let v = (top * (1.0 - wy) + bot * wy) / 255.0;
                out.data_mut()[(ch * side + y) * side + x] = v;
            }
        }
    }
    out
}

/// Everything one forward pass produces, kept as graph variables so losses
/// can reach any stage.
pub struct VisionOut<'t> {
    /// C x H x W backbone feature.
    pub f_global: Var<'t>,
    /// E x H x W per-location value/output feature.
    pub f_conv: Var<'t>,
    /// 1 x H x W localization probabilities in (0, 1).
    pub loc: Var<'t>,
    /// 1 x E pooled image feature.
    pub f_attn: Var<'t>,
}

/// Conv backbone plus the attention pooling stack. The pooling layer's value
/// and output projections double as the per-location head, which requires the
/// backbone channel count to equal the embedding width.
pub struct ImageEncoder {
    pub input_side: usize,
    /// Pooled grid side; the backbone halves the input once per block.
    pub grid: usize,
    pub embed: usize,
    pub blocks: Vec<ConvBlock>,
    /// Projects a backbone cell into token space for pooling.
    pub tok_proj: Linear,
    /// Pooling attention; `pool.v`/`pool.out` are shared with the
    /// per-location head.
    pub pool: Mha,
    /// (grid² + 1) x E. Row 0 belongs to the pooled query token; rows 1..
    /// follow the cells in row-major order.
    pub pos_embed: ParamId,
    pub loc_w: ParamId,
    pub loc_b: ParamId,
    pub loc_kernel: usize,
    pub norm_mean: [Real; 3],
    pub norm_std: [Real; 3],
}

impl ImageEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        input_side: usize,
        channels: &[usize],
        heads: usize,
        loc_kernel: usize,
        norm_mean: [Real; 3],
        norm_std: [Real; 3],
        rng: &mut impl Rng,
    ) -> Result<ImageEncoder> {
        if channels.is_empty() {
            return Err(Error::Config("backbone needs at least one block".into()));
        }
        let down = 1usize << channels.len();
        if input_side % down != 0 {
            return Err(Error::Config(format!(
                "input side {input_side} is not divisible by the backbone stride {down}"
            )));
        }
        if loc_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "localization kernel must be odd, got {loc_kernel}"
            )));
        }
        let embed = *channels.last().unwrap();
        let grid = input_side / down;
        let mut blocks = Vec::with_capacity(channels.len());
        let mut c_in = 3;
        for (i, &c_out) in channels.iter().enumerate() {
            blocks.push(ConvBlock::new(ps, &format!("img.b{i}"), c_in, c_out, 3, 2, 1, rng));
            c_in = c_out;
        }
        let tok_proj = Linear::new(ps, "img.tok_proj", embed, embed, rng);
        let pool = Mha::new(ps, "img.pool", embed, heads, rng);
        let pos_embed = ps.add(
            "img.pos_embed",
            Array::randn(&[grid * grid + 1, embed], 0.0, 0.01, rng),
        );
        let loc_std = (2.0 / (embed * loc_kernel * loc_kernel) as Real).sqrt();
        let loc_w = ps.add(
            "img.loc.w",
            Array::randn(&[1, embed, loc_kernel, loc_kernel], 0.0, loc_std, rng),
        );
        let loc_b = ps.add("img.loc.b", Array::zeros(&[1]));
        Ok(ImageEncoder {
            input_side,
            grid,
            embed,
            blocks,
            tok_proj,
            pool,
            pos_embed,
            loc_w,
            loc_b,
            loc_kernel,
            norm_mean,
            norm_std,
        })
    }

    /// Square-pads, resizes to the model input side, and normalizes each
    /// channel with the configured constants.
    pub fn preprocess(&self, img: &Pixmap) -> Array {
        let squared = square_pad(img);
        let mut x = resize_bilinear(&squared, self.input_side);
        let n = self.input_side * self.input_side;
        for ch in 0..3 {
            let (m, s) = (self.norm_mean[ch], self.norm_std[ch]);
            for v in &mut x.data_mut()[ch * n..(ch + 1) * n] {
                *v = (*v - m) / s;
            }
        }
        x
    }

    /// Backbone forward: normalized 3 x S x S input to C x H x W feature.
    pub fn backbone<'t>(&self, ps: &ParamSet, x: Var<'t>) -> Var<'t> {
        let mut x = x;
        for block in &self.blocks {
            x = block.apply(ps, x);
        }
        x
    }

    /// Applies the pooling value and output projections at every location
    /// independently: C x H x W in, E x H x W out, no attention mixing.
    pub fn reformulated_head<'t>(&self, ps: &ParamSet, f_global: Var<'t>) -> Var<'t> {
        let dims = f_global.dims();
        let (c, h, w) = (dims[0], dims[1], dims[2]);
        let cells = ops::transpose(ops::reshape(f_global, &[c, h * w]));
        let mapped = self.pool.value_out_path(ps, cells);
        ops::reshape(ops::transpose(mapped), &[self.embed, h, w])
    }

    /// Localization head: configurable odd-sized convolution to one channel,
    /// sigmoid, clamped into (0, 1) so the loss logs stay finite.
    pub fn localize<'t>(&self, ps: &ParamSet, f_conv: Var<'t>) -> Var<'t> {
        let tape = f_conv.tape();
        let z = ops::conv2d(
            f_conv,
            tape.param(ps, self.loc_w),
            tape.param(ps, self.loc_b),
            1,
            (self.loc_kernel - 1) / 2,
        );
        ops::clamp(ops::sigmoid(z), 1e-6, 1.0 - 1e-6)
    }

    /// Attention pooling with localization-shifted values. Cell tokens are
    /// projected backbone features plus their position embeddings; the query
    /// is their mean plus its own embedding. Each cell's value vector is
    /// scaled by (H·W) · I_loc_i / ΣI_loc, so a constant map reduces to plain
    /// attention pooling exactly.
    pub fn attention_pool_shifted<'t>(
        &self,
        ps: &ParamSet,
        f_global: Var<'t>,
        loc: Var<'t>,
    ) -> Var<'t> {
        let tape = f_global.tape();
        let dims = f_global.dims();
        let (c, h, w) = (dims[0], dims[1], dims[2]);
        let p = h * w;
        assert_eq!(loc.dims(), vec![1, h, w], "localization grid mismatch");
        let loc_sum = loc.value().data().iter().sum::<Real>();
        assert!(loc_sum > 0.0, "localization map sums to zero");

        let cells = ops::transpose(ops::reshape(f_global, &[c, p]));
        let pos = tape.param(ps, self.pos_embed);
        let x = ops::add(self.tok_proj.apply(ps, cells), ops::slice_rows(pos, 1, p));

        let mean_weights = tape.constant(Array::filled(&[1, p], 1.0 / p as Real));
        let query = ops::add(ops::matmul(mean_weights, x), ops::slice_rows(pos, 0, 1));

        let flat = ops::reshape(loc, &[p, 1]);
        let scale = ops::scale_by(
            ops::mul_scalar(flat, p as Real),
            ops::recip(ops::sum_all(flat)),
        );
        self.pool.attend(
            ps,
            query,
            x,
            AttnOpts {
                value_scale: Some(scale),
                ..AttnOpts::default()
            },
        )
    }

    /// Full pipeline on one image: preprocess, backbone, per-location head,
    /// localization, shifted pooling.
    pub fn encode<'t>(&self, tape: &'t Tape, ps: &ParamSet, img: &Pixmap) -> VisionOut<'t> {
        let input = tape.constant(self.preprocess(img));
        self.encode_input(ps, input)
    }

    /// Same as [`Self::encode`] but starting from an already-preprocessed
    /// input variable (used by gradient checks).
    pub fn encode_input<'t>(&self, ps: &ParamSet, input: Var<'t>) -> VisionOut<'t> {
        let f_global = self.backbone(ps, input);
        let f_conv = self.reformulated_head(ps, f_global);
        let loc = self.localize(ps, f_conv);
        let f_attn = self.attention_pool_shifted(ps, f_global, loc);
        VisionOut {
            f_global,
            f_conv,
            loc,
            f_attn,
        }
    }
}

/// Nearest-neighbor resampling of a pooled-grid position embedding from
/// h0 x w0 to h1 x w1. Row 0 (the pooled-query embedding) is copied through.
/// Matching sizes return a bit-identical copy.
pub fn interpolate_pos_embed(src: &Array, h0: usize, w0: usize, h1: usize, w1: usize) -> Array {
    let e = src.dims()[1];
    assert_eq!(src.dims()[0], h0 * w0 + 1, "source grid size mismatch");
    let mut out = Array::zeros(&[h1 * w1 + 1, e]);
    out.data_mut()[..e].copy_from_slice(&src.data()[..e]);
    for y in 0..h1 {
        let sy = (((y as Real + 0.5) * h0 as Real / h1 as Real) as usize).min(h0 - 1);
        for x in 0..w1 {
            let sx = (((x as Real + 0.5) * w0 as Real / w1 as Real) as usize).min(w0 - 1);
            let src_row = 1 + sy * w0 + sx;
            let dst_row = 1 + y * w1 + x;
            out.data_mut()[dst_row * e..(dst_row + 1) * e]
                .copy_from_slice(&src.data()[src_row * e..(src_row + 1) * e]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use crate::rng;

    fn tiny_encoder(ps: &mut ParamSet) -> ImageEncoder {
        // 2 blocks, stride 4: 16x16 input -> 4x4 grid, C = E = 8.
        ImageEncoder::new(
            ps,
            16,
            &[6, 8],
            2,
            1,
            [0.5; 3],
            [0.5; 3],
            &mut rng::seeded(21),
        )
        .unwrap()
    }

    fn checker(w: u32, h: u32) -> Pixmap {
        let mut img = Pixmap::new(w, h, [30, 60, 90]);
        for y in 0..h {
            for x in 0..w {
                if (x / 3 + y / 3) % 2 == 0 {
                    img.set(x, y, [200, 160, 40]);
                }
            }
        }
        img
    }

    #[test]
    fn square_pad_pads_bottom_and_right_with_black() {
        let img = checker(20, 10);
        let padded = square_pad(&img);
        assert_eq!((padded.width(), padded.height()), (20, 20));
        assert_eq!(padded.get(5, 5), img.get(5, 5));
        for y in 10..20 {
            for x in 0..20 {
                assert_eq!(padded.get(x, y), [0, 0, 0]);
            }
        }
        // Idempotent.
        assert_eq!(square_pad(&padded), padded);
    }

    #[test]
    fn subdivision_tiles_exactly() {
        let img = checker(10, 10);
        let parts = subdivide(&img).unwrap();
        assert_eq!(parts.len(), 5);
        let (tl, tr, bl, br) = (&parts[1], &parts[2], &parts[3], &parts[4]);
        for p in [tl, tr, bl, br] {
            assert_eq!((p.width(), p.height()), (5, 5));
        }
        for y in 0..10u32 {
            for x in 0..10u32 {
                let got = match (x < 5, y < 5) {
                    (true, true) => tl.get(x, y),
                    (false, true) => tr.get(x - 5, y),
                    (true, false) => bl.get(x, y - 5),
                    (false, false) => br.get(x - 5, y - 5),
                };
                assert_eq!(got, img.get(x, y));
            }
        }
    }

    #[test]
    fn odd_side_split_favors_right_and_bottom() {
        let img = checker(11, 11);
        let parts = subdivide(&img).unwrap();
        assert_eq!((parts[1].width(), parts[1].height()), (5, 5));
        assert_eq!((parts[2].width(), parts[2].height()), (6, 5));
        assert_eq!((parts[3].width(), parts[3].height()), (5, 6));
        assert_eq!((parts[4].width(), parts[4].height()), (6, 6));
    }

    #[test]
    fn identity_resize_reproduces_pixels() {
        let img = checker(16, 16);
        let arr = resize_bilinear(&img, 16);
        for y in 0..16u32 {
            for x in 0..16u32 {
                let px = img.get(x, y);
                for ch in 0..3 {
                    let v = arr.data()[(ch * 16 + y as usize) * 16 + x as usize];
                    assert!((v - px[ch] as Real / 255.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_image_normalizes_to_constant() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let img = Pixmap::new(16, 16, [128, 128, 128]);
        let x = enc.preprocess(&img);
        let expect = (128.0 / 255.0 - 0.5) / 0.5;
        assert!(x.data().iter().all(|&v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn backbone_shape_follows_stride() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let tape = Tape::new();
        let out = enc.encode(&tape, &ps, &checker(16, 16));
        assert_eq!(out.f_global.dims(), vec![8, 4, 4]);
        assert_eq!(out.f_conv.dims(), vec![8, 4, 4]);
        assert_eq!(out.loc.dims(), vec![1, 4, 4]);
        assert_eq!(out.f_attn.dims(), vec![1, 8]);
    }

    #[test]
    fn identity_head_passes_feature_through() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let eye = {
            let mut m = Array::zeros(&[8, 8]);
            for i in 0..8 {
                m.data_mut()[i * 8 + i] = 1.0;
            }
            m
        };
        ps.set_value(enc.pool.v.w, eye.clone());
        ps.set_value(enc.pool.out.w, eye);
        ps.set_value(enc.pool.v.b.unwrap(), Array::zeros(&[8]));
        ps.set_value(enc.pool.out.b.unwrap(), Array::zeros(&[8]));
        let tape = Tape::new();
        let f = tape.constant(Array::randn(&[8, 4, 4], 0.0, 1.0, &mut rng::seeded(2)));
        let out = enc.reformulated_head(&ps, f);
        let (a, b) = (f.value(), out.value());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn head_matches_per_location_loop() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let tape = Tape::new();
        let f = tape.constant(Array::randn(&[8, 4, 4], 0.0, 1.0, &mut rng::seeded(3)));
        let fast = enc.reformulated_head(&ps, f).value();

        let vw = ps.value(enc.pool.v.w);
        let vb = ps.value(enc.pool.v.b.unwrap());
        let ow = ps.value(enc.pool.out.w);
        let ob = ps.value(enc.pool.out.b.unwrap());
        let fv = f.value();
        for y in 0..4 {
            for x in 0..4 {
                let cell: Vec<Real> = (0..8).map(|c| fv.data()[(c * 4 + y) * 4 + x]).collect();
                // Row-vector times weight matrix, twice, plus biases.
                let mut mid = vec![0.0; 8];
                for j in 0..8 {
                    mid[j] = vb.data()[j]
                        + (0..8).map(|i| cell[i] * vw.data()[i * 8 + j]).sum::<Real>();
                }
                for j in 0..8 {
                    let v = ob.data()[j]
                        + (0..8).map(|i| mid[i] * ow.data()[i * 8 + j]).sum::<Real>();
                    let got = fast.data()[(j * 4 + y) * 4 + x];
                    assert!((got - v).abs() < 1e-9, "cell ({x},{y}) ch {j}");
                }
            }
        }
    }

    #[test]
    fn head_commutes_with_spatial_permutation() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let tape = Tape::new();
        let base = Array::randn(&[8, 4, 4], 0.0, 1.0, &mut rng::seeded(5));
        // Swap two cells, run the head, swap back: must equal the direct run.
        let mut swapped = base.clone();
        for c in 0..8 {
            let i = (c * 4) * 4; // cell (0,0)
            let j = (c * 4 + 2) * 4 + 3; // cell (3,2)
            swapped.data_mut().swap(i, j);
        }
        let direct = enc.reformulated_head(&ps, tape.constant(base)).value();
        let via = enc.reformulated_head(&ps, tape.constant(swapped)).value();
        let mut unswapped = via.as_ref().clone();
        for c in 0..8 {
            let i = (c * 4) * 4;
            let j = (c * 4 + 2) * 4 + 3;
            unswapped.data_mut().swap(i, j);
        }
        for (a, b) in direct.data().iter().zip(unswapped.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn localization_head_zeroed_gives_half_everywhere() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        ps.set_value(enc.loc_w, Array::zeros(&[1, 8, 1, 1]));
        let tape = Tape::new();
        let f = tape.constant(Array::randn(&[8, 4, 4], 0.0, 1.0, &mut rng::seeded(7)));
        let loc = enc.localize(&ps, f).value();
        assert!(loc.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn large_bias_saturates_to_clamp_edge() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        ps.set_value(enc.loc_w, Array::zeros(&[1, 8, 1, 1]));
        ps.set_value(enc.loc_b, Array::from_vec(&[1], vec![50.0]));
        let tape = Tape::new();
        let f = tape.constant(Array::randn(&[8, 4, 4], 0.0, 1.0, &mut rng::seeded(7)));
        let loc = enc.localize(&ps, f).value();
        assert!(loc.data().iter().all(|&v| v == 1.0 - 1e-6));
    }

    #[test]
    fn constant_map_equals_plain_pooling() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let tape = Tape::new();
        let f = tape.constant(Array::randn(&[8, 4, 4], 0.0, 1.0, &mut rng::seeded(9)));
        for c in [1e-6, 0.37, 1.0 - 1e-6] {
            let loc = tape.constant(Array::filled(&[1, 4, 4], c));
            let shifted = enc.attention_pool_shifted(&ps, f, loc).value();

            // Plain pooling: identical tokens and query, no value scaling.
            let cells = ops::transpose(ops::reshape(f, &[8, 16]));
            let pos = tape.param(&ps, enc.pos_embed);
            let x = ops::add(enc.tok_proj.apply(&ps, cells), ops::slice_rows(pos, 1, 16));
            let mw = tape.constant(Array::filled(&[1, 16], 1.0 / 16.0));
            let q = ops::add(ops::matmul(mw, x), ops::slice_rows(pos, 0, 1));
            let plain = enc.pool.attend(&ps, q, x, AttnOpts::default()).value();
            for (a, b) in shifted.data().iter().zip(plain.data()) {
                assert!((a - b).abs() <= 1e-9, "c={c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn spike_map_with_uniform_logits_reads_out_one_cell() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        // Zero query projection: all logits 0, attention uniform. The value
        // scaling then hands the whole pooled value to the spiked cell.
        ps.set_value(enc.pool.q.w, Array::zeros(&[8, 8]));
        ps.set_value(enc.pool.q.b.unwrap(), Array::zeros(&[8]));
        let tape = Tape::new();
        let f = tape.constant(Array::randn(&[8, 4, 4], 0.0, 1.0, &mut rng::seeded(11)));
        let k = 6; // spiked cell, row-major
        let mut m = Array::filled(&[1, 4, 4], 1e-9);
        m.data_mut()[k] = 1.0;
        let loc = tape.constant(m);
        let pooled = enc.attention_pool_shifted(&ps, f, loc).value();

        // Expected: output projection of cell k's value vector, up to the
        // 1e-9 leakage from the other cells.
        let cells = ops::transpose(ops::reshape(f, &[8, 16]));
        let pos = tape.param(&ps, enc.pos_embed);
        let x = ops::add(enc.tok_proj.apply(&ps, cells), ops::slice_rows(pos, 1, 16));
        let vk = enc
            .pool
            .value_out_path(&ps, ops::slice_rows(x, k, 1))
            .value();
        for (a, b) in pooled.data().iter().zip(vk.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn pooling_gradients_reach_map_and_feature() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let fg = ps.add(
            "test.f_global",
            Array::randn(&[8, 4, 4], 0.0, 1.0, &mut rng::seeded(13)),
        );
        let lm = ps.add(
            "test.loc_logits",
            Array::randn(&[1, 4, 4], 0.0, 1.0, &mut rng::seeded(14)),
        );
        let cfg = GradCheckConfig {
            samples_per_param: 6,
            tolerance: 1e-5,
            ..GradCheckConfig::default()
        };
        let ids = [fg, lm];
        let report = grad_check(&mut ps, &ids, &cfg, |tape, ps| {
            let f = tape.param(ps, fg);
            let loc = ops::clamp(ops::sigmoid(tape.param(ps, lm)), 1e-6, 1.0 - 1e-6);
            ops::sum_all(enc.attention_pool_shifted(ps, f, loc))
        });
        assert!(report.passed(), "{}", report.summary());
        // Both inputs actually move the output.
        let tape = Tape::new();
        let f = tape.param(&ps, fg);
        let loc = ops::clamp(ops::sigmoid(tape.param(&ps, lm)), 1e-6, 1.0 - 1e-6);
        let grads = tape.backward(ops::sum_all(enc.attention_pool_shifted(&ps, f, loc)));
        assert!(grads.wrt(&ps, fg).data().iter().any(|&g| g != 0.0));
        assert!(grads.wrt(&ps, lm).data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn backbone_gradients_check_out() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let img = checker(16, 16);
        let input = enc.preprocess(&img);
        let proj = Array::randn(&[8, 4, 4], 0.0, 1.0, &mut rng::seeded(15));
        let cfg = GradCheckConfig {
            samples_per_param: 4,
            tolerance: 1e-4,
            ..GradCheckConfig::default()
        };
        let ids: Vec<_> = ps
            .trainable_ids()
            .into_iter()
            .filter(|&id| ps.name(id).starts_with("img.b"))
            .collect();
        let report = grad_check(&mut ps, &ids, &cfg, |tape, ps| {
            let x = tape.constant(input.clone());
            let f = enc.backbone(ps, x);
            ops::sum_all(ops::mul(f, tape.constant(proj.clone())))
        });
        assert!(report.passed(), "{}", report.summary());
    }

    #[test]
    fn full_image_encoder_gradients_check_out() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let img = checker(16, 16);
        let input = enc.preprocess(&img);
        let proj = Array::randn(&[1, 8], 0.0, 1.0, &mut rng::seeded(16));
        let cfg = GradCheckConfig {
            samples_per_param: 2,
            tolerance: 1e-4,
            ..GradCheckConfig::default()
        };
        let ids = ps.trainable_ids();
        let report = grad_check(&mut ps, &ids, &cfg, |tape, ps| {
            let x = tape.constant(input.clone());
            let out = enc.encode_input(ps, x);
            ops::sum_all(ops::mul(out.f_attn, tape.constant(proj.clone())))
        });
        assert!(report.passed(), "{}", report.summary());
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let img = checker(20, 14);
        let ta = Tape::new();
        let a = enc.encode(&ta, &ps, &img).f_attn.value();
        let tb = Tape::new();
        let b = enc.encode(&tb, &ps, &img).f_attn.value();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn constant_image_quadrants_pool_identically() {
        let mut ps = ParamSet::new();
        let enc = tiny_encoder(&mut ps);
        let img = Pixmap::new(32, 32, [90, 120, 150]);
        let parts = subdivide(&img).unwrap();
        let tape = Tape::new();
        let embs: Vec<_> = parts[1..]
            .iter()
            .map(|p| enc.encode(&tape, &ps, p).f_attn.value())
            .collect();
        for e in &embs[1..] {
            assert_eq!(embs[0].data(), e.data());
        }
    }

    #[test]
    fn pos_embed_interpolation_identity_and_replication() {
        let mut rng = rng::seeded(31);
        let src = Array::randn(&[2 * 2 + 1, 3], 0.0, 1.0, &mut rng);
        let same = interpolate_pos_embed(&src, 2, 2, 2, 2);
        assert_eq!(src.data(), same.data());

        let up = interpolate_pos_embed(&src, 2, 2, 4, 4);
        assert_eq!(up.dims(), &[17, 3]);
        // Query row copied.
        assert_eq!(&up.data()[..3], &src.data()[..3]);
        // Each source cell fills its 2x2 quadrant.
        for y in 0..4 {
            for x in 0..4 {
                let sy = y / 2;
                let sx = x / 2;
                let dst = &up.data()[(1 + y * 4 + x) * 3..(1 + y * 4 + x) * 3 + 3];
                let src_row = &src.data()[(1 + sy * 2 + sx) * 3..(1 + sy * 2 + sx) * 3 + 3];
                assert_eq!(dst, src_row);
            }
        }

        let single = Array::randn(&[2, 3], 0.0, 1.0, &mut rng);
        let filled = interpolate_pos_embed(&single, 1, 1, 3, 3);
        for r in 1..10 {
            assert_eq!(&filled.data()[r * 3..r * 3 + 3], &single.data()[3..6]);
        }
    }
}

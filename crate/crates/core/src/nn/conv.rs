//! 2D cross-correlation with bias, forward and backward.
//!
//! Every output element is accumulated in a fixed order: the bias first,
//! then kernel taps in row-major `(ky, kx)` order with the input channel
//! innermost. Loops are arranged so the innermost loop runs over independent
//! output positions, which vectorizes without reassociating any sum.

use crate::error::{Error, Result};
use crate::nn::cost::ConvDesc;
use crate::scalar::Real;
use crate::tensor::{FrameShape, FrameTensor, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct Conv2dParams<'a, F = f32> {
    pub weights: &'a Tensor<F>,
    pub bias: &'a Tensor<F>,
    pub stride: usize,
    pub padding: usize,
}

impl<'a, F> Conv2dParams<'a, F> {
    /// `weights` is `(C_out, C_in, K, K)`, `bias` is `(C_out)`.
    pub fn new(weights: &'a Tensor<F>, bias: &'a Tensor<F>, stride: usize, padding: usize) -> Result<Self> {
        let e = weights.extents();
        if e.len() != 4 || e[2] != e[3] {
            return Err(Error::shape(format!("conv weights must be (C_out, C_in, K, K), got {e:?}")));
        }
        if bias.extents() != [e[0]] {
            return Err(Error::shape(format!(
                "conv bias {:?} does not match {} output channels",
                bias.extents(),
                e[0]
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv stride must be positive"));
        }
        Ok(Conv2dParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn desc(&self) -> ConvDesc {
        let e = self.weights.extents();
        ConvDesc {
            c_in: e[1],
            c_out: e[0],
            k: e[2],
            stride: self.stride,
            pad: self.padding,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<F = f32> {
    pub grad_x: FrameTensor<F>,
    pub grad_w: Tensor<F>,
    pub grad_b: Tensor<F>,
}

pub(crate) struct RawConvGrads<F> {
    pub grad_x: Option<Vec<F>>,
    pub grad_w: Vec<F>,
    pub grad_b: Vec<F>,
}

fn check_input(s: FrameShape, d: &ConvDesc) -> Result<(usize, usize)> {
    if s.c != d.c_in {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            d.c_in, s.c
        )));
    }
    d.output_hw(s.h, s.w)
}

/// Copies one `(C, H, W)` image into the interior of a zero-bordered buffer.
fn pad_into<F: Copy>(src: &[F], c: usize, h: usize, w: usize, pad: usize, dst: &mut [F]) {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    for ci in 0..c {
        for y in 0..h {
            let s = (ci * h + y) * w;
            let d = (ci * hp + y + pad) * wp + pad;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
}

/// Copies `c` planes of `h` rows laid out with row width `from` into rows of width `w`.
fn crop_rows<F: Copy>(src: &[F], from: usize, c: usize, h: usize, w: usize, span: usize, dst: &mut [F]) {
    for ci in 0..c {
        for y in 0..h {
            dst[(ci * h + y) * w..][..w].copy_from_slice(&src[ci * span + y * from..][..w]);
        }
    }
}

const CO_TILE: usize = 4;
const POS_TILE: usize = 8;

/// Stride-1 correlation over flattened planes.
///
/// The input is a zero-bordered image with row width `wp`; output position `p`
/// of every plane reads input positions `p + taps[t]`, so positions whose
/// column falls past the valid width are junk and cropped by the caller.
/// `packed` holds the weights tile by tile as `[tile][tap][CO_TILE]`, taps in
/// the order of `taps`, with missing channels zero.
struct Correlation<F> {
    taps: Vec<usize>,
    packed: Vec<F>,
    bias: Vec<F>,
    c_out: usize,
}

impl<F: Real> Correlation<F> {
    /// `weight(co, t)` is the weight of output channel `co` at tap `t`.
    fn new(taps: Vec<usize>, c_out: usize, bias: Vec<F>, weight: impl Fn(usize, usize) -> F) -> Self {
        let tiles = c_out.div_ceil(CO_TILE);
        let mut packed = vec![F::zero(); tiles * taps.len() * CO_TILE];
        for tile in 0..tiles {
            for t in 0..taps.len() {
                for j in 0..CO_TILE {
                    let co = tile * CO_TILE + j;
                    if co < c_out {
                        packed[(tile * taps.len() + t) * CO_TILE + j] = weight(co, t);
                    }
                }
            }
        }
        Correlation {
            taps,
            packed,
            bias,
            c_out,
        }
    }

    /// Writes `c_out` planes of `span` positions into `out`.
    fn run(&self, xpad: &[F], span: usize, out: &mut [F]) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports the enabled feature.
            return unsafe { self.run_avx2(xpad, span, out) };
        }
        self.run_portable(xpad, span, out)
    }

    /// Same code compiled for wider vectors. Lane order and rounding are
    /// unchanged, so results match the portable path bit for bit.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn run_avx2(&self, xpad: &[F], span: usize, out: &mut [F]) {
        self.run_portable(xpad, span, out)
    }

    #[inline(always)]
    fn run_portable(&self, xpad: &[F], span: usize, out: &mut [F]) {
        let nt = self.taps.len();
        for (tile, wt) in self.packed.chunks_exact(nt * CO_TILE).enumerate() {
            let cb = tile * CO_TILE;
            let rows = CO_TILE.min(self.c_out - cb);
            let mut p0 = 0;
            while p0 < span {
                let len = POS_TILE.min(span - p0);
                let mut init = [F::zero(); CO_TILE];
                init[..rows].copy_from_slice(&self.bias[cb..cb + rows]);
                let acc = if len == POS_TILE {
                    tile_full(&self.taps, wt, xpad, p0, init)
                } else {
                    let mut acc = init.map(|b| [b; POS_TILE]);
                    for (&off, w4) in self.taps.iter().zip(wt.chunks_exact(CO_TILE)) {
                        let xs = &xpad[off + p0..off + p0 + len];
                        for (a, &wv) in acc.iter_mut().zip(w4) {
                            for (o, &v) in a.iter_mut().zip(xs) {
                                *o += wv * v;
                            }
                        }
                    }
                    acc
                };
                for (j, a) in acc.iter().enumerate().take(rows) {
                    out[(cb + j) * span + p0..][..len].copy_from_slice(&a[..len]);
                }
                p0 += POS_TILE;
            }
        }
    }
}

#[inline(always)]
fn tile_full<F: Real>(
    taps: &[usize],
    wt: &[F],
    xpad: &[F],
    p0: usize,
    init: [F; CO_TILE],
) -> [[F; POS_TILE]; CO_TILE] {
    let mut a0 = [init[0]; POS_TILE];
    let mut a1 = [init[1]; POS_TILE];
    let mut a2 = [init[2]; POS_TILE];
    let mut a3 = [init[3]; POS_TILE];
    for (&off, w4) in taps.iter().zip(wt.chunks_exact(CO_TILE)) {
        let xs: [F; POS_TILE] = xpad[off + p0..off + p0 + POS_TILE].try_into().expect("tile");
        let (w0, w1, w2, w3) = (w4[0], w4[1], w4[2], w4[3]);
        for i in 0..POS_TILE {
            a0[i] += w0 * xs[i];
            a1[i] += w1 * xs[i];
            a2[i] += w2 * xs[i];
            a3[i] += w3 * xs[i];
        }
    }
    [a0, a1, a2, a3]
}

/// Tap offsets in `(ky, kx, channel)` order for planes of `hp x wp`.
fn tap_offsets(channels: usize, k: usize, hp: usize, wp: usize) -> Vec<usize> {
    let mut taps = Vec::with_capacity(k * k * channels);
    for ky in 0..k {
        for kx in 0..k {
            for c in 0..channels {
                taps.push(c * hp * wp + ky * wp + kx);
            }
        }
    }
    taps
}

pub(crate) fn conv2d_forward_raw<F: Real>(
    x: &[F],
    s: FrameShape,
    p: &Conv2dParams<'_, F>,
) -> Result<(Vec<F>, FrameShape)> {
    let d = p.desc();
    let (ho, wo) = check_input(s, &d)?;
    let (k, stride, pad) = (d.k, d.stride, d.pad);
    let (hp, wp) = (s.h + 2 * pad, s.w + 2 * pad);
    let w = p.weights.data();
    let b = p.bias.data();
    let out_shape = FrameShape::new(s.n, d.c_out, ho, wo);
    let mut out = vec![F::zero(); out_shape.len()];
    let mut xpad = vec![F::zero(); d.c_in * hp * wp];
    let image_out = d.c_out * ho * wo;

    if stride == 1 {
        let cin = d.c_in;
        let corr = Correlation::new(tap_offsets(cin, k, hp, wp), d.c_out, b.to_vec(), |co, t| {
            let (ky, kx, ci) = (t / (k * cin), t / cin % k, t % cin);
            w[((co * cin + ci) * k + ky) * k + kx]
        });
        let span = (ho - 1) * wp + wo;
        let mut planes = vec![F::zero(); d.c_out * span];
        for img in 0..s.n {
            pad_into(&x[img * s.image_len()..], s.c, s.h, s.w, pad, &mut xpad);
            corr.run(&xpad, span, &mut planes);
            crop_rows(&planes, wp, d.c_out, ho, wo, span, &mut out[img * image_out..]);
        }
        return Ok((out, out_shape));
    }

    for img in 0..s.n {
        pad_into(&x[img * s.image_len()..], s.c, s.h, s.w, pad, &mut xpad);
        for co in 0..d.c_out {
            let plane = &mut out[(img * d.c_out + co) * ho * wo..][..ho * wo];
            plane.fill(b[co]);
            for ky in 0..k {
                for kx in 0..k {
                    for ci in 0..d.c_in {
                        let wv = w[((co * d.c_in + ci) * k + ky) * k + kx];
                        let base = ci * hp * wp;
                        for oy in 0..ho {
                            let row = &xpad[base + (oy * stride + ky) * wp + kx..];
                            for (ox, o) in plane[oy * wo..(oy + 1) * wo].iter_mut().enumerate() {
                                *o += wv * row[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((out, out_shape))
}

pub fn conv2d_forward<F: Real>(x: &FrameTensor<F>, p: &Conv2dParams<'_, F>) -> Result<FrameTensor<F>> {
    let (out, shape) = conv2d_forward_raw(x.data(), x.shape(), p)?;
    FrameTensor::from_vec(shape, out)
}

/// Adds `sum_p g[j][p] * x[p]` to `dst[j]` for each of the `CO_TILE` rows of
/// `g`, each `x.len()` long. Sums run in `POS_TILE` lanes, then across lanes.
#[inline(always)]
fn dot_tile<F: Real>(g: &[F], x: &[F], dst: &mut [F; CO_TILE]) {
    let n = x.len();
    let (g0, rest) = g.split_at(n);
    let (g1, rest) = rest.split_at(n);
    let (g2, g3) = rest.split_at(n);
    let mut a0 = [F::zero(); POS_TILE];
    let mut a1 = [F::zero(); POS_TILE];
    let mut a2 = [F::zero(); POS_TILE];
    let mut a3 = [F::zero(); POS_TILE];
    let full = n - n % POS_TILE;
    let mut p0 = 0;
    while p0 < full {
        let xs: [F; POS_TILE] = x[p0..p0 + POS_TILE].try_into().expect("tile");
        let r0: [F; POS_TILE] = g0[p0..p0 + POS_TILE].try_into().expect("tile");
        let r1: [F; POS_TILE] = g1[p0..p0 + POS_TILE].try_into().expect("tile");
        let r2: [F; POS_TILE] = g2[p0..p0 + POS_TILE].try_into().expect("tile");
        let r3: [F; POS_TILE] = g3[p0..p0 + POS_TILE].try_into().expect("tile");
        for i in 0..POS_TILE {
            a0[i] += r0[i] * xs[i];
            a1[i] += r1[i] * xs[i];
            a2[i] += r2[i] * xs[i];
            a3[i] += r3[i] * xs[i];
        }
        p0 += POS_TILE;
    }
    for (j, (a, r)) in [a0, a1, a2, a3].iter().zip([g0, g1, g2, g3]).enumerate() {
        let mut tail = F::zero();
        for p in full..n {
            tail += r[p] * x[p];
        }
        dst[j] += a.iter().fold(tail, |s, &v| s + v);
    }
}

/// Weight gradient of one image: for every tile of `CO_TILE` gradient planes
/// in `gtiles` and every tap, the dot product with the shifted input.
#[inline(always)]
fn weight_grad_portable<F: Real>(
    gtiles: &[F],
    xpad: &[F],
    span: usize,
    d: &ConvDesc,
    hp: usize,
    wp: usize,
    grad_w: &mut [F],
) {
    let (k, cin, cout) = (d.k, d.c_in, d.c_out);
    for (tile, gtile) in gtiles.chunks_exact(CO_TILE * span).enumerate() {
        let cb = tile * CO_TILE;
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let off = ci * hp * wp + ky * wp + kx;
                    let mut sums = [F::zero(); CO_TILE];
                    dot_tile(gtile, &xpad[off..off + span], &mut sums);
                    for (j, &v) in sums.iter().enumerate().take(cout - cb) {
                        grad_w[(((cb + j) * cin + ci) * k + ky) * k + kx] += v;
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn weight_grad_avx2<F: Real>(
    gtiles: &[F],
    xpad: &[F],
    span: usize,
    d: &ConvDesc,
    hp: usize,
    wp: usize,
    grad_w: &mut [F],
) {
    weight_grad_portable(gtiles, xpad, span, d, hp, wp, grad_w)
}

fn weight_grad<F: Real>(gtiles: &[F], xpad: &[F], span: usize, d: &ConvDesc, hp: usize, wp: usize, grad_w: &mut [F]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports the enabled feature.
        return unsafe { weight_grad_avx2(gtiles, xpad, span, d, hp, wp, grad_w) };
    }
    weight_grad_portable(gtiles, xpad, span, d, hp, wp, grad_w)
}

pub(crate) fn conv2d_backward_raw<F: Real>(
    x: &[F],
    s: FrameShape,
    p: &Conv2dParams<'_, F>,
    grad_out: &[F],
    want_grad_x: bool,
) -> Result<RawConvGrads<F>> {
    let d = p.desc();
    let (ho, wo) = check_input(s, &d)?;
    if grad_out.len() != s.n * d.c_out * ho * wo {
        return Err(Error::shape(format!(
            "conv output gradient has {} elements, expected {}",
            grad_out.len(),
            s.n * d.c_out * ho * wo
        )));
    }
    if d.stride == 1 && d.pad < d.k {
        return Ok(backward_unit_stride(x, s, p, grad_out, want_grad_x, ho, wo));
    }
    let (k, stride, pad) = (d.k, d.stride, d.pad);
    let (hp, wp) = (s.h + 2 * pad, s.w + 2 * pad);
    let w = p.weights.data();

    let mut grad_b = vec![F::zero(); d.c_out];
    let mut grad_w = vec![F::zero(); w.len()];
    let mut grad_x = want_grad_x.then(|| vec![F::zero(); s.len()]);
    let mut xpad = vec![F::zero(); d.c_in * hp * wp];
    let mut gpad = vec![F::zero(); if want_grad_x { d.c_in * hp * wp } else { 0 }];

    for img in 0..s.n {
        pad_into(&x[img * s.image_len()..], s.c, s.h, s.w, pad, &mut xpad);
        gpad.fill(F::zero());
        for co in 0..d.c_out {
            let g = &grad_out[(img * d.c_out + co) * ho * wo..][..ho * wo];
            grad_b[co] += g.iter().copied().sum::<F>();
            for ky in 0..k {
                for kx in 0..k {
                    for ci in 0..d.c_in {
                        let widx = ((co * d.c_in + ci) * k + ky) * k + kx;
                        let off = ci * hp * wp + ky * wp + kx;
                        let mut sum = F::zero();
                        for oy in 0..ho {
                            let row = off + oy * stride * wp;
                            for (ox, &gv) in g[oy * wo..(oy + 1) * wo].iter().enumerate() {
                                sum += gv * xpad[row + ox * stride];
                            }
                        }
                        grad_w[widx] += sum;
                        if want_grad_x {
                            let wv = w[widx];
                            for oy in 0..ho {
                                let row = off + oy * stride * wp;
                                for (ox, &gv) in g[oy * wo..(oy + 1) * wo].iter().enumerate() {
                                    gpad[row + ox * stride] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(gx) = grad_x.as_mut() {
            let dst = &mut gx[img * s.image_len()..(img + 1) * s.image_len()];
            for ci in 0..s.c {
                for y in 0..s.h {
                    let src = (ci * hp + y + pad) * wp + pad;
                    dst[(ci * s.h + y) * s.w..][..s.w].copy_from_slice(&gpad[src..src + s.w]);
                }
            }
        }
    }
    Ok(RawConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}

/// Stride-1 backward. The input gradient is the correlation of the output
/// gradient, bordered by `k - 1 - pad`, with the spatially flipped and
/// transposed kernel.
fn backward_unit_stride<F: Real>(
    x: &[F],
    s: FrameShape,
    p: &Conv2dParams<'_, F>,
    grad_out: &[F],
    want_grad_x: bool,
    ho: usize,
    wo: usize,
) -> RawConvGrads<F> {
    let d = p.desc();
    let (k, pad, cin, cout) = (d.k, d.pad, d.c_in, d.c_out);
    let (hp, wp) = (s.h + 2 * pad, s.w + 2 * pad);
    let w = p.weights.data();
    let span = (ho - 1) * wp + wo;
    let out_len = ho * wo;

    let mut grad_b = vec![F::zero(); cout];
    let mut grad_w = vec![F::zero(); w.len()];
    let mut xpad = vec![F::zero(); cin * hp * wp];
    // gradient planes laid out with row width `wp`, junk columns and the
    // channels padding the last tile zero
    let mut gtiles = vec![F::zero(); cout.div_ceil(CO_TILE) * CO_TILE * span];

    let border = k - 1 - pad;
    let (hg, wg) = (ho + 2 * border, wo + 2 * border);
    let flipped = want_grad_x.then(|| {
        Correlation::new(tap_offsets(cout, k, hg, wg), cin, vec![F::zero(); cin], |ci, t| {
            let (ky, kx, co) = (t / (k * cout), t / cout % k, t % cout);
            w[((co * cin + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)]
        })
    });
    let gx_span = (s.h - 1) * wg + s.w;
    let mut gpad = vec![F::zero(); if want_grad_x { cout * hg * wg } else { 0 }];
    let mut gx_planes = vec![F::zero(); if want_grad_x { cin * gx_span } else { 0 }];
    let mut grad_x = want_grad_x.then(|| vec![F::zero(); s.len()]);

    for img in 0..s.n {
        pad_into(&x[img * s.image_len()..], cin, s.h, s.w, pad, &mut xpad);
        let g_img = &grad_out[img * cout * out_len..(img + 1) * cout * out_len];
        for (co, g) in g_img.chunks_exact(out_len).enumerate() {
            grad_b[co] += g.iter().copied().sum::<F>();
        }
        gtiles.fill(F::zero());
        for (co, g) in g_img.chunks_exact(out_len).enumerate() {
            for oy in 0..ho {
                gtiles[co * span + oy * wp..][..wo].copy_from_slice(&g[oy * wo..(oy + 1) * wo]);
            }
        }
        weight_grad(&gtiles, &xpad, span, &d, hp, wp, &mut grad_w);
        if let (Some(corr), Some(gx)) = (&flipped, grad_x.as_mut()) {
            pad_into(g_img, cout, ho, wo, border, &mut gpad);
            corr.run(&gpad, gx_span, &mut gx_planes);
            crop_rows(&gx_planes, wg, cin, s.h, s.w, gx_span, &mut gx[img * s.image_len()..]);
        }
    }
    RawConvGrads {
        grad_x,
        grad_w,
        grad_b,
    }
}

/// Gradients of `sum(grad_out * conv2d_forward(x, p))` with respect to the
/// input, the weights and the bias.
pub fn conv2d_backward<F: Real>(
    x: &FrameTensor<F>,
    p: &Conv2dParams<'_, F>,
    grad_out: &FrameTensor<F>,
) -> Result<Conv2dGrads<F>> {
    let d = p.desc();
    let (ho, wo) = check_input(x.shape(), &d)?;
    let expected = FrameShape::new(x.shape().n, d.c_out, ho, wo);
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match conv output {:?}",
            grad_out.shape(),
            expected
        )));
    }
    let raw = conv2d_backward_raw(x.data(), x.shape(), p, grad_out.data(), true)?;
    Ok(Conv2dGrads {
        grad_x: FrameTensor::from_vec(x.shape(), raw.grad_x.expect("requested"))?,
        grad_w: Tensor::unlabeled(p.weights.extents().to_vec(), raw.grad_w)?,
        grad_b: Tensor::unlabeled(vec![d.c_out], raw.grad_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_input_through() {
        let c = 3;
        let mut w = vec![0.0f32; c * c];
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        let w = Tensor::unlabeled(vec![c, c, 1, 1], w).unwrap();
        let b = Tensor::unlabeled(vec![c], vec![0.0; c]).unwrap();
        let s = FrameShape::new(2, c, 3, 4);
        let x = FrameTensor::from_vec(s, (0..s.len()).map(|i| i as f32 * 0.5 - 3.0).collect()).unwrap();
        let y = conv2d_forward(&x, &Conv2dParams::new(&w, &b, 1, 0).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let w = Tensor::unlabeled(vec![2, 1, 3, 3], vec![0.0f32; 18]).unwrap();
        let b = Tensor::unlabeled(vec![2], vec![1.5, -2.0]).unwrap();
        let x = FrameTensor::from_vec(FrameShape::new(1, 1, 4, 4), vec![7.0f32; 16]).unwrap();
        let y = conv2d_forward(&x, &Conv2dParams::new(&w, &b, 1, 1).unwrap()).unwrap();
        assert_eq!(y.shape(), FrameShape::new(1, 2, 4, 4));
        assert!(y.data()[..16].iter().all(|&v| v == 1.5));
        assert!(y.data()[16..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn shape_errors() {
        let w = Tensor::unlabeled(vec![2, 3, 3, 3], vec![0.0f32; 54]).unwrap();
        let b = Tensor::unlabeled(vec![2], vec![0.0f32; 2]).unwrap();
        let p = Conv2dParams::new(&w, &b, 1, 0).unwrap();
        let wrong_c = FrameTensor::<f32>::zeros(FrameShape::new(1, 2, 5, 5)).unwrap();
        assert!(matches!(conv2d_forward(&wrong_c, &p), Err(Error::InvalidShape(_))));
        let too_small = FrameTensor::<f32>::zeros(FrameShape::new(1, 3, 2, 5)).unwrap();
        assert!(matches!(conv2d_forward(&too_small, &p), Err(Error::InvalidShape(_))));
        let bad_bias = Tensor::unlabeled(vec![3], vec![0.0f32; 3]).unwrap();
        assert!(Conv2dParams::new(&w, &bad_bias, 1, 0).is_err());
        assert!(Conv2dParams::new(&w, &b, 0, 0).is_err());
        let x = FrameTensor::<f32>::zeros(FrameShape::new(1, 3, 5, 5)).unwrap();
        let g = FrameTensor::<f32>::zeros(FrameShape::new(1, 2, 4, 4)).unwrap();
        assert!(matches!(conv2d_backward(&x, &p, &g), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let w = Tensor::unlabeled(vec![2, 2, 3, 3], (0..36).map(|i| i as f32 * 0.1).collect()).unwrap();
        let b = Tensor::unlabeled(vec![2], vec![1.0f32, 2.0]).unwrap();
        let p = Conv2dParams::new(&w, &b, 1, 1).unwrap();
        let x = FrameTensor::from_vec(FrameShape::new(1, 2, 3, 3), (0..18).map(|i| i as f32).collect()).unwrap();
        let g = FrameTensor::zeros(FrameShape::new(1, 2, 3, 3)).unwrap();
        let grads = conv2d_backward(&x, &p, &g).unwrap();
        assert!(grads.grad_x.data().iter().all(|&v| v == 0.0));
        assert!(grads.grad_w.data().iter().all(|&v| v == 0.0));
        assert!(grads.grad_b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_sums_channel() {
        let w = Tensor::unlabeled(vec![2, 1, 1, 1], vec![1.0f32, 1.0]).unwrap();
        let b = Tensor::unlabeled(vec![2], vec![0.0f32; 2]).unwrap();
        let p = Conv2dParams::new(&w, &b, 1, 0).unwrap();
        let x = FrameTensor::zeros(FrameShape::new(2, 1, 2, 1)).unwrap();
        let g = FrameTensor::from_vec(FrameShape::new(2, 2, 2, 1), vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let grads = conv2d_backward(&x, &p, &g).unwrap();
        assert_eq!(grads.grad_b.data(), &[1.0 + 2.0 + 5.0 + 6.0, 3.0 + 4.0 + 7.0 + 8.0]);
    }
}

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Axis, FrameShape, FrameTensor, Tensor};

pub(crate) fn relu_in_place<F: Real>(x: &mut [F]) {
    for v in x {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Zeroes `grad` where the activation `y` (pre- or post-ReLU) is not positive.
pub(crate) fn relu_mask_in_place<F: Real>(y: &[F], grad: &mut [F]) {
    for (g, &v) in grad.iter_mut().zip(y) {
        if v <= F::zero() {
            *g = F::zero();
        }
    }
}

pub fn relu_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    relu_in_place(out.data_mut());
    out
}

/// Gradient through ReLU, taking the derivative at zero to be zero.
pub fn relu_backward<F: Real>(x: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    if x.extents() != grad_out.extents() {
        return Err(Error::shape(format!(
            "relu gradient {:?} does not match input {:?}",
            grad_out.extents(),
            x.extents()
        )));
    }
    let mut g = grad_out.clone();
    relu_mask_in_place(x.data(), g.data_mut());
    Ok(g)
}

pub(crate) fn global_avg_pool_raw<F: Real>(x: &[F], s: FrameShape) -> Vec<F> {
    let denom = F::lit(s.plane() as f64);
    x.chunks_exact(s.plane())
        .map(|plane| plane.iter().copied().sum::<F>() / denom)
        .collect()
}

pub(crate) fn global_avg_pool_backward_raw<F: Real>(grad: &[F], s: FrameShape) -> Vec<F> {
    let denom = F::lit(s.plane() as f64);
    let mut out = Vec::with_capacity(s.len());
    for &g in grad {
        let v = g / denom;
        out.extend(std::iter::repeat(v).take(s.plane()));
    }
    out
}

/// Per-channel spatial mean: `(N, C, H, W)` to `(N, C)`.
pub fn global_avg_pool_forward<F: Real>(x: &FrameTensor<F>) -> Tensor<F> {
    let s = x.shape();
    Tensor::from_vec(vec![s.n, s.c], vec![Axis::N, Axis::C], global_avg_pool_raw(x.data(), s))
        .expect("one mean per (n, c)")
}

pub fn global_avg_pool_backward<F: Real>(grad_out: &Tensor<F>, input: FrameShape) -> Result<FrameTensor<F>> {
    if grad_out.extents() != [input.n, input.c] {
        return Err(Error::shape(format!(
            "pool gradient {:?} does not match input {:?}",
            grad_out.extents(),
            input
        )));
    }
    FrameTensor::from_vec(input, global_avg_pool_backward_raw(grad_out.data(), input))
}

#[derive(Debug, Clone, Copy)]
pub struct LinearParams<'a, F = f32> {
    pub weights: &'a Tensor<F>,
    pub bias: &'a Tensor<F>,
}

impl<'a, F> LinearParams<'a, F> {
    /// `weights` is `(out_features, in_features)`, `bias` is `(out_features)`.
    pub fn new(weights: &'a Tensor<F>, bias: &'a Tensor<F>) -> Result<Self> {
        let e = weights.extents();
        if e.len() != 2 || bias.extents() != [e[0]] {
            return Err(Error::shape(format!(
                "linear weights {:?} and bias {:?} are inconsistent",
                e,
                bias.extents()
            )));
        }
        Ok(LinearParams { weights, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weights.extents()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.extents()[0]
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrads<F = f32> {
    pub grad_x: Tensor<F>,
    pub grad_w: Tensor<F>,
    pub grad_b: Tensor<F>,
}

pub(crate) fn linear_forward_raw<F: Real>(x: &[F], rows: usize, p: &LinearParams<'_, F>) -> Vec<F> {
    let (inf, outf) = (p.in_features(), p.out_features());
    let w = p.weights.data();
    let b = p.bias.data();
    let mut out = Vec::with_capacity(rows * outf);
    for r in 0..rows {
        let xr = &x[r * inf..(r + 1) * inf];
        for o in 0..outf {
            let mut acc = b[o];
            for (&wv, &xv) in w[o * inf..(o + 1) * inf].iter().zip(xr) {
                acc += wv * xv;
            }
            out.push(acc);
        }
    }
    out
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub(crate) fn linear_backward_raw<F: Real>(
    x: &[F],
    rows: usize,
    p: &LinearParams<'_, F>,
    grad_out: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (inf, outf) = (p.in_features(), p.out_features());
    let w = p.weights.data();
    let mut gx = vec![F::zero(); rows * inf];
    let mut gw = vec![F::zero(); outf * inf];
    let mut gb = vec![F::zero(); outf];
    for r in 0..rows {
        let xr = &x[r * inf..(r + 1) * inf];
        let gxr = &mut gx[r * inf..(r + 1) * inf];
        for o in 0..outf {
            let g = grad_out[r * outf + o];
            gb[o] += g;
            let wr = &w[o * inf..(o + 1) * inf];
            let gwr = &mut gw[o * inf..(o + 1) * inf];
            for i in 0..inf {
                gwr[i] += g * xr[i];
                gxr[i] += g * wr[i];
            }
        }
    }
    (gx, gw, gb)
}

fn check_linear_input<F>(x: &Tensor<F>, p: &LinearParams<'_, F>) -> Result<usize> {
    match x.extents() {
        &[rows, inf] if inf == p.in_features() => Ok(rows),
        e => Err(Error::shape(format!(
            "linear layer expects (rows, {}), got {e:?}",
            p.in_features()
        ))),
    }
}

/// `(N, in)` to `(N, out)`.
pub fn linear_forward<F: Real>(x: &Tensor<F>, p: &LinearParams<'_, F>) -> Result<Tensor<F>> {
    let rows = check_linear_input(x, p)?;
    Tensor::from_vec(
        vec![rows, p.out_features()],
        vec![Axis::N, Axis::C],
        linear_forward_raw(x.data(), rows, p),
    )
}

pub fn linear_backward<F: Real>(x: &Tensor<F>, p: &LinearParams<'_, F>, grad_out: &Tensor<F>) -> Result<LinearGrads<F>> {
    let rows = check_linear_input(x, p)?;
    if grad_out.extents() != [rows, p.out_features()] {
        return Err(Error::shape(format!(
            "linear output gradient {:?} does not match ({rows}, {})",
            grad_out.extents(),
            p.out_features()
        )));
    }
    let (gx, gw, gb) = linear_backward_raw(x.data(), rows, p, grad_out.data());
    Ok(LinearGrads {
        grad_x: Tensor::from_vec(x.extents().to_vec(), x.axes().to_vec(), gx)?,
        grad_w: Tensor::unlabeled(p.weights.extents().to_vec(), gw)?,
        grad_b: Tensor::unlabeled(vec![p.out_features()], gb)?,
    })
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient
/// with respect to the logits. The maximum logit is subtracted first.
pub fn softmax_cross_entropy<F: Real>(logits: &[F], label: usize) -> Result<(F, Vec<F>)> {
    if logits.is_empty() {
        return Err(Error::shape("softmax over zero classes"));
    }
    if label >= logits.len() {
        return Err(Error::Index(format!("label {label} with {} classes", logits.len())));
    }
    let m = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    let loss = sum.ln() - (logits[label] - m);
    let mut grad: Vec<F> = exps.iter().map(|&e| e / sum).collect();
    grad[label] -= F::one();
    Ok((loss, grad))
}

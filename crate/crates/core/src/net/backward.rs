use crate::error::Result;
use crate::net::forward::{BlockParams, BlockTape, NetParams, NetTape};
use crate::net::spec::{BlockSpec, NetworkSpec, Placement};
use crate::net::weights::{conv_names, WeightStore};
use crate::nn::{
    conv2d_backward_raw, global_avg_pool_backward_raw, linear_backward_raw, relu_mask_in_place, Conv2dParams,
};
use crate::scalar::Real;
use crate::shift::shift_adjoint;
use crate::tensor::{Activation, FrameShape, Tensor};

fn store_conv<F: Real>(
    grads: &mut WeightStore<F>,
    prefix: &str,
    p: &Conv2dParams<'_, F>,
    gw: Vec<F>,
    gb: Vec<F>,
) -> Result<()> {
    let (w, b) = conv_names(prefix);
    grads.insert(w, Tensor::unlabeled(p.weights.extents().to_vec(), gw)?);
    grads.insert(b, Tensor::unlabeled(vec![gb.len()], gb)?);
    Ok(())
}

fn block_backward<F: Real>(
    index: usize,
    block: &BlockSpec,
    bp: &BlockParams<'_, F>,
    tape: &BlockTape<F>,
    grad_y: Vec<F>,
    grads: &mut WeightStore<F>,
) -> Result<Vec<F>> {
    let p = format!("blocks.{index}");
    let xs = tape.input.shape();
    let fs = xs.frames();
    let br = &tape.branch;

    let mut g2 = grad_y.clone();
    relu_mask_in_place(&br.h2, &mut g2);
    let c2 = conv2d_backward_raw(&br.h1, br.s1, &bp.conv2, &g2, true)?;
    store_conv(grads, &format!("{p}.conv2"), &bp.conv2, c2.grad_w, c2.grad_b)?;

    let mut g1 = c2.grad_x.expect("requested");
    relu_mask_in_place(&br.h1, &mut g1);
    let branch_in = tape.shifted.as_ref().unwrap_or(&tape.input);
    let c1 = conv2d_backward_raw(branch_in.data(), fs, &bp.conv1, &g1, true)?;
    store_conv(grads, &format!("{p}.conv1"), &bp.conv1, c1.grad_w, c1.grad_b)?;

    let g_branch = Activation::from_vec(xs, c1.grad_x.expect("requested"))?;
    let mut g_x = match tape.shifted {
        Some(_) => shift_adjoint(&g_branch, &block.shift)?.into_vec(),
        None => g_branch.into_vec(),
    };

    if block.placement == Placement::Residual {
        match &bp.downsample {
            Some(ds) => {
                let d = conv2d_backward_raw(tape.input.data(), fs, ds, &grad_y, true)?;
                store_conv(grads, &format!("{p}.downsample"), ds, d.grad_w, d.grad_b)?;
                for (g, s) in g_x.iter_mut().zip(d.grad_x.expect("requested")) {
                    *g += s;
                }
            }
            None => {
                for (g, &s) in g_x.iter_mut().zip(&grad_y) {
                    *g += s;
                }
            }
        }
    }
    Ok(g_x)
}

/// Parameter gradients given the gradient of the per-frame logits
/// (`N * T * classes`, frame-major) of a recorded forward pass.
pub(crate) fn backward<F: Real>(
    spec: &NetworkSpec,
    np: &NetParams<'_, F>,
    tape: &NetTape<F>,
    grad_logits: &[F],
) -> Result<WeightStore<F>> {
    let mut grads = WeightStore::new();
    let frames = tape.last.n;

    let (g_pooled, gw, gb) = linear_backward_raw(&tape.pooled, frames, &np.head, grad_logits);
    grads.insert("head.weight", Tensor::unlabeled(np.head.weights.extents().to_vec(), gw)?);
    grads.insert("head.bias", Tensor::unlabeled(vec![gb.len()], gb)?);

    let mut g = global_avg_pool_backward_raw(&g_pooled, tape.last);
    for (i, ((block, bp), bt)) in spec.blocks.iter().zip(&np.blocks).zip(&tape.blocks).enumerate().rev() {
        g = block_backward(i, block, bp, bt, g, &mut grads)?;
    }

    relu_mask_in_place(&tape.stem_out, &mut g);
    let cs = tape.clip.shape();
    let fs = FrameShape::new(cs.n * cs.t, cs.c, cs.h, cs.w);
    let stem = conv2d_backward_raw(tape.clip.data(), fs, &np.stem, &g, false)?;
    store_conv(&mut grads, "stem", &np.stem, stem.grad_w, stem.grad_b)?;
    Ok(grads)
}

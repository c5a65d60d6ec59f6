//! Clip-level inference.
//!
//! Convolutions run frame-wise: a clip `(N, T, C, H, W)` is handed to the
//! kernels as a batch of `N * T` frames. Only the shift crosses frames.

use crate::error::{Error, Result};
use crate::net::spec::{BlockSpec, NetworkSpec, Placement};
use crate::net::weights::WeightStore;
use crate::nn::{
    conv2d_forward_raw, global_avg_pool_raw, linear_forward_raw, macs_of, params_of, relu_in_place, Conv2dParams,
    LinearParams,
};
use crate::scalar::Real;
use crate::shift::shift_offline;
use crate::tensor::{Activation, Axis, ClipShape, FrameShape, Tensor};

pub(crate) struct BlockParams<'a, F> {
    pub conv1: Conv2dParams<'a, F>,
    pub conv2: Conv2dParams<'a, F>,
    pub downsample: Option<Conv2dParams<'a, F>>,
}

/// Weights of a network resolved against its spec.
pub(crate) struct NetParams<'a, F> {
    pub stem: Conv2dParams<'a, F>,
    pub blocks: Vec<BlockParams<'a, F>>,
    pub head: LinearParams<'a, F>,
}

pub(crate) fn block_params<'a, F>(block: &BlockSpec, w: &'a WeightStore<F>, index: usize) -> Result<BlockParams<'a, F>> {
    let p = format!("blocks.{index}");
    let downsample = match (block.placement, &block.downsample) {
        (Placement::Residual, Some(ds)) => Some(w.conv(&format!("{p}.downsample"), ds)?),
        _ => None,
    };
    Ok(BlockParams {
        conv1: w.conv(&format!("{p}.conv1"), &block.conv1)?,
        conv2: w.conv(&format!("{p}.conv2"), &block.conv2)?,
        downsample,
    })
}

impl<'a, F> NetParams<'a, F> {
    pub fn resolve(spec: &NetworkSpec, w: &'a WeightStore<F>) -> Result<Self> {
        spec.validate()?;
        w.validate(spec)?;
        let blocks = spec
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| block_params(b, w, i))
            .collect::<Result<_>>()?;
        Ok(NetParams {
            stem: w.conv("stem", &spec.stem)?,
            blocks,
            head: w.linear("head")?,
        })
    }
}

/// Output of the residual branch `relu(conv2(relu(conv1(.))))`, with the
/// intermediate kept for backpropagation.
pub(crate) struct Branch<F> {
    pub h1: Vec<F>,
    pub s1: FrameShape,
    pub h2: Vec<F>,
    pub s2: FrameShape,
}

pub(crate) fn branch<F: Real>(input: &[F], fs: FrameShape, bp: &BlockParams<'_, F>) -> Result<Branch<F>> {
    let (mut h1, s1) = conv2d_forward_raw(input, fs, &bp.conv1)?;
    relu_in_place(&mut h1);
    let (mut h2, s2) = conv2d_forward_raw(&h1, s1, &bp.conv2)?;
    relu_in_place(&mut h2);
    Ok(Branch { h1, s1, h2, s2 })
}

/// Adds the skip path of a residual block onto the branch output `y`.
pub(crate) fn add_skip<F: Real>(
    x: &[F],
    fs: FrameShape,
    bp: &BlockParams<'_, F>,
    y: &mut [F],
    ys: FrameShape,
) -> Result<()> {
    match &bp.downsample {
        Some(ds) => {
            let (skip, ss) = conv2d_forward_raw(x, fs, ds)?;
            if ss != ys {
                return Err(Error::spec(format!("downsample yields {ss:?}, branch yields {ys:?}")));
            }
            for (o, s) in y.iter_mut().zip(skip) {
                *o += s;
            }
        }
        None => {
            if fs != ys {
                return Err(Error::spec(format!(
                    "identity skip needs matching shapes, got {fs:?} and {ys:?}"
                )));
            }
            for (o, &s) in y.iter_mut().zip(x) {
                *o += s;
            }
        }
    }
    Ok(())
}

/// Everything a block computed during a recorded forward pass.
pub(crate) struct BlockTape<F> {
    pub input: Activation<F>,
    pub shifted: Option<Activation<F>>,
    pub branch: Branch<F>,
}

pub(crate) struct NetTape<F> {
    pub clip: Activation<F>,
    pub stem_out: Vec<F>,
    pub blocks: Vec<BlockTape<F>>,
    pub last: FrameShape,
    pub pooled: Vec<F>,
}

fn block_offline<F: Real>(
    x: Activation<F>,
    block: &BlockSpec,
    bp: &BlockParams<'_, F>,
    tape: Option<&mut Vec<BlockTape<F>>>,
) -> Result<Activation<F>> {
    let s = x.shape();
    let fs = s.frames();
    let shifted = match block.placement {
        Placement::None => None,
        Placement::InPlace | Placement::Residual => Some(shift_offline(&x, &block.shift)?),
    };
    let br = branch(shifted.as_ref().unwrap_or(&x).data(), fs, bp)?;
    let mut y = br.h2.clone();
    if block.placement == Placement::Residual {
        add_skip(x.data(), fs, bp, &mut y, br.s2)?;
    }
    let out = Activation::from_vec(ClipShape::new(s.n, s.t, br.s2.c, br.s2.h, br.s2.w), y)?;
    if let Some(t) = tape {
        t.push(BlockTape {
            input: x,
            shifted,
            branch: br,
        });
    }
    Ok(out)
}

/// One block on a clip. Weights are looked up under `blocks.{index}`.
pub fn block_forward<F: Real>(
    x: &Activation<F>,
    block: &BlockSpec,
    w: &WeightStore<F>,
    index: usize,
) -> Result<Activation<F>> {
    let bp = block_params(block, w, index)?;
    block_offline(x.clone(), block, &bp, None)
}

fn check_clip(spec: &NetworkSpec, s: ClipShape) -> Result<()> {
    let i = spec.input;
    if (s.c, s.h, s.w, s.t) != (i.c, i.h, i.w, i.t) {
        return Err(Error::shape(format!(
            "clip {s:?} does not match the network input {i:?}"
        )));
    }
    Ok(())
}

pub(crate) fn forward_offline_impl<F: Real>(
    clip: &Activation<F>,
    spec: &NetworkSpec,
    np: &NetParams<'_, F>,
    mut tape: Option<&mut NetTape<F>>,
) -> Result<Tensor<F>> {
    let s = clip.shape();
    check_clip(spec, s)?;
    let (mut stem, ss) = conv2d_forward_raw(clip.data(), s.frames(), &np.stem)?;
    relu_in_place(&mut stem);
    if let Some(t) = tape.as_deref_mut() {
        t.stem_out = stem.clone();
    }
    let mut x = Activation::from_vec(ClipShape::new(s.n, s.t, ss.c, ss.h, ss.w), stem)?;
    for (block, bp) in spec.blocks.iter().zip(&np.blocks) {
        x = block_offline(x, block, bp, tape.as_deref_mut().map(|t| &mut t.blocks))?;
    }
    let last = x.shape().frames();
    let pooled = global_avg_pool_raw(x.data(), last);
    let logits = linear_forward_raw(&pooled, last.n, &np.head);
    if let Some(t) = tape {
        t.last = last;
        t.pooled = pooled;
    }
    Tensor::from_vec(vec![s.n, s.t, spec.num_classes()], vec![Axis::N, Axis::T, Axis::C], logits)
}

/// Per-frame logits `(N, T, classes)` for a clip, before consensus.
pub fn forward_offline<F: Real>(clip: &Activation<F>, spec: &NetworkSpec, w: &WeightStore<F>) -> Result<Tensor<F>> {
    let np = NetParams::resolve(spec, w)?;
    forward_offline_impl(clip, spec, &np, None)
}

pub(crate) fn forward_recorded<F: Real>(
    clip: &Activation<F>,
    spec: &NetworkSpec,
    np: &NetParams<'_, F>,
) -> Result<(Tensor<F>, NetTape<F>)> {
    let mut tape = NetTape {
        clip: clip.clone(),
        stem_out: Vec::new(),
        blocks: Vec::with_capacity(spec.blocks.len()),
        last: FrameShape::new(0, 0, 0, 0),
        pooled: Vec::new(),
    };
    let logits = forward_offline_impl(clip, spec, np, Some(&mut tape))?;
    Ok((logits, tape))
}

/// Mean over the time axis: `(N, T, K)` to `(N, K)`.
///
/// Each mean sums its terms in ascending order, so the result is the same
/// bit pattern for any permutation of the frames.
pub fn consensus_average<F: Real>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    let &[n, t, k] = logits.extents() else {
        return Err(Error::shape(format!(
            "consensus expects (N, T, K) logits, got {:?}",
            logits.extents()
        )));
    };
    let denom = F::lit(t as f64);
    let data = logits.data();
    let mut out = Vec::with_capacity(n * k);
    let mut terms = Vec::with_capacity(t);
    for ni in 0..n {
        for ki in 0..k {
            terms.clear();
            terms.extend((0..t).map(|ti| data[(ni * t + ti) * k + ki]));
            terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let sum: F = terms.iter().copied().sum();
            out.push(sum / denom);
        }
    }
    Tensor::from_vec(vec![n, k], vec![Axis::N, Axis::C], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkCost {
    pub macs_per_frame: u64,
    pub params: u64,
}

/// MACs per frame and parameter count, summed over every executed layer.
pub fn count_network(spec: &NetworkSpec) -> Result<NetworkCost> {
    let mut cost = NetworkCost {
        macs_per_frame: 0,
        params: 0,
    };
    for (_, layer, input) in spec.layers()? {
        cost.macs_per_frame += macs_of(&layer, input)?;
        cost.params += params_of(&layer);
    }
    Ok(cost)
}

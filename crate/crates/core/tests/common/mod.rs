#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsm_core::net::{BlockSpec, HeadSpec, InputSpec, NetworkSpec, Placement, WeightStore};
use tsm_core::nn::ConvDesc;
use tsm_core::shift::{Padding, ShiftSpec};
use tsm_core::{Activation, ClipShape, Real, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn tensor(rng: &mut impl Rng, extents: &[usize]) -> Tensor<f64> {
    Tensor::unlabeled(extents.to_vec(), uniform(rng, extents.iter().product())).unwrap()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` with respect to `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Largest relative error between `analytic` and central differences of
/// `f` over every coordinate of `x`.
pub fn max_fd_error(x: &[f64], analytic: &[f64], h: f64, floor: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut x = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let n = central_diff(&mut x, i, h, &mut f);
        worst = worst.max(rel_err(analytic[i], n, floor));
    }
    worst
}

/// A valid random network: 1 to `max_blocks` blocks with mixed placements,
/// channel changes, strided blocks with a 1x1 skip, and bi-directional
/// shifts. Circular padding only when `circular` is set.
pub fn random_network(rng: &mut impl Rng, max_blocks: usize, circular: bool) -> NetworkSpec {
    let input = InputSpec {
        c: rng.gen_range(1..=3),
        h: rng.gen_range(4..=7),
        w: rng.gen_range(4..=7),
        t: rng.gen_range(1..=5),
    };
    let k = if rng.gen_bool(0.5) { 1 } else { 3 };
    let stem = ConvDesc::same(input.c, rng.gen_range(2..=6), k);
    let mut c = stem.c_out;
    let blocks = (0..rng.gen_range(1..=max_blocks))
        .map(|_| {
            let placement = [Placement::None, Placement::InPlace, Placement::Residual][rng.gen_range(0..3)];
            let c_out = if rng.gen_bool(0.5) { c } else { rng.gen_range(2..=6) };
            let stride = if rng.gen_bool(0.25) { 2 } else { 1 };
            let k = if rng.gen_bool(0.7) { 3 } else { 1 };
            let n_fwd = rng.gen_range(0..=c);
            let n_bwd = rng.gen_range(0..=c - n_fwd);
            let padding = if circular && rng.gen_bool(0.5) { Padding::Circular } else { Padding::Zero };
            let reshapes = c_out != c || stride != 1;
            let block = BlockSpec {
                conv1: ConvDesc::new(c, c_out, k, stride, k / 2),
                conv2: ConvDesc::same(c_out, c_out, k),
                placement,
                shift: ShiftSpec::offline(n_fwd, n_bwd).with_padding(padding),
                downsample: (placement == Placement::Residual && reshapes).then(|| ConvDesc::new(c, c_out, 1, stride, 0)),
            };
            c = c_out;
            block
        })
        .collect();
    let spec = NetworkSpec {
        input,
        stem,
        blocks,
        head: HeadSpec { classes: rng.gen_range(2..=4) },
    };
    spec.validate().expect("generator yields valid specs");
    spec
}

pub fn random_clip<F: Real>(rng: &mut impl Rng, spec: &NetworkSpec, n: usize) -> Activation<F> {
    let i = spec.input;
    let s = ClipShape::new(n, i.t, i.c, i.h, i.w);
    Activation::from_vec(s, uniform(rng, s.len()).into_iter().map(F::lit).collect()).unwrap()
}

/// Random weights with non-zero biases, so no layer starts out inert.
pub fn random_weights<F: Real>(spec: &NetworkSpec, seed: u64) -> WeightStore<F> {
    let mut w = WeightStore::<F>::init(spec, seed).unwrap();
    let mut r = rng(seed ^ 0xb1a5);
    for (name, t) in w.iter_mut() {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = F::lit(r.gen_range(-0.2..0.2));
            }
        }
    }
    w
}

//! Frame-at-a-time inference with uni-directional shift caches.
//!
//! Each shift-bearing block owns a [`ShiftCache`] holding the forward group of
//! the previous frame. A step swaps the current forward group with the cache,
//! so every block sees exactly what the offline network sees at that time
//! index under zero temporal padding.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::net::forward::{add_skip, branch, NetParams};
use crate::net::{NetworkSpec, Placement, WeightStore};
use crate::nn::{conv2d_forward_raw, global_avg_pool_raw, linear_forward_raw, relu_in_place, Conv2dParams};
use crate::scalar::Real;
use crate::shift::{shift_online_step_in_place, ShiftCache, ShiftMode};
use crate::tensor::{Axis, FrameShape, FrameTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamOptions {
    /// Turn bi-directional shifts into uni-directional ones (backward group
    /// dropped) instead of rejecting the network.
    pub convert_bidirectional: bool,
    /// Average only the last `window` frames. `None` averages every frame.
    pub window: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct StreamState<F = f32> {
    source: NetworkSpec,
    spec: NetworkSpec,
    batch: usize,
    caches: Vec<ShiftCache<F>>,
    /// Block index of each cache.
    cached_blocks: Vec<usize>,
    converted: Vec<usize>,
    window: Option<usize>,
    recent: VecDeque<Vec<f64>>,
    running_sum: Vec<f64>,
    frames_seen: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<F = f32> {
    /// `(N, classes)` logits of this frame.
    pub logits: Tensor<F>,
    /// `(N, classes)` mean of the logits seen so far (or within the window).
    pub consensus: Tensor<F>,
    /// Multiply-accumulates executed per image in this step.
    pub macs_per_image: u64,
}

/// Zeroed stream state for batches of `batch` images.
pub fn stream_init<F: Real>(spec: &NetworkSpec, batch: usize, opts: StreamOptions) -> Result<StreamState<F>> {
    let shapes = spec.shapes()?;
    if batch == 0 {
        return Err(Error::shape("stream batch must be positive"));
    }
    if opts.window == Some(0) {
        return Err(Error::spec("consensus window must be positive"));
    }
    let mut effective = spec.clone();
    let mut converted = Vec::new();
    let mut caches = Vec::new();
    let mut cached_blocks = Vec::new();
    for (i, block) in effective.blocks.iter_mut().enumerate() {
        if block.placement == Placement::None {
            continue;
        }
        if block.shift.mode == ShiftMode::Bidirectional {
            if !opts.convert_bidirectional {
                return Err(Error::spec(format!(
                    "block {i} has a bi-directional shift, which needs future frames"
                )));
            }
            block.shift = block.shift.to_unidirectional();
            converted.push(i);
        }
        let input = shapes.blocks[i].0;
        caches.push(ShiftCache::new(batch, block.shift.n_fwd, input.h, input.w));
        cached_blocks.push(i);
    }
    effective.validate()?;
    let classes = spec.num_classes();
    Ok(StreamState {
        source: spec.clone(),
        spec: effective,
        batch,
        caches,
        cached_blocks,
        converted,
        window: opts.window,
        recent: VecDeque::with_capacity(opts.window.unwrap_or(0)),
        running_sum: vec![0.0; batch * classes],
        frames_seen: 0,
    })
}

impl<F: Copy + Default> StreamState<F> {
    /// The uni-directional spec the stream actually runs.
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn caches(&self) -> &[ShiftCache<F>] {
        &self.caches
    }

    /// Indices of blocks whose backward group was dropped.
    pub fn converted_blocks(&self) -> &[usize] {
        &self.converted
    }

    /// One line per converted block.
    pub fn warnings(&self) -> Vec<String> {
        self.converted
            .iter()
            .map(|&i| {
                format!(
                    "block {i}: bi-directional shift converted to uni-directional ({} backward channels left untouched)",
                    self.source.blocks[i].shift.n_bwd
                )
            })
            .collect()
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Bytes held by the shift caches.
    pub fn cache_bytes(&self) -> usize {
        self.caches.iter().map(ShiftCache::size_bytes).sum()
    }

    /// Bytes held by all per-stream buffers.
    pub fn state_bytes(&self) -> usize {
        let per_row = self.running_sum.len() * std::mem::size_of::<f64>();
        self.cache_bytes() + per_row * (1 + self.window.unwrap_or(0))
    }

    /// Zeroes every cache and forgets all frames seen.
    pub fn reset(&mut self) {
        for c in &mut self.caches {
            c.reset();
        }
        self.recent.clear();
        self.running_sum.fill(0.0);
        self.frames_seen = 0;
    }
}

pub fn stream_reset<F: Copy + Default>(state: &mut StreamState<F>) {
    state.reset();
}

fn conv_macs<F>(p: &Conv2dParams<'_, F>, out: FrameShape) -> u64 {
    let d = p.desc();
    (d.c_out * d.c_in * d.k * d.k * out.h * out.w) as u64
}

/// Runs one frame `(N, C, H, W)` through the network.
pub fn stream_step<F: Real>(
    frame: &FrameTensor<F>,
    spec: &NetworkSpec,
    w: &WeightStore<F>,
    state: &mut StreamState<F>,
) -> Result<StepOutput<F>> {
    if *spec != state.source && *spec != state.spec {
        return Err(Error::spec("stream state was initialized for a different network"));
    }
    let spec = &state.spec;
    let s = frame.shape();
    let i = spec.input;
    if (s.n, s.c, s.h, s.w) != (state.batch, i.c, i.h, i.w) {
        return Err(Error::shape(format!(
            "frame {:?} does not match batch {} of {}x{}x{} inputs",
            s.extents(),
            state.batch,
            i.c,
            i.h,
            i.w
        )));
    }
    let np = NetParams::resolve(spec, w)?;
    let mut macs = 0;

    let (mut x, mut xs) = conv2d_forward_raw(frame.data(), s, &np.stem)?;
    macs += conv_macs(&np.stem, xs);
    relu_in_place(&mut x);

    let mut cache_iter = state.caches.iter_mut().zip(&state.cached_blocks);
    for (bi, (block, bp)) in spec.blocks.iter().zip(&np.blocks).enumerate() {
        let shifted = match block.placement {
            Placement::None => None,
            Placement::InPlace | Placement::Residual => {
                let (cache, &owner) = cache_iter.next().expect("one cache per shift-bearing block");
                debug_assert_eq!(owner, bi);
                let mut f = FrameTensor::from_vec(xs, x.clone())?;
                shift_online_step_in_place(&mut f, &block.shift, cache)?;
                Some(f.into_vec())
            }
        };
        let br = branch(shifted.as_deref().unwrap_or(&x), xs, bp)?;
        macs += conv_macs(&bp.conv1, br.s1) + conv_macs(&bp.conv2, br.s2);
        let mut y = br.h2;
        if block.placement == Placement::Residual {
            add_skip(&x, xs, bp, &mut y, br.s2)?;
            if let Some(ds) = &bp.downsample {
                macs += conv_macs(ds, br.s2);
            }
        }
        x = y;
        xs = br.s2;
    }

    let pooled = global_avg_pool_raw(&x, xs);
    let logits = linear_forward_raw(&pooled, s.n, &np.head);
    macs += (np.head.in_features() * np.head.out_features()) as u64;

    let k = spec.num_classes();
    let current: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    state.frames_seen += 1;
    let consensus: Vec<F> = match state.window {
        None => {
            for (acc, &v) in state.running_sum.iter_mut().zip(&current) {
                *acc += v;
            }
            let seen = state.frames_seen as f64;
            state.running_sum.iter().map(|&v| F::lit(v / seen)).collect()
        }
        Some(window) => {
            if state.recent.len() == window {
                state.recent.pop_front();
            }
            state.recent.push_back(current);
            state.running_sum.fill(0.0);
            for row in &state.recent {
                for (acc, &v) in state.running_sum.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            let count = state.recent.len() as f64;
            state.running_sum.iter().map(|&v| F::lit(v / count)).collect()
        }
    };
    let axes = vec![Axis::N, Axis::C];
    Ok(StepOutput {
        logits: Tensor::from_vec(vec![s.n, k], axes.clone(), logits)?,
        consensus: Tensor::from_vec(vec![s.n, k], axes, consensus)?,
        macs_per_image: macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{BlockSpec, HeadSpec, InputSpec};
    use crate::nn::ConvDesc;
    use crate::shift::ShiftSpec;

    fn spec(placements: &[Placement], shift: ShiftSpec) -> NetworkSpec {
        NetworkSpec {
            input: InputSpec { c: 2, h: 5, w: 5, t: 4 },
            stem: ConvDesc::same(2, 8, 3),
            blocks: placements.iter().map(|&p| BlockSpec::basic(8, 3, p, shift)).collect(),
            head: HeadSpec { classes: 3 },
        }
    }

    #[test]
    fn one_cache_per_shift_block() {
        let s = spec(
            &[Placement::Residual, Placement::None, Placement::InPlace, Placement::Residual],
            ShiftSpec::online(1),
        );
        let st: StreamState = stream_init(&s, 2, StreamOptions::default()).unwrap();
        assert_eq!(st.caches().len(), 3);
        assert!(st.caches().iter().all(|c| c.slab().iter().all(|&v| v == 0.0)));
        assert_eq!(st.caches()[0].extents(), [2, 1, 5, 5]);
        assert_eq!(st.cache_bytes(), 3 * 2 * 5 * 5 * 4);
        assert_eq!(st.frames_seen(), 0);
    }

    #[test]
    fn no_shift_no_cache() {
        let s = spec(&[Placement::None, Placement::None], ShiftSpec::offline(1, 1));
        let st: StreamState = stream_init(&s, 1, StreamOptions::default()).unwrap();
        assert!(st.caches().is_empty());
    }

    #[test]
    fn strict_mode_rejects_bidirectional() {
        let s = spec(&[Placement::Residual], ShiftSpec::offline(1, 1));
        let r: Result<StreamState> = stream_init(&s, 1, StreamOptions::default());
        assert!(matches!(r, Err(Error::InvalidSpec(_))));
        let st: StreamState = stream_init(
            &s,
            1,
            StreamOptions {
                convert_bidirectional: true,
                window: None,
            },
        )
        .unwrap();
        assert_eq!(st.converted_blocks(), &[0]);
        assert_eq!(st.spec().blocks[0].shift, ShiftSpec::online(1));
        assert_eq!(st.warnings().len(), 1);
    }

    #[test]
    fn reset_of_fresh_state_is_noop() {
        let s = spec(&[Placement::Residual], ShiftSpec::online(2));
        let mut st: StreamState = stream_init(&s, 1, StreamOptions::default()).unwrap();
        let before = st.clone();
        stream_reset(&mut st);
        assert_eq!(st.caches(), before.caches());
        assert_eq!(st.frames_seen(), 0);
    }

    #[test]
    fn wrong_frame_shape() {
        let s = spec(&[Placement::Residual], ShiftSpec::online(2));
        let w = WeightStore::<f32>::init(&s, 1).unwrap();
        let mut st = stream_init(&s, 1, StreamOptions::default()).unwrap();
        let bad = FrameTensor::zeros(FrameShape::new(1, 2, 4, 5)).unwrap();
        assert!(matches!(stream_step(&bad, &s, &w, &mut st), Err(Error::InvalidShape(_))));
        let batch2 = FrameTensor::zeros(FrameShape::new(2, 2, 5, 5)).unwrap();
        assert!(matches!(stream_step(&batch2, &s, &w, &mut st), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn window_limits_the_average() {
        let s = spec(&[Placement::Residual], ShiftSpec::online(2));
        let w = WeightStore::<f32>::init(&s, 3).unwrap();
        let mut st = stream_init(
            &s,
            1,
            StreamOptions {
                convert_bidirectional: false,
                window: Some(1),
            },
        )
        .unwrap();
        let bytes = st.state_bytes();
        for seed in 0..3u32 {
            let f = FrameTensor::from_vec(
                FrameShape::new(1, 2, 5, 5),
                (0..50).map(|i| ((i * 7 + seed * 13) % 11) as f32 / 11.0).collect(),
            )
            .unwrap();
            let out = stream_step(&f, &s, &w, &mut st).unwrap();
            assert_eq!(out.consensus, out.logits);
            assert_eq!(st.state_bytes(), bytes);
        }
    }
}

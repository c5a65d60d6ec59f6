//! Temporal shift of channel groups along the time axis.
//!
//! A [`ShiftSpec`] splits the channels of a clip into three contiguous
//! groups: `[0, n_fwd)` moves forward in time (frame `t` receives frame
//! `t - 1`), `[n_fwd, n_fwd + n_bwd)` moves backward (frame `t` receives frame
//! `t + 1`), and the rest is untouched. Steps are always one frame. The
//! operator does no arithmetic on the values it moves.
//!
//! The online variant can only look backwards: it keeps the forward group of
//! the previous frame in a [`ShiftCache`] and swaps it into the next frame.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, ClipShape, FrameTensor};

/// Default shifted proportion per direction, as `(numerator, denominator)`.
pub const DEFAULT_FRACTION: (usize, usize) = (1, 8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Vacated slots are zero-filled; values moved past the clip edge are dropped.
    #[default]
    Zero,
    /// The clip wraps around in time. Offline experiments only.
    Circular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ShiftMode {
    #[default]
    #[serde(rename = "bi")]
    Bidirectional,
    #[serde(rename = "uni")]
    Unidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub n_fwd: usize,
    pub n_bwd: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default)]
    pub mode: ShiftMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Frame `t` receives frame `t - 1`.
    Forward,
    /// Frame `t` receives frame `t + 1`.
    Backward,
}

impl Direction {
    pub fn reversed(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelGroup {
    pub channels: Range<usize>,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPartition {
    pub forward: Range<usize>,
    pub backward: Range<usize>,
    pub untouched: Range<usize>,
}

impl ShiftSpec {
    /// Bi-directional shift with zero padding.
    pub fn offline(n_fwd: usize, n_bwd: usize) -> Self {
        ShiftSpec {
            n_fwd,
            n_bwd,
            padding: Padding::Zero,
            mode: ShiftMode::Bidirectional,
        }
    }

    /// Uni-directional shift for streaming.
    pub fn online(n_fwd: usize) -> Self {
        ShiftSpec {
            n_fwd,
            n_bwd: 0,
            padding: Padding::Zero,
            mode: ShiftMode::Unidirectional,
        }
    }

    pub fn identity() -> Self {
        ShiftSpec::offline(0, 0)
    }

    /// Resolves a per-direction fraction of `c` channels to counts, rounding down.
    pub fn from_fraction(c: usize, num: usize, den: usize, mode: ShiftMode) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::spec(format!("fraction {num}/{den} is not in [0, 1]")));
        }
        let per_dir = c * num / den;
        let spec = match mode {
            ShiftMode::Bidirectional => ShiftSpec::offline(per_dir, per_dir),
            ShiftMode::Unidirectional => ShiftSpec::online(per_dir),
        };
        spec.validate_for(c)?;
        Ok(spec)
    }

    /// `floor(c / 8)` channels in each direction.
    pub fn partial(c: usize) -> Self {
        let (num, den) = DEFAULT_FRACTION;
        ShiftSpec::from_fraction(c, num, den, ShiftMode::Bidirectional).expect("1/8 split always fits")
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn shifted(&self) -> usize {
        self.n_fwd + self.n_bwd
    }

    pub fn is_identity(&self) -> bool {
        self.shifted() == 0
    }

    /// Checks the invariants that do not depend on the activation.
    pub fn validate(&self) -> Result<()> {
        if self.mode == ShiftMode::Unidirectional {
            if self.n_bwd > 0 {
                return Err(Error::spec(
                    "uni-directional shift cannot move channels backward: future frames are unavailable",
                ));
            }
            if self.padding != Padding::Zero {
                return Err(Error::spec("uni-directional shift requires zero padding"));
            }
        }
        Ok(())
    }

    pub fn validate_for(&self, c: usize) -> Result<()> {
        self.validate()?;
        if self.shifted() > c {
            return Err(Error::spec(format!(
                "shift moves {} + {} channels but the activation has {c}",
                self.n_fwd, self.n_bwd
            )));
        }
        Ok(())
    }

    pub fn partition(&self, c: usize) -> Result<ChannelPartition> {
        self.validate_for(c)?;
        let f = self.n_fwd;
        let b = f + self.n_bwd;
        Ok(ChannelPartition {
            forward: 0..f,
            backward: f..b,
            untouched: b..c,
        })
    }

    pub fn groups(&self) -> [ChannelGroup; 2] {
        let f = self.n_fwd;
        [
            ChannelGroup {
                channels: 0..f,
                direction: Direction::Forward,
            },
            ChannelGroup {
                channels: f..f + self.n_bwd,
                direction: Direction::Backward,
            },
        ]
    }

    /// The same channel groups with their directions exchanged.
    pub fn swapped_groups(&self) -> [ChannelGroup; 2] {
        self.groups().map(|g| ChannelGroup {
            channels: g.channels,
            direction: g.direction.reversed(),
        })
    }

    /// Drops the backward group so the shift can run on a stream.
    pub fn to_unidirectional(&self) -> ShiftSpec {
        ShiftSpec::online(self.n_fwd)
    }
}

fn check_groups(groups: &[ChannelGroup], c: usize) -> Result<()> {
    for g in groups {
        if g.channels.end > c || g.channels.start > g.channels.end {
            return Err(Error::spec(format!(
                "channel group {:?} does not fit {c} channels",
                g.channels
            )));
        }
    }
    Ok(())
}

fn shift_group_in_place<F: Copy + Default>(
    data: &mut [F],
    s: ClipShape,
    group: &ChannelGroup,
    padding: Padding,
    scratch: &mut Vec<F>,
) {
    let plane = s.plane();
    let frame = s.frame_len();
    let off = group.channels.start * plane;
    let len = group.channels.len() * plane;
    if len == 0 {
        return;
    }
    let last = s.t - 1;
    for n in 0..s.n {
        let slab = |t: usize| (n * s.t + t) * frame + off;
        let (vacated, leaving) = match group.direction {
            Direction::Forward => (0, last),
            Direction::Backward => (last, 0),
        };
        if padding == Padding::Circular {
            scratch.clear();
            scratch.extend_from_slice(&data[slab(leaving)..slab(leaving) + len]);
        }
        match group.direction {
            Direction::Forward => {
                for t in (1..s.t).rev() {
                    data.copy_within(slab(t - 1)..slab(t - 1) + len, slab(t));
                }
            }
            Direction::Backward => {
                for t in 0..last {
                    data.copy_within(slab(t + 1)..slab(t + 1) + len, slab(t));
                }
            }
        }
        let dst = &mut data[slab(vacated)..slab(vacated) + len];
        match padding {
            Padding::Zero => dst.fill(F::default()),
            Padding::Circular => dst.copy_from_slice(scratch),
        }
    }
}

/// Moves channel groups of `x` in place. Untouched channels are never read.
pub fn shift_groups_in_place<F: Copy + Default>(
    x: &mut Activation<F>,
    groups: &[ChannelGroup],
    padding: Padding,
) -> Result<()> {
    let s = x.shape();
    check_groups(groups, s.c)?;
    let mut scratch = Vec::new();
    for g in groups {
        shift_group_in_place(x.data_mut(), s, g, padding, &mut scratch);
    }
    Ok(())
}

pub fn shift_in_place<F: Copy + Default>(x: &mut Activation<F>, spec: &ShiftSpec) -> Result<()> {
    spec.validate_for(x.shape().c)?;
    shift_groups_in_place(x, &spec.groups(), spec.padding)
}

/// Out-of-place shift of arbitrary channel groups.
pub fn shift_groups<F: Copy + Default>(
    x: &Activation<F>,
    groups: &[ChannelGroup],
    padding: Padding,
) -> Result<Activation<F>> {
    let mut out = x.clone();
    shift_groups_in_place(&mut out, groups, padding)?;
    Ok(out)
}

/// Shifts `x` into a pre-allocated buffer of the same shape.
///
/// The input is copied into `out` and the shifted groups are then moved in
/// place, so the work beyond a plain copy is exactly [`bytes_moved`].
pub fn shift_offline_into<F: Copy + Default>(
    x: &Activation<F>,
    spec: &ShiftSpec,
    out: &mut Activation<F>,
) -> Result<()> {
    spec.validate_for(x.shape().c)?;
    if out.shape() != x.shape() {
        return Err(Error::shape(format!(
            "output buffer {:?} does not match input {:?}",
            out.shape(),
            x.shape()
        )));
    }
    out.data_mut().copy_from_slice(x.data());
    shift_groups_in_place(out, &spec.groups(), spec.padding)
}

pub fn shift_offline<F: Copy + Default>(x: &Activation<F>, spec: &ShiftSpec) -> Result<Activation<F>> {
    let mut out = x.clone();
    shift_in_place(&mut out, spec)?;
    Ok(out)
}

/// Element-by-element reference implementation of [`shift_offline`].
pub fn shift_offline_naive<F: Copy + Default>(x: &Activation<F>, spec: &ShiftSpec) -> Result<Activation<F>> {
    let s = x.shape();
    let part = spec.partition(s.c)?;
    let mut out = Vec::with_capacity(s.len());
    let at = |n: usize, t: usize, c: usize, h: usize, w: usize| x.data()[(((n * s.t + t) * s.c + c) * s.h + h) * s.w + w];
    for n in 0..s.n {
        for t in 0..s.t {
            for c in 0..s.c {
                // source frame, or None for a zero-filled slot
                let src = if part.forward.contains(&c) {
                    match (t, spec.padding) {
                        (0, Padding::Zero) => None,
                        (0, Padding::Circular) => Some(s.t - 1),
                        _ => Some(t - 1),
                    }
                } else if part.backward.contains(&c) {
                    match spec.padding {
                        Padding::Zero if t + 1 == s.t => None,
                        Padding::Circular if t + 1 == s.t => Some(0),
                        _ => Some(t + 1),
                    }
                } else {
                    Some(t)
                };
                for h in 0..s.h {
                    for w in 0..s.w {
                        out.push(match src {
                            Some(st) => at(n, st, c, h, w),
                            None => F::default(),
                        });
                    }
                }
            }
        }
    }
    Activation::from_vec(s, out)
}

/// Backward pass of [`shift_offline`]: the same channel groups shifted the
/// other way, with the same padding.
pub fn shift_adjoint<F: Copy + Default>(g: &Activation<F>, spec: &ShiftSpec) -> Result<Activation<F>> {
    spec.validate_for(g.shape().c)?;
    shift_groups(g, &spec.swapped_groups(), spec.padding)
}

/// Bytes read plus bytes written by the shift pass over the moved groups:
/// one 4-byte read and one 4-byte write per shifted element slot. Zero-filled
/// boundary slots count as a read of the zero source. Untouched channels are
/// not moved by the shift pass and cost nothing.
pub fn bytes_moved(spec: &ShiftSpec, shape: ClipShape) -> Result<u64> {
    spec.validate_for(shape.c)?;
    let slots = (spec.shifted() * shape.n * shape.t * shape.h * shape.w) as u64;
    Ok(2 * slots * 4)
}

/// Forward-group channels of the last frame seen on one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftCache<F = f32> {
    n: usize,
    channels: usize,
    h: usize,
    w: usize,
    slab: Vec<F>,
    frames: u64,
}

impl<F: Copy + Default> ShiftCache<F> {
    /// Zeroed cache for a stream of `n` images of `h x w` with `channels`
    /// forward-shifted channels.
    pub fn new(n: usize, channels: usize, h: usize, w: usize) -> Self {
        ShiftCache {
            n,
            channels,
            h,
            w,
            slab: vec![F::default(); n * channels * h * w],
            frames: 0,
        }
    }

    pub fn reset(&mut self) {
        self.slab.fill(F::default());
        self.frames = 0;
    }

    /// `(N, n_fwd, H, W)`.
    pub fn extents(&self) -> [usize; 4] {
        [self.n, self.channels, self.h, self.w]
    }

    pub fn slab(&self) -> &[F] {
        &self.slab
    }

    pub fn frame_counter(&self) -> u64 {
        self.frames
    }

    pub fn size_bytes(&self) -> usize {
        self.slab.len() * std::mem::size_of::<F>()
    }
}

/// One streaming step, in place: the forward group of `frame` is swapped
/// with the cached slab of the previous frame.
pub fn shift_online_step_in_place<F: Copy + Default>(
    frame: &mut FrameTensor<F>,
    spec: &ShiftSpec,
    cache: &mut ShiftCache<F>,
) -> Result<()> {
    if spec.mode != ShiftMode::Unidirectional {
        return Err(Error::spec("online shift needs a uni-directional spec"));
    }
    let s = frame.shape();
    spec.validate_for(s.c)?;
    if (s.n, s.h, s.w) != (cache.n, cache.h, cache.w) || spec.n_fwd != cache.channels {
        return Err(Error::CacheMismatch(format!(
            "frame {:?} with {} forward channels against cache {:?}",
            s.extents(),
            spec.n_fwd,
            cache.extents()
        )));
    }
    let len = cache.channels * s.plane();
    if len > 0 {
        let image = s.image_len();
        let data = frame.data_mut();
        for (n, cached) in cache.slab.chunks_exact_mut(len).enumerate() {
            data[n * image..n * image + len].swap_with_slice(cached);
        }
    }
    cache.frames += 1;
    Ok(())
}

pub fn shift_online_step<F: Copy + Default>(
    frame: &FrameTensor<F>,
    spec: &ShiftSpec,
    cache: &mut ShiftCache<F>,
) -> Result<FrameTensor<F>> {
    let mut out = frame.clone();
    shift_online_step_in_place(&mut out, spec, cache)?;
    Ok(out)
}

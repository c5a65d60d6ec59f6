//! Dense row-major tensors and the two layouts the engine works in.
//!
//! Clips are stored frames-major, `(N, T, C, H, W)`, so that the `C x H x W`
//! block of every `(n, t)` pair is contiguous. A temporal shift of a channel
//! group is then a copy of one contiguous slab between adjacent frame blocks,
//! and the frames of a clip can be handed to frame-wise kernels as a batch of
//! `N * T` images without moving any data.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Axis tag. `Free` marks axes outside the activation vocabulary, such as
/// the `(C_out, C_in, K, K)` axes of a convolution kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    N,
    T,
    C,
    H,
    W,
    Free,
}

impl Axis {
    /// Byte code used by the tensor file format. `Free` has no code.
    pub fn code(self) -> Option<u8> {
        match self {
            Axis::N => Some(0),
            Axis::T => Some(1),
            Axis::C => Some(2),
            Axis::H => Some(3),
            Axis::W => Some(4),
            Axis::Free => None,
        }
    }

    pub fn from_code(code: u8) -> Option<Axis> {
        match code {
            0 => Some(Axis::N),
            1 => Some(Axis::T),
            2 => Some(Axis::C),
            3 => Some(Axis::H),
            4 => Some(Axis::W),
            _ => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::N => "N",
            Axis::T => "T",
            Axis::C => "C",
            Axis::H => "H",
            Axis::W => "W",
            Axis::Free => "_",
        };
        f.write_str(s)
    }
}

pub const CLIP_AXES: [Axis; 5] = [Axis::N, Axis::T, Axis::C, Axis::H, Axis::W];
pub const FRAME_AXES: [Axis; 4] = [Axis::N, Axis::C, Axis::H, Axis::W];

#[derive(Clone, PartialEq)]
pub struct Tensor<F = f32> {
    extents: Vec<usize>,
    axes: Vec<Axis>,
    data: Vec<F>,
}

impl<F> Tensor<F> {
    pub fn from_vec(extents: Vec<usize>, axes: Vec<Axis>, data: Vec<F>) -> Result<Self> {
        check_extents(&extents)?;
        if axes.len() != extents.len() {
            return Err(Error::shape(format!(
                "{} axis labels for {} extents",
                axes.len(),
                extents.len()
            )));
        }
        let len: usize = extents.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "extents {extents:?} need {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            extents,
            axes,
            data,
        })
    }

    /// Tensor with every axis tagged `Free`.
    pub fn unlabeled(extents: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let axes = vec![Axis::Free; extents.len()];
        Tensor::from_vec(extents, axes, data)
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn rank(&self) -> usize {
        self.extents.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    /// Replaces the axis tags, keeping extents and data.
    pub fn relabel(self, axes: Vec<Axis>) -> Result<Self> {
        Tensor::from_vec(self.extents, axes, self.data)
    }

    pub fn map<G>(&self, f: impl FnMut(&F) -> G) -> Tensor<G> {
        Tensor {
            extents: self.extents.clone(),
            axes: self.axes.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<F: Copy + Default> Tensor<F> {
    pub fn zeros(extents: Vec<usize>, axes: Vec<Axis>) -> Result<Self> {
        check_extents(&extents)?;
        let len = extents.iter().product();
        Tensor::from_vec(extents, axes, vec![F::default(); len])
    }
}

impl<F: Real> Tensor<F> {
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        self.map(|v| G::lit(v.as_f64()))
    }
}

impl<F: fmt::Debug> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: String = self.axes.iter().map(|a| a.to_string()).collect();
        let preview = &self.data[..self.data.len().min(8)];
        write!(f, "Tensor[{labels} {:?}] {:?}", self.extents, preview)?;
        if self.data.len() > 8 {
            write!(f, "..")?;
        }
        Ok(())
    }
}

fn check_extents(extents: &[usize]) -> Result<()> {
    if extents.is_empty() {
        return Err(Error::shape("tensor must have at least one axis"));
    }
    if let Some(i) = extents.iter().position(|&e| e == 0) {
        return Err(Error::shape(format!("extent {i} is zero in {extents:?}")));
    }
    Ok(())
}

/// Generic zero-filled tensor with explicit labels.
pub fn zeros<F: Copy + Default>(extents: &[usize], axes: &[Axis]) -> Result<Tensor<F>> {
    Tensor::zeros(extents.to_vec(), axes.to_vec())
}

/// Extents of a clip in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClipShape {
    pub n: usize,
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl ClipShape {
    pub fn new(n: usize, t: usize, c: usize, h: usize, w: usize) -> Self {
        ClipShape { n, t, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.t * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// The clip viewed as a batch of `N * T` frames.
    pub fn frames(&self) -> FrameShape {
        FrameShape::new(self.n * self.t, self.c, self.h, self.w)
    }

    pub fn extents(&self) -> [usize; 5] {
        [self.n, self.t, self.c, self.h, self.w]
    }
}

impl fmt::Display for ClipShape {
    /// Prints in the conventional N x C x T x H x W order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}x{}", self.n, self.c, self.t, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl FrameShape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        FrameShape { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn extents(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

/// A clip of features, `(N, T, C, H, W)`.
#[derive(Clone, PartialEq)]
pub struct Activation<F = f32> {
    shape: ClipShape,
    tensor: Tensor<F>,
}

impl<F> Activation<F> {
    pub fn from_vec(shape: ClipShape, data: Vec<F>) -> Result<Self> {
        let tensor = Tensor::from_vec(shape.extents().to_vec(), CLIP_AXES.to_vec(), data)?;
        Ok(Activation { shape, tensor })
    }

    pub fn shape(&self) -> ClipShape {
        self.shape
    }

    pub fn data(&self) -> &[F] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        self.tensor.data_mut()
    }

    pub fn as_tensor(&self) -> &Tensor<F> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.tensor
    }

    pub fn into_vec(self) -> Vec<F> {
        self.tensor.into_vec()
    }

    /// The `C x H x W` block of frame `t` of clip `n`.
    pub fn frame(&self, n: usize, t: usize) -> &[F] {
        let len = self.shape.frame_len();
        let start = (n * self.shape.t + t) * len;
        &self.data()[start..start + len]
    }

    /// Reinterprets the clip as a batch of `N * T` frames. No data moves.
    pub fn into_frames(self) -> FrameTensor<F> {
        let shape = self.shape.frames();
        FrameTensor::from_vec(shape, self.tensor.into_vec()).expect("clip and frame batch sizes agree")
    }

    pub fn map<G>(&self, f: impl FnMut(&F) -> G) -> Activation<G> {
        Activation {
            shape: self.shape,
            tensor: self.tensor.map(f),
        }
    }
}

impl<F: Copy + Default> Activation<F> {
    pub fn zeros(shape: ClipShape) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::shape("zero extent in clip"));
        }
        Activation::from_vec(shape, vec![F::default(); shape.len()])
    }
}

impl<F: Real> Activation<F> {
    pub fn cast<G: Real>(&self) -> Activation<G> {
        self.map(|v| G::lit(v.as_f64()))
    }
}

impl<F> TryFrom<Tensor<F>> for Activation<F> {
    type Error = Error;

    fn try_from(tensor: Tensor<F>) -> Result<Self> {
        if tensor.axes() != CLIP_AXES {
            return Err(Error::shape(format!(
                "clip tensors must be labelled NTCHW, got {:?}",
                tensor.axes()
            )));
        }
        let e = tensor.extents();
        let shape = ClipShape::new(e[0], e[1], e[2], e[3], e[4]);
        Ok(Activation { shape, tensor })
    }
}

impl<F: fmt::Debug> fmt::Debug for Activation<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Activation({:?}) ", self.shape)?;
        self.tensor.fmt(f)
    }
}

/// One time step of a clip, `(N, C, H, W)`; also used for batches of frames.
#[derive(Clone, PartialEq)]
pub struct FrameTensor<F = f32> {
    shape: FrameShape,
    tensor: Tensor<F>,
}

impl<F> FrameTensor<F> {
    pub fn from_vec(shape: FrameShape, data: Vec<F>) -> Result<Self> {
        let tensor = Tensor::from_vec(shape.extents().to_vec(), FRAME_AXES.to_vec(), data)?;
        Ok(FrameTensor { shape, tensor })
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn data(&self) -> &[F] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        self.tensor.data_mut()
    }

    pub fn as_tensor(&self) -> &Tensor<F> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.tensor
    }

    pub fn into_vec(self) -> Vec<F> {
        self.tensor.into_vec()
    }

    /// Reinterprets a batch of `n * t` frames (clip-major) as a clip.
    pub fn into_clip(self, n: usize, t: usize) -> Result<Activation<F>> {
        if n * t != self.shape.n {
            return Err(Error::shape(format!(
                "cannot split a batch of {} frames into {n} clips of {t}",
                self.shape.n
            )));
        }
        let s = self.shape;
        Activation::from_vec(ClipShape::new(n, t, s.c, s.h, s.w), self.tensor.into_vec())
    }
}

impl<F: Copy + Default> FrameTensor<F> {
    pub fn zeros(shape: FrameShape) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::shape("zero extent in frame"));
        }
        FrameTensor::from_vec(shape, vec![F::default(); shape.len()])
    }
}

impl<F: Real> FrameTensor<F> {
    pub fn cast<G: Real>(&self) -> FrameTensor<G> {
        FrameTensor {
            shape: self.shape,
            tensor: self.tensor.cast(),
        }
    }
}

impl<F> TryFrom<Tensor<F>> for FrameTensor<F> {
    type Error = Error;

    fn try_from(tensor: Tensor<F>) -> Result<Self> {
        if tensor.axes() != FRAME_AXES {
            return Err(Error::shape(format!(
                "frame tensors must be labelled NCHW, got {:?}",
                tensor.axes()
            )));
        }
        let e = tensor.extents();
        let shape = FrameShape::new(e[0], e[1], e[2], e[3]);
        Ok(FrameTensor { shape, tensor })
    }
}

impl<F: fmt::Debug> fmt::Debug for FrameTensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FrameTensor({:?}) ", self.shape)?;
        self.tensor.fmt(f)
    }
}

/// Copies frame `t` of clip `n` out as a single-image frame tensor.
pub fn slice_frame<F: Copy>(x: &Activation<F>, n: usize, t: usize) -> Result<FrameTensor<F>> {
    let s = x.shape();
    if n >= s.n || t >= s.t {
        return Err(Error::Index(format!(
            "frame ({n}, {t}) outside clip with N={}, T={}",
            s.n, s.t
        )));
    }
    FrameTensor::from_vec(FrameShape::new(1, s.c, s.h, s.w), x.frame(n, t).to_vec())
}

/// Stacks equally-shaped frames along a new time axis.
pub fn stack_frames<F: Copy>(frames: &[FrameTensor<F>]) -> Result<Activation<F>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::shape("cannot stack an empty frame list"))?
        .shape();
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != first) {
        return Err(Error::shape(format!(
            "frame {i} has shape {:?}, expected {first:?}",
            f.shape()
        )));
    }
    let t = frames.len();
    let image = first.image_len();
    let mut data = Vec::with_capacity(first.len() * t);
    for n in 0..first.n {
        for f in frames {
            data.extend_from_slice(&f.data()[n * image..(n + 1) * image]);
        }
    }
    Activation::from_vec(ClipShape::new(first.n, t, first.c, first.h, first.w), data)
}

pub fn reverse_time<F: Copy>(x: &Activation<F>) -> Activation<F> {
    let s = x.shape();
    let mut data = Vec::with_capacity(s.len());
    for n in 0..s.n {
        for t in (0..s.t).rev() {
            data.extend_from_slice(x.frame(n, t));
        }
    }
    Activation::from_vec(s, data).expect("same shape as input")
}

fn check_same_extents<F>(x: &Tensor<F>, y: &Tensor<F>) -> Result<()> {
    if x.extents() != y.extents() {
        return Err(Error::shape(format!(
            "extents differ: {:?} vs {:?}",
            x.extents(),
            y.extents()
        )));
    }
    Ok(())
}

/// Inner product accumulated in `f64`.
pub fn dot<F: Real>(x: &Tensor<F>, y: &Tensor<F>) -> Result<f64> {
    check_same_extents(x, y)?;
    Ok(x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| a.as_f64() * b.as_f64())
        .sum())
}

pub fn max_abs_diff<F: Real>(x: &Tensor<F>, y: &Tensor<F>) -> Result<f64> {
    check_same_extents(x, y)?;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: ClipShape) -> Activation {
        Activation::from_vec(shape, (0..shape.len()).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn zeros_fill_and_reject_empty_axes() {
        let z: Tensor = zeros(&[1, 2], &[Axis::N, Axis::C]).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
        let z: Tensor = zeros(&[2, 3, 1, 1, 1], &CLIP_AXES).unwrap();
        assert_eq!(z.len(), 6);
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            zeros::<f32>(&[1, 0], &[Axis::N, Axis::C]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn from_vec_checks_invariants() {
        assert!(Tensor::from_vec(vec![2, 2], vec![Axis::N], vec![0f32; 4]).is_err());
        assert!(Tensor::from_vec(vec![2, 2], vec![Axis::N, Axis::C], vec![0f32; 3]).is_err());
        assert!(Tensor::<f32>::from_vec(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn slice_frame_reads_block() {
        let x = ramp(ClipShape::new(2, 3, 2, 1, 2));
        let f = slice_frame(&x, 1, 1).unwrap();
        assert_eq!(f.shape(), FrameShape::new(1, 2, 1, 2));
        // frame (1,1) starts at (1*3 + 1) * 4
        assert_eq!(f.data(), &[16.0, 17.0, 18.0, 19.0]);
        assert!(matches!(slice_frame(&x, 0, 3), Err(Error::Index(_))));
        assert!(matches!(slice_frame(&x, 2, 0), Err(Error::Index(_))));

        let z = Activation::<f32>::zeros(ClipShape::new(1, 2, 3, 2, 2)).unwrap();
        assert!(slice_frame(&z, 0, 1).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stack_single_frame_is_identity() {
        let f = FrameTensor::from_vec(FrameShape::new(2, 1, 1, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let x = stack_frames(std::slice::from_ref(&f)).unwrap();
        assert_eq!(x.shape(), ClipShape::new(2, 1, 1, 1, 2));
        assert_eq!(x.data(), f.data());
    }

    #[test]
    fn stack_rejects_bad_input() {
        assert!(matches!(stack_frames::<f32>(&[]), Err(Error::InvalidShape(_))));
        let a = FrameTensor::<f32>::zeros(FrameShape::new(1, 1, 2, 2)).unwrap();
        let b = FrameTensor::<f32>::zeros(FrameShape::new(1, 1, 3, 2)).unwrap();
        assert!(matches!(stack_frames(&[a, b]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn stack_slice_round_trip() {
        let x = ramp(ClipShape::new(2, 4, 3, 2, 2));
        // frames are batched over N, so stack whole time steps
        let steps: Vec<FrameTensor> = (0..4)
            .map(|t| {
                let mut data = Vec::new();
                for n in 0..2 {
                    data.extend_from_slice(x.frame(n, t));
                }
                FrameTensor::from_vec(FrameShape::new(2, 3, 2, 2), data).unwrap()
            })
            .collect();
        assert_eq!(stack_frames(&steps).unwrap(), x);
    }

    #[test]
    fn reverse_time_definition() {
        let x = Activation::from_vec(ClipShape::new(1, 3, 1, 1, 1), vec![0.0f32, 1.0, 2.0]).unwrap();
        assert_eq!(reverse_time(&x).data(), &[2.0, 1.0, 0.0]);
        let single = ramp(ClipShape::new(2, 1, 3, 2, 2));
        assert_eq!(reverse_time(&single), single);
        let y = ramp(ClipShape::new(2, 5, 3, 2, 2));
        assert_eq!(reverse_time(&reverse_time(&y)), y);
    }

    #[test]
    fn dot_and_diff() {
        let x = Tensor::unlabeled(vec![2], vec![1.0f32, 2.0]).unwrap();
        let y = Tensor::unlabeled(vec![2], vec![3.0f32, 4.0]).unwrap();
        assert_eq!(dot(&x, &y).unwrap(), 11.0);
        let z = Tensor::unlabeled(vec![2], vec![0.0f32; 2]).unwrap();
        assert_eq!(dot(&x, &z).unwrap(), 0.0);
        assert_eq!(max_abs_diff(&x, &x).unwrap(), 0.0);
        assert_eq!(max_abs_diff(&x, &y).unwrap(), 2.0);
        let w = Tensor::unlabeled(vec![3], vec![0.0f32; 3]).unwrap();
        assert!(matches!(dot(&x, &w), Err(Error::InvalidShape(_))));
        assert!(max_abs_diff(&x, &w).is_err());
    }

    #[test]
    fn clip_frame_views_do_not_copy_semantics() {
        let x = ramp(ClipShape::new(2, 3, 2, 1, 1));
        let frames = x.clone().into_frames();
        assert_eq!(frames.shape(), FrameShape::new(6, 2, 1, 1));
        assert_eq!(frames.into_clip(2, 3).unwrap(), x);
    }
}

//! Synthetic motion-direction clips.
//!
//! A bright square slides one pixel per frame along a row. Label 1 moves
//! right, label 0 moves left. A leftward clip is a rightward clip played
//! backwards, so both classes contain exactly the same set of frames and only
//! their order tells them apart.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{reverse_time, Activation, ClipShape};

pub const SQUARE: usize = 2;
pub const LEFTWARD: usize = 0;
pub const RIGHTWARD: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    /// `(1, T, 1, H, W)`.
    pub clip: Activation,
    pub label: usize,
    /// Top-left corner of the square in the first frame.
    pub start_row: usize,
    pub start_col: usize,
}

fn check_geometry(t: usize, h: usize, w: usize) -> Result<()> {
    if t < 2 {
        return Err(Error::spec(format!("direction clips need at least 2 frames, got {t}")));
    }
    if h < SQUARE + t || w < SQUARE + t {
        return Err(Error::spec(format!(
            "a {SQUARE}x{SQUARE} square moving over {t} frames needs H, W >= {}, got {h}x{w}",
            SQUARE + t
        )));
    }
    Ok(())
}

/// Square at `(row, col + t)` in frame `t`.
fn rightward(t: usize, h: usize, w: usize, row: usize, col: usize) -> Activation {
    let s = ClipShape::new(1, t, 1, h, w);
    let mut data = vec![0.0f32; s.len()];
    for ti in 0..t {
        let frame = &mut data[ti * h * w..(ti + 1) * h * w];
        for r in row..row + SQUARE {
            for c in col + ti..col + ti + SQUARE {
                frame[r * w + c] = 1.0;
            }
        }
    }
    Activation::from_vec(s, data).expect("length matches shape")
}

impl SyntheticClip {
    pub fn new(label: usize, t: usize, h: usize, w: usize, start_row: usize, start_col: usize) -> Result<Self> {
        check_geometry(t, h, w)?;
        if label > 1 {
            return Err(Error::Index(format!("direction label must be 0 or 1, got {label}")));
        }
        if start_row + SQUARE > h || start_col + SQUARE + t - 1 > w {
            return Err(Error::spec(format!(
                "square at ({start_row}, {start_col}) leaves the {h}x{w} frame within {t} frames"
            )));
        }
        let right = rightward(t, h, w, start_row, start_col);
        let clip = if label == RIGHTWARD { right } else { reverse_time(&right) };
        Ok(SyntheticClip {
            clip,
            label,
            start_row,
            start_col,
        })
    }
}

/// `count` clips, half of each direction (the extra one rightward when
/// `count` is odd), in seeded random order with seeded random positions.
pub fn gen_dataset(seed: u64, count: usize, t: usize, h: usize, w: usize) -> Result<Vec<SyntheticClip>> {
    check_geometry(t, h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..count)
        .map(|i| if i < count.div_ceil(2) { RIGHTWARD } else { LEFTWARD })
        .collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .map(|label| {
            let row = rng.gen_range(0..=h - SQUARE);
            let col = rng.gen_range(0..=w - SQUARE - (t - 1));
            SyntheticClip::new(label, t, h, w, row, col)
        })
        .collect()
}

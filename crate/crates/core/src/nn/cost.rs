//! Multiply-accumulate and parameter accounting per layer.
//!
//! MACs are counted per frame. Element-wise layers, pooling and the
//! temporal shift perform no multiply-accumulates and hold no parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shift::ShiftSpec;

/// Shape of a conv layer, without its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvDesc {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
}

fn one() -> usize {
    1
}

impl ConvDesc {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvDesc {
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    /// Stride-1 conv that keeps the spatial size for odd `k`.
    pub fn same(c_in: usize, c_out: usize, k: usize) -> Self {
        ConvDesc::new(c_in, c_out, k, 1, k / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.k == 0 || self.stride == 0 {
            return Err(Error::spec(format!("conv dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |len: usize| {
            let padded = len + 2 * self.pad;
            (padded >= self.k).then(|| (padded - self.k) / self.stride + 1)
        };
        match (out(h), out(w)) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::shape(format!(
                "{}x{} kernel does not fit a {h}x{w} input with padding {}",
                self.k, self.k, self.pad
            ))),
        }
    }

    pub fn weight_extents(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.k, self.k]
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

/// Per-frame feature shape `(C, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl FeatureShape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        FeatureShape { c, h, w }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    Linear,
    Shift,
    Relu,
    GlobalAvgPool,
    Add,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Linear => "linear",
            LayerKind::Shift => "shift",
            LayerKind::Relu => "relu",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Add => "add",
        })
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "conv2d" => LayerKind::Conv2d,
            "linear" => LayerKind::Linear,
            "shift" => LayerKind::Shift,
            "relu" => LayerKind::Relu,
            "global_avg_pool" => LayerKind::GlobalAvgPool,
            "add" => LayerKind::Add,
            other => return Err(Error::spec(format!("unknown layer kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    Conv2d(ConvDesc),
    Linear { in_features: usize, out_features: usize },
    Shift(ShiftSpec),
    Relu,
    GlobalAvgPool,
    /// Element-wise sum of the residual branch and the skip path.
    Add,
}

impl LayerDesc {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerDesc::Conv2d(_) => LayerKind::Conv2d,
            LayerDesc::Linear { .. } => LayerKind::Linear,
            LayerDesc::Shift(_) => LayerKind::Shift,
            LayerDesc::Relu => LayerKind::Relu,
            LayerDesc::GlobalAvgPool => LayerKind::GlobalAvgPool,
            LayerDesc::Add => LayerKind::Add,
        }
    }

    pub fn output_shape(&self, input: FeatureShape) -> Result<FeatureShape> {
        match self {
            LayerDesc::Conv2d(d) => {
                d.validate()?;
                if input.c != d.c_in {
                    return Err(Error::shape(format!(
                        "conv expects {} channels, got {}",
                        d.c_in, input.c
                    )));
                }
                let (h, w) = d.output_hw(input.h, input.w)?;
                Ok(FeatureShape::new(d.c_out, h, w))
            }
            LayerDesc::Linear {
                in_features,
                out_features,
            } => {
                if input.c * input.h * input.w != *in_features {
                    return Err(Error::shape(format!(
                        "linear expects {in_features} features, got {input:?}"
                    )));
                }
                Ok(FeatureShape::new(*out_features, 1, 1))
            }
            LayerDesc::Shift(spec) => {
                spec.validate_for(input.c)?;
                Ok(input)
            }
            LayerDesc::Relu | LayerDesc::Add => Ok(input),
            LayerDesc::GlobalAvgPool => Ok(FeatureShape::new(input.c, 1, 1)),
        }
    }
}

/// Multiply-accumulates per frame for `desc` applied to `input`.
pub fn macs_of(desc: &LayerDesc, input: FeatureShape) -> Result<u64> {
    let out = desc.output_shape(input)?;
    Ok(match desc {
        LayerDesc::Conv2d(d) => (d.c_out * d.c_in * d.k * d.k * out.h * out.w) as u64,
        LayerDesc::Linear {
            in_features,
            out_features,
        } => (in_features * out_features) as u64,
        LayerDesc::Shift(_) | LayerDesc::Relu | LayerDesc::GlobalAvgPool | LayerDesc::Add => 0,
    })
}

pub fn params_of(desc: &LayerDesc) -> u64 {
    match desc {
        LayerDesc::Conv2d(d) => (d.c_out * d.c_in * d.k * d.k + d.c_out) as u64,
        LayerDesc::Linear {
            in_features,
            out_features,
        } => (in_features * out_features + out_features) as u64,
        LayerDesc::Shift(_) | LayerDesc::Relu | LayerDesc::GlobalAvgPool | LayerDesc::Add => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_is_free() {
        let d = LayerDesc::Shift(ShiftSpec::offline(2, 2));
        assert_eq!(macs_of(&d, FeatureShape::new(16, 8, 8)).unwrap(), 0);
        assert_eq!(params_of(&d), 0);
        // still validated against the channel count
        assert!(macs_of(&d, FeatureShape::new(3, 8, 8)).is_err());
    }

    #[test]
    fn conv_counts() {
        let d = LayerDesc::Conv2d(ConvDesc::same(16, 16, 3));
        assert_eq!(macs_of(&d, FeatureShape::new(16, 8, 8)).unwrap(), 147_456);
        assert_eq!(params_of(&d), 16 * 16 * 9 + 16);
        let strided = LayerDesc::Conv2d(ConvDesc::new(4, 8, 3, 2, 1));
        assert_eq!(strided.output_shape(FeatureShape::new(4, 9, 9)).unwrap(), FeatureShape::new(8, 5, 5));
        assert_eq!(macs_of(&strided, FeatureShape::new(4, 9, 9)).unwrap(), 8 * 4 * 9 * 25);
    }

    #[test]
    fn linear_and_free_layers() {
        let d = LayerDesc::Linear {
            in_features: 8,
            out_features: 2,
        };
        assert_eq!(macs_of(&d, FeatureShape::new(8, 1, 1)).unwrap(), 16);
        assert_eq!(params_of(&d), 18);
        for free in [LayerDesc::Relu, LayerDesc::GlobalAvgPool, LayerDesc::Add] {
            assert_eq!(macs_of(&free, FeatureShape::new(4, 3, 3)).unwrap(), 0);
            assert_eq!(params_of(&free), 0);
        }
    }

    #[test]
    fn layer_kind_names() {
        for kind in [
            LayerKind::Conv2d,
            LayerKind::Linear,
            LayerKind::Shift,
            LayerKind::Relu,
            LayerKind::GlobalAvgPool,
            LayerKind::Add,
        ] {
            assert_eq!(kind.to_string().parse::<LayerKind>().unwrap(), kind);
        }
        assert!(matches!("conv3d".parse::<LayerKind>(), Err(Error::InvalidSpec(_))));
        assert_eq!(LayerDesc::Shift(ShiftSpec::identity()).kind(), LayerKind::Shift);
    }
}

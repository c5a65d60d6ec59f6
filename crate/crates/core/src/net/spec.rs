//! Declarative network description and its JSON form.
//!
//! ```json
//! {"input": {"c": 1, "h": 16, "w": 16, "t": 8},
//!  "stem": {"c_in": 1, "c_out": 8, "k": 3, "stride": 1, "pad": 1},
//!  "blocks": [{"conv1": {..}, "conv2": {..}, "placement": "residual",
//!              "shift": {"n_fwd": 1, "n_bwd": 1, "padding": "zero", "mode": "bi"}}],
//!  "head": {"classes": 2}}
//! ```
//!
//! Unknown keys are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::nn::{ConvDesc, FeatureShape, LayerDesc};
use crate::shift::ShiftSpec;

/// Where a block applies its temporal shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// `y = F(x)`; no shift.
    #[default]
    None,
    /// `y = F(shift(x))`.
    InPlace,
    /// `y = skip(x) + F(shift(x))`; the skip path sees the unshifted frame.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub conv1: ConvDesc,
    pub conv2: ConvDesc,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default)]
    pub shift: ShiftSpec,
    /// 1x1 conv on the skip path, for residual blocks that change shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<ConvDesc>,
}

impl BlockSpec {
    /// Two same-padded `k x k` convs keeping `c` channels.
    pub fn basic(c: usize, k: usize, placement: Placement, shift: ShiftSpec) -> Self {
        BlockSpec {
            conv1: ConvDesc::same(c, c, k),
            conv2: ConvDesc::same(c, c, k),
            placement,
            shift,
            downsample: None,
        }
    }

    pub fn has_shift(&self) -> bool {
        self.placement != Placement::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input: InputSpec,
    pub stem: ConvDesc,
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
    pub head: HeadSpec,
}

/// Per-frame feature shapes at every stage of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetShapes {
    pub input: FeatureShape,
    pub stem_out: FeatureShape,
    /// `(input, output)` of each block.
    pub blocks: Vec<(FeatureShape, FeatureShape)>,
    pub head_in: usize,
}

impl NetworkSpec {
    pub fn num_classes(&self) -> usize {
        self.head.classes
    }

    pub fn input_shape(&self) -> FeatureShape {
        FeatureShape::new(self.input.c, self.input.h, self.input.w)
    }

    /// Runs shape inference, checking that consecutive layers compose.
    pub fn shapes(&self) -> Result<NetShapes> {
        let i = self.input;
        if i.c == 0 || i.h == 0 || i.w == 0 || i.t == 0 {
            return Err(Error::spec(format!("input dimensions must be positive: {i:?}")));
        }
        if self.head.classes < 2 {
            return Err(Error::spec("a classifier needs at least two classes"));
        }
        let input = self.input_shape();
        let stem_out = conv_out(&self.stem, input, "stem")?;
        let mut cur = stem_out;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let ctx = |part: &str| format!("block {b} {part}");
            if block.has_shift() {
                block
                    .shift
                    .validate_for(cur.c)
                    .map_err(|e| Error::spec(format!("{}: {e}", ctx("shift"))))?;
            }
            let mid = conv_out(&block.conv1, cur, &ctx("conv1"))?;
            let out = conv_out(&block.conv2, mid, &ctx("conv2"))?;
            match (block.placement, &block.downsample) {
                (Placement::Residual, None) if out != cur => {
                    return Err(Error::spec(format!(
                        "block {b}: residual output {out:?} differs from input {cur:?} and no downsample is given"
                    )));
                }
                (Placement::Residual, Some(ds)) => {
                    if ds.k != 1 {
                        return Err(Error::spec(format!("block {b}: downsample must be a 1x1 conv")));
                    }
                    let skip = conv_out(ds, cur, &ctx("downsample"))?;
                    if skip != out {
                        return Err(Error::spec(format!(
                            "block {b}: downsample yields {skip:?}, branch yields {out:?}"
                        )));
                    }
                }
                (Placement::None | Placement::InPlace, Some(_)) => {
                    return Err(Error::spec(format!(
                        "block {b}: downsample only applies to residual blocks"
                    )));
                }
                _ => {}
            }
            blocks.push((cur, out));
            cur = out;
        }
        Ok(NetShapes {
            input,
            stem_out,
            blocks,
            head_in: cur.c,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Every layer the network executes per frame, with its input shape, in
    /// execution order.
    pub fn layers(&self) -> Result<Vec<(String, LayerDesc, FeatureShape)>> {
        let shapes = self.shapes()?;
        let mut out = Vec::new();
        out.push(("stem".to_string(), LayerDesc::Conv2d(self.stem), shapes.input));
        out.push(("stem.relu".to_string(), LayerDesc::Relu, shapes.stem_out));
        for (b, (block, &(cin, cout))) in self.blocks.iter().zip(&shapes.blocks).enumerate() {
            let p = format!("blocks.{b}");
            if block.has_shift() {
                out.push((format!("{p}.shift"), LayerDesc::Shift(block.shift), cin));
            }
            let mid = conv_out(&block.conv1, cin, "conv1")?;
            out.push((format!("{p}.conv1"), LayerDesc::Conv2d(block.conv1), cin));
            out.push((format!("{p}.relu1"), LayerDesc::Relu, mid));
            out.push((format!("{p}.conv2"), LayerDesc::Conv2d(block.conv2), mid));
            out.push((format!("{p}.relu2"), LayerDesc::Relu, cout));
            if block.placement == Placement::Residual {
                if let Some(ds) = block.downsample {
                    out.push((format!("{p}.downsample"), LayerDesc::Conv2d(ds), cin));
                }
                out.push((format!("{p}.add"), LayerDesc::Add, cout));
            }
        }
        let last = shapes.blocks.last().map_or(shapes.stem_out, |&(_, o)| o);
        out.push(("pool".to_string(), LayerDesc::GlobalAvgPool, last));
        out.push((
            "head".to_string(),
            LayerDesc::Linear {
                in_features: shapes.head_in,
                out_features: self.head.classes,
            },
            FeatureShape::new(shapes.head_in, 1, 1),
        ));
        Ok(out)
    }

    /// Every block moved to `placement`. Blocks leaving residual placement
    /// drop their downsample, which only exists for the skip path.
    pub fn with_placement(&self, placement: Placement) -> NetworkSpec {
        let mut spec = self.clone();
        for b in &mut spec.blocks {
            b.placement = placement;
            if placement != Placement::Residual {
                b.downsample = None;
            }
        }
        spec
    }

    /// Same topology with every shift moving zero channels.
    pub fn zero_shifts(&self) -> NetworkSpec {
        let mut spec = self.clone();
        for b in &mut spec.blocks {
            b.shift = ShiftSpec::identity();
        }
        spec
    }

    /// The network without temporal shifts: in-place blocks become plain
    /// blocks, residual blocks keep their skip path with an identity shift.
    pub fn shift_free(&self) -> NetworkSpec {
        let mut spec = self.zero_shifts();
        for b in &mut spec.blocks {
            if b.placement == Placement::InPlace {
                b.placement = Placement::None;
            }
        }
        spec
    }

    /// Drops every backward-shifted group so the network can stream.
    pub fn to_unidirectional(&self) -> NetworkSpec {
        let mut spec = self.clone();
        for b in &mut spec.blocks {
            b.shift = b.shift.to_unidirectional();
        }
        spec
    }

    pub fn with_frames(&self, t: usize) -> NetworkSpec {
        let mut spec = self.clone();
        spec.input.t = t;
        spec
    }

    pub fn from_json(text: &str) -> Result<NetworkSpec> {
        let spec: NetworkSpec = serde_json::from_str(text).map_err(|e| {
            let offset = byte_offset(text, e.line(), e.column());
            Error::format(offset, format!("invalid model spec: {e}"))
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec types serialize infallibly")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::write_file(path.as_ref(), self.to_json().as_bytes())
    }
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let bytes = codec::read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::format(e.valid_up_to() as u64, "spec is not UTF-8").in_file(path))?;
    NetworkSpec::from_json(text).map_err(|e| e.in_file(path))
}

fn conv_out(d: &ConvDesc, input: FeatureShape, ctx: &str) -> Result<FeatureShape> {
    LayerDesc::Conv2d(*d)
        .output_shape(input)
        .map_err(|e| Error::spec(format!("{ctx}: {e}")))
}

/// serde_json reports 1-based line and column; convert to a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len()) as u64
}

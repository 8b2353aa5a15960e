use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::{GraphBuilder, LayerKind, NetworkGraph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Channel-reduction divisor. `1` leaves every width untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct BottleneckRatio(usize);

impl BottleneckRatio {
    /// Ratios swept in the experiments.
    pub const SWEEP: [usize; 6] = [1, 2, 4, 8, 16, 32];
    pub const IDENTITY: BottleneckRatio = BottleneckRatio(1);

    pub fn new(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::Config("bottleneck ratio must be >= 1".into()));
        }
        Ok(Self(r))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn sweep() -> Vec<BottleneckRatio> {
        Self::SWEEP.iter().map(|&r| Self(r)).collect()
    }
}

impl TryFrom<usize> for BottleneckRatio {
    type Error = Error;

    fn try_from(r: usize) -> Result<Self> {
        Self::new(r)
    }
}

impl From<BottleneckRatio> for usize {
    fn from(r: BottleneckRatio) -> usize {
        r.0
    }
}

impl fmt::Display for BottleneckRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `max(1, floor(c / r))`.
pub fn mid_channels(c: usize, r: BottleneckRatio) -> usize {
    (c / r.0).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    R18,
    R34,
    R50,
    R101,
    R152,
    Tiny,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::R18,
        Variant::R34,
        Variant::R50,
        Variant::R101,
        Variant::R152,
        Variant::Tiny,
    ];

    pub fn block(self) -> BlockKind {
        match self {
            Variant::R18 | Variant::R34 | Variant::Tiny => BlockKind::Basic,
            _ => BlockKind::Bottleneck,
        }
    }

    /// Blocks per stage.
    pub fn stages(self) -> &'static [usize] {
        match self {
            Variant::R18 => &[2, 2, 2, 2],
            Variant::R34 | Variant::R50 => &[3, 4, 6, 3],
            Variant::R101 => &[3, 4, 23, 3],
            Variant::R152 => &[3, 8, 36, 3],
            Variant::Tiny => &[1, 1],
        }
    }

    /// Block output width per stage.
    pub fn widths(self) -> &'static [usize] {
        match self {
            Variant::R18 | Variant::R34 => &[64, 128, 256, 512],
            Variant::R50 | Variant::R101 | Variant::R152 => &[256, 512, 1024, 2048],
            Variant::Tiny => &[16, 32],
        }
    }

    pub fn stem_width(self) -> usize {
        match self {
            Variant::Tiny => 16,
            _ => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::R18 => "resnet18",
            Variant::R34 => "resnet34",
            Variant::R50 => "resnet50",
            Variant::R101 => "resnet101",
            Variant::R152 => "resnet152",
            Variant::Tiny => "tiny",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        match key.as_str() {
            "resnet18" | "r18" => Ok(Variant::R18),
            "resnet34" | "r34" => Ok(Variant::R34),
            "resnet50" | "r50" => Ok(Variant::R50),
            "resnet101" | "r101" => Ok(Variant::R101),
            "resnet152" | "r152" => Ok(Variant::R152),
            "tiny" => Ok(Variant::Tiny),
            _ => Err(Error::Config(format!(
                "model.variant: unknown variant {s:?} (expected one of resnet18, resnet34, resnet50, resnet101, resnet152, tiny)"
            ))),
        }
    }
}

impl GraphBuilder {
    fn conv(
        &mut self,
        name: String,
        from: NodeId,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> NodeId {
        let kind = LayerKind::Conv2d {
            c_in,
            c_out,
            k,
            stride,
            pad: k / 2,
        };
        self.push(name, kind, &[from])
    }

    fn bn_relu(&mut self, prefix: &str, suffix: &str, from: NodeId, c: usize) -> NodeId {
        let bn = self.push(
            format!("{prefix}.bn{suffix}"),
            LayerKind::BatchNorm { c },
            &[from],
        );
        self.push(format!("{prefix}.relu{suffix}"), LayerKind::Relu, &[bn])
    }

    /// Identity when shapes already agree, otherwise a strided 1x1 conv + BN.
    fn shortcut(
        &mut self,
        prefix: &str,
        from: NodeId,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> NodeId {
        if c_in == c_out && stride == 1 {
            return from;
        }
        let conv = self.conv(format!("{prefix}.proj.conv"), from, c_in, c_out, 1, stride);
        self.push(
            format!("{prefix}.proj.bn"),
            LayerKind::BatchNorm { c: c_out },
            &[conv],
        )
    }

    fn merge(&mut self, prefix: &str, main: NodeId, skip: NodeId, c_out: usize) -> NodeId {
        let add = self.push(
            format!("{prefix}.add"),
            LayerKind::ResidualAdd,
            &[main, skip],
        );
        self.bn_relu(prefix, "_out", add, c_out)
    }

    /// 3x3 conv (c_in -> c_mid) / BN / ReLU / 3x3 conv (c_mid -> c_out) / add / BN / ReLU.
    pub fn basic_block(
        &mut self,
        prefix: &str,
        from: NodeId,
        c_in: usize,
        c_out: usize,
        r: BottleneckRatio,
        stride: usize,
    ) -> NodeId {
        let c_mid = mid_channels(c_out, r);
        let c1 = self.conv(format!("{prefix}.conv1"), from, c_in, c_mid, 3, stride);
        let a1 = self.bn_relu(prefix, "1", c1, c_mid);
        let c2 = self.conv(format!("{prefix}.conv2"), a1, c_mid, c_out, 3, 1);
        let skip = self.shortcut(prefix, from, c_in, c_out, stride);
        self.merge(prefix, c2, skip, c_out)
    }

    /// 1x1 conv (c_in -> c_mid) / BN / ReLU / 3x3 conv (c_mid -> c_mid) / BN / ReLU /
    /// 1x1 conv (c_mid -> c_out) / add / BN / ReLU. The stride sits on the 3x3.
    pub fn bottleneck_block(
        &mut self,
        prefix: &str,
        from: NodeId,
        c_in: usize,
        c_out: usize,
        r: BottleneckRatio,
        stride: usize,
    ) -> NodeId {
        let c_mid = mid_channels(c_out, r);
        let c1 = self.conv(format!("{prefix}.conv1"), from, c_in, c_mid, 1, 1);
        let a1 = self.bn_relu(prefix, "1", c1, c_mid);
        let c2 = self.conv(format!("{prefix}.conv2"), a1, c_mid, c_mid, 3, stride);
        let a2 = self.bn_relu(prefix, "2", c2, c_mid);
        let c3 = self.conv(format!("{prefix}.conv3"), a2, c_mid, c_out, 1, 1);
        let skip = self.shortcut(prefix, from, c_in, c_out, stride);
        self.merge(prefix, c3, skip, c_out)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn block(
        &mut self,
        kind: BlockKind,
        prefix: &str,
        from: NodeId,
        c_in: usize,
        c_out: usize,
        r: BottleneckRatio,
        stride: usize,
    ) -> NodeId {
        match kind {
            BlockKind::Basic => self.basic_block(prefix, from, c_in, c_out, r, stride),
            BlockKind::Bottleneck => self.bottleneck_block(prefix, from, c_in, c_out, r, stride),
        }
    }
}

fn build_block(
    kind: BlockKind,
    c_in: usize,
    c_out: usize,
    r: BottleneckRatio,
    stride: usize,
    input: Shape,
) -> Result<NetworkGraph> {
    if c_in == 0 || c_out == 0 {
        return Err(Error::Config("block channel counts must be >= 1".into()));
    }
    let mut b = GraphBuilder::new();
    let x = b.input(c_in);
    b.block(kind, "block", x, c_in, c_out, r, stride);
    b.finish(Shape { c: c_in, ..input })
}

/// Standalone basic block fed by an input of shape `(n, c_in, h, w)`
/// (`input.c` is overridden by `c_in`).
pub fn build_basic_block(
    c_in: usize,
    c_out: usize,
    r: BottleneckRatio,
    stride: usize,
    input: Shape,
) -> Result<NetworkGraph> {
    build_block(BlockKind::Basic, c_in, c_out, r, stride, input)
}

pub fn build_bottleneck_block(
    c_in: usize,
    c_out: usize,
    r: BottleneckRatio,
    stride: usize,
    input: Shape,
) -> Result<NetworkGraph> {
    build_block(BlockKind::Bottleneck, c_in, c_out, r, stride, input)
}

/// Full network for `variant`, annotated for `input`.
///
/// The ResNet variants use a two-conv 3x3/stride-2 stem in place of the 7x7
/// conv + max-pool so only 1x1 and 3x3 kernels appear; stage output shapes
/// match the reference networks. `Tiny` uses a single stride-1 stem conv.
pub fn build_resnet(
    variant: Variant,
    r: BottleneckRatio,
    classes: usize,
    input: Shape,
) -> Result<NetworkGraph> {
    if classes < 2 {
        return Err(Error::Config(format!(
            "model.classes must be >= 2, got {classes}"
        )));
    }
    let mut b = GraphBuilder::new();
    let x = b.input(input.c);
    let stem = variant.stem_width();
    let mut cur = b.conv(
        "stem.conv1".into(),
        x,
        input.c,
        stem,
        3,
        if variant == Variant::Tiny { 1 } else { 2 },
    );
    cur = b.bn_relu("stem", "1", cur, stem);
    if variant != Variant::Tiny {
        cur = b.conv("stem.conv2".into(), cur, stem, stem, 3, 2);
        cur = b.bn_relu("stem", "2", cur, stem);
    }
    let mut c_in = stem;
    for (s, (&blocks, &width)) in variant.stages().iter().zip(variant.widths()).enumerate() {
        for i in 0..blocks {
            let stride = if i == 0 && s > 0 { 2 } else { 1 };
            cur = b.block(
                variant.block(),
                &format!("layer{}.{}", s + 1, i),
                cur,
                c_in,
                width,
                r,
                stride,
            );
            c_in = width;
        }
    }
    let pooled = b.push("pool", LayerKind::GlobalAvgPool, &[cur]);
    b.push(
        "head",
        LayerKind::LinearHead {
            features: c_in,
            classes,
        },
        &[pooled],
    );
    b.finish(input)
}

//! Architecture intermediate representation for the factorized block search space.
//!
//! A [`Skeleton`] fixes the sequence of blocks and the choices each block may
//! take. A [`NetworkArch`] picks one layer type and one repeat count per block;
//! [`propagate_shapes`] expands that into concrete per-layer tensor shapes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current version tag for skeleton files.
pub const SKELETON_VERSION: u32 = 1;
/// Current version tag for arch files.
pub const ARCH_VERSION: u32 = 1;

/// Stride of the fixed 3x3 stem convolution.
pub const STEM_STRIDE: u32 = 2;
/// Kernel size of the fixed stem convolution.
pub const STEM_KERNEL: u32 = 3;
/// Input image channels consumed by the stem.
pub const INPUT_CHANNELS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("spatial resolution underflows to zero at layer {layer} (input {input}, stride {stride})")]
    ShapeUnderflow { layer: usize, input: u32, stride: u32 },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid depth multiplier {0}")]
    InvalidMultiplier(f64),
}

/// Convolution operator of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvOp {
    /// Full KxK convolution over all input channels.
    Regular,
    /// KxK depthwise convolution followed by a 1x1 pointwise convolution.
    DepthwiseSep,
    /// Mobile inverted bottleneck: 1x1 expand, KxK depthwise, 1x1 project.
    #[serde(rename = "mbconv")]
    MbConv { expansion: u32 },
}

impl ConvOp {
    /// Whether the operator contains a depthwise KxK stage.
    pub fn is_depthwise(self) -> bool {
        !matches!(self, ConvOp::Regular)
    }
}

impl fmt::Display for ConvOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvOp::Regular => f.write_str("conv"),
            ConvOp::DepthwiseSep => f.write_str("sepconv"),
            ConvOp::MbConv { expansion } => write!(f, "mbconv{expansion}"),
        }
    }
}

/// Skip path attached to a layer.
///
/// Pooling skips apply a 3x3 stride-1 same-padded pool on the skip branch and
/// add it to the main branch, so like the identity residual they need the
/// layer's input and output shapes to match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipOp {
    NoSkip,
    Identity,
    MaxPool,
    AvgPool,
}

impl fmt::Display for SkipOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipOp::NoSkip => "no_skip",
            SkipOp::Identity => "id_skip",
            SkipOp::MaxPool => "maxpool_skip",
            SkipOp::AvgPool => "avgpool_skip",
        })
    }
}

/// The per-layer choices of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub conv_op: ConvOp,
    pub kernel: u32,
    pub skip_op: SkipOp,
    pub filters: u32,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-k{}x{}-{}-f{}",
            self.conv_op, self.kernel, self.kernel, self.skip_op, self.filters
        )
    }
}

/// Concrete tensor geometry of one resolved layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub height: u32,
    pub width: u32,
    pub channels_in: u32,
    pub channels_out: u32,
    pub kernel: u32,
    pub stride: u32,
}

impl LayerShape {
    /// Output height; downsampling floors.
    pub fn out_height(&self) -> u32 {
        self.height / self.stride
    }

    pub fn out_width(&self) -> u32 {
        self.width / self.stride
    }

    /// True when the layer's output tensor has the same shape as its input.
    pub fn preserves_shape(&self) -> bool {
        self.stride == 1 && self.channels_in == self.channels_out
    }
}

/// One block's chosen layer, how often it repeats, and the block stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub layer: LayerSpec,
    pub repeats: u32,
    pub stride: u32,
}

/// Allowed choices for one block of the skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockChoices {
    pub stride: u32,
    pub conv_ops: Vec<ConvOp>,
    pub kernels: Vec<u32>,
    pub skips: Vec<SkipOp>,
    pub filters: Vec<u32>,
    pub repeats: Vec<u32>,
}

impl BlockChoices {
    /// Size of this block's sub-space.
    pub fn size(&self) -> u64 {
        [
            self.conv_ops.len(),
            self.kernels.len(),
            self.skips.len(),
            self.filters.len(),
            self.repeats.len(),
        ]
        .iter()
        .map(|&n| n as u64)
        .product()
    }

    /// Number of distinct single-layer configurations (everything except repeats).
    pub fn layer_choices(&self) -> u64 {
        (self.conv_ops.len() * self.kernels.len() * self.skips.len() * self.filters.len()) as u64
    }
}

/// Classifier head after the last block: global average pool then dense.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    pub num_classes: u32,
}

/// The predefined block skeleton and its per-block choice sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub skeleton_version: u32,
    pub id: String,
    pub input_resolution: u32,
    pub stem_filters: u32,
    pub blocks: Vec<BlockChoices>,
    pub head: Head,
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].iter().any(|b| b == a))
}

impl Skeleton {
    pub fn from_json(text: &str) -> Result<Self, ArchError> {
        let skeleton: Skeleton =
            serde_json::from_str(text).map_err(|e| ArchError::InvalidSkeleton(e.to_string()))?;
        skeleton.check()?;
        Ok(skeleton)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    /// Checks the structural invariants of the skeleton itself.
    pub fn check(&self) -> Result<(), ArchError> {
        let bad = |msg: String| Err(ArchError::InvalidSkeleton(msg));
        if self.skeleton_version != SKELETON_VERSION {
            return bad(format!(
                "unsupported skeleton_version {} (expected {SKELETON_VERSION})",
                self.skeleton_version
            ));
        }
        if self.blocks.is_empty() {
            return bad("skeleton has no blocks".into());
        }
        if self.stem_filters == 0 {
            return bad("stem_filters must be positive".into());
        }
        if self.head.num_classes == 0 {
            return bad("head.num_classes must be positive".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.stride != 1 && b.stride != 2 {
                return bad(format!("block {i}: stride {} not in {{1,2}}", b.stride));
            }
            if b.conv_ops.is_empty()
                || b.kernels.is_empty()
                || b.skips.is_empty()
                || b.filters.is_empty()
                || b.repeats.is_empty()
            {
                return bad(format!("block {i}: every choice set must be non-empty"));
            }
            if has_duplicates(&b.conv_ops)
                || has_duplicates(&b.kernels)
                || has_duplicates(&b.skips)
                || has_duplicates(&b.filters)
                || has_duplicates(&b.repeats)
            {
                return bad(format!("block {i}: choice sets must not contain duplicates"));
            }
            if let Some(k) = b.kernels.iter().find(|&&k| k != 3 && k != 5) {
                return bad(format!("block {i}: kernel {k} not in {{3,5}}"));
            }
            if b.filters.contains(&0) {
                return bad(format!("block {i}: filter counts must be positive"));
            }
            if b.repeats.contains(&0) {
                return bad(format!("block {i}: repeat counts must be positive"));
            }
            if b
                .conv_ops
                .iter()
                .any(|op| matches!(op, ConvOp::MbConv { expansion: 0 }))
            {
                return bad(format!("block {i}: mbconv expansion must be positive"));
            }
        }
        let stride_product: u64 = self.blocks.iter().map(|b| b.stride as u64).product();
        if self.input_resolution == 0 || self.input_resolution as u64 % stride_product != 0 {
            return bad(format!(
                "block stride product {stride_product} does not divide input_resolution {}",
                self.input_resolution
            ));
        }
        let mut res = self.input_resolution / STEM_STRIDE;
        for b in &self.blocks {
            res /= b.stride;
        }
        if res == 0 {
            return bad("feature map shrinks to zero before the last block".into());
        }
        Ok(())
    }

    /// Product of all block strides.
    pub fn stride_product(&self) -> u64 {
        self.blocks.iter().map(|b| b.stride as u64).product()
    }
}

/// A single layer after shape propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResolvedLayer {
    pub block: usize,
    pub spec: LayerSpec,
    pub shape: LayerShape,
}

/// A fully resolved candidate network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub skeleton_id: String,
    pub input_resolution: u32,
    pub stem_filters: u32,
    pub blocks: Vec<BlockSpec>,
    pub layers: Vec<ResolvedLayer>,
}

impl NetworkArch {
    /// Resolves `blocks` against the skeleton's stem and input resolution.
    pub fn build(skeleton: &Skeleton, blocks: Vec<BlockSpec>) -> Result<Self, ArchError> {
        Self::from_parts(
            skeleton.id.clone(),
            skeleton.input_resolution,
            skeleton.stem_filters,
            blocks,
        )
    }

    pub fn from_parts(
        skeleton_id: String,
        input_resolution: u32,
        stem_filters: u32,
        blocks: Vec<BlockSpec>,
    ) -> Result<Self, ArchError> {
        let layers = resolve_layers(&blocks, input_resolution, stem_filters)?;
        Ok(NetworkArch {
            skeleton_id,
            input_resolution,
            stem_filters,
            blocks,
            layers,
        })
    }

    /// Returns a copy with different block specs, re-propagating shapes.
    pub fn with_blocks(&self, blocks: Vec<BlockSpec>) -> Result<Self, ArchError> {
        Self::from_parts(
            self.skeleton_id.clone(),
            self.input_resolution,
            self.stem_filters,
            blocks,
        )
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Spatial resolution entering the first block.
    pub fn stem_output_resolution(&self) -> u32 {
        self.input_resolution / STEM_STRIDE
    }

    /// Serializes the arch file form: block specs plus skeleton id.
    pub fn to_arch_file(&self) -> ArchFile {
        ArchFile {
            arch_version: ARCH_VERSION,
            skeleton_id: self.skeleton_id.clone(),
            input_resolution: Some(self.input_resolution),
            stem_filters: Some(self.stem_filters),
            blocks: self.blocks.clone(),
        }
    }
}

/// On-disk form of an architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchFile {
    pub arch_version: u32,
    pub skeleton_id: String,
    /// Overrides the skeleton's input resolution when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_resolution: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem_filters: Option<u32>,
    pub blocks: Vec<BlockSpec>,
}

impl ArchFile {
    pub fn from_json(text: &str) -> Result<Self, ArchError> {
        let file: ArchFile =
            serde_json::from_str(text).map_err(|e| ArchError::InvalidSkeleton(e.to_string()))?;
        if file.arch_version != ARCH_VERSION {
            return Err(ArchError::InvalidSkeleton(format!(
                "unsupported arch_version {}",
                file.arch_version
            )));
        }
        Ok(file)
    }

    /// Resolves against the skeleton it names.
    pub fn resolve(&self, skeleton: &Skeleton) -> Result<NetworkArch, ArchError> {
        NetworkArch::from_parts(
            self.skeleton_id.clone(),
            self.input_resolution.unwrap_or(skeleton.input_resolution),
            self.stem_filters.unwrap_or(skeleton.stem_filters),
            self.blocks.clone(),
        )
    }
}

/// Expands block specs into per-layer shapes.
///
/// The stem halves the input resolution. Within each block only the first
/// layer carries the block stride. A skip is kept on every layer whose input
/// and output shapes match and replaced by [`SkipOp::NoSkip`] elsewhere.
pub fn propagate_shapes(
    blocks: &[BlockSpec],
    skeleton: &Skeleton,
) -> Result<Vec<ResolvedLayer>, ArchError> {
    resolve_layers(blocks, skeleton.input_resolution, skeleton.stem_filters)
}

pub(crate) fn resolve_layers(
    blocks: &[BlockSpec],
    input_resolution: u32,
    stem_filters: u32,
) -> Result<Vec<ResolvedLayer>, ArchError> {
    let mut res = input_resolution / STEM_STRIDE;
    if res == 0 {
        return Err(ArchError::ShapeUnderflow {
            layer: 0,
            input: input_resolution,
            stride: STEM_STRIDE,
        });
    }
    let mut channels = stem_filters;
    let mut layers = Vec::with_capacity(blocks.iter().map(|b| b.repeats as usize).sum());
    for (block_idx, block) in blocks.iter().enumerate() {
        for rep in 0..block.repeats {
            let stride = if rep == 0 { block.stride } else { 1 };
            let shape = LayerShape {
                height: res,
                width: res,
                channels_in: channels,
                channels_out: block.layer.filters,
                kernel: block.layer.kernel,
                stride,
            };
            if shape.out_height() == 0 {
                return Err(ArchError::ShapeUnderflow {
                    layer: layers.len(),
                    input: res,
                    stride,
                });
            }
            let skip_op = if shape.preserves_shape() {
                block.layer.skip_op
            } else {
                SkipOp::NoSkip
            };
            layers.push(ResolvedLayer {
                block: block_idx,
                spec: LayerSpec {
                    skip_op,
                    ..block.layer
                },
                shape,
            });
            res = shape.out_height();
            channels = shape.channels_out;
        }
    }
    Ok(layers)
}

/// Which per-block decision a violation or token refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    ConvOp,
    Kernel,
    Skip,
    Filters,
    Repeats,
}

impl Slot {
    /// Slot order within a block's token group.
    pub const ORDER: [Slot; 5] = [
        Slot::ConvOp,
        Slot::Kernel,
        Slot::Skip,
        Slot::Filters,
        Slot::Repeats,
    ];
}

/// A single broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    SkeletonMismatch { expected: String, found: String },
    BlockCountMismatch { expected: usize, found: usize },
    ChoiceOutOfRange { block: usize, slot: Slot, value: String },
    StrideMismatch { block: usize, expected: u32, found: u32 },
    LayerCountMismatch { expected: usize, found: usize },
    ShapeChainBreak { layer: usize },
    SkipShapeMismatch { layer: usize },
    LayerMismatch { layer: usize },
    ShapeUnderflow { layer: usize },
}

/// Every invariant `validate` found broken; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }
}

/// Checks an arch against its skeleton, reporting every violation found.
pub fn validate(arch: &NetworkArch, skeleton: &Skeleton) -> ValidationReport {
    let mut v = Vec::new();
    if arch.skeleton_id != skeleton.id {
        v.push(Violation::SkeletonMismatch {
            expected: skeleton.id.clone(),
            found: arch.skeleton_id.clone(),
        });
    }
    if arch.blocks.len() != skeleton.blocks.len() {
        v.push(Violation::BlockCountMismatch {
            expected: skeleton.blocks.len(),
            found: arch.blocks.len(),
        });
    }
    for (i, (spec, choices)) in arch.blocks.iter().zip(&skeleton.blocks).enumerate() {
        let mut out = |slot, value: String| {
            v.push(Violation::ChoiceOutOfRange {
                block: i,
                slot,
                value,
            })
        };
        if !choices.conv_ops.contains(&spec.layer.conv_op) {
            out(Slot::ConvOp, spec.layer.conv_op.to_string());
        }
        if !choices.kernels.contains(&spec.layer.kernel) {
            out(Slot::Kernel, spec.layer.kernel.to_string());
        }
        if !choices.skips.contains(&spec.layer.skip_op) {
            out(Slot::Skip, spec.layer.skip_op.to_string());
        }
        if !choices.filters.contains(&spec.layer.filters) {
            out(Slot::Filters, spec.layer.filters.to_string());
        }
        if !choices.repeats.contains(&spec.repeats) {
            out(Slot::Repeats, spec.repeats.to_string());
        }
        if spec.stride != choices.stride {
            v.push(Violation::StrideMismatch {
                block: i,
                expected: choices.stride,
                found: spec.stride,
            });
        }
    }

    // Shape chain over the stored layers.
    let mut res = arch.input_resolution / STEM_STRIDE;
    let mut channels = arch.stem_filters;
    for (i, layer) in arch.layers.iter().enumerate() {
        let s = &layer.shape;
        if s.height != res || s.width != res || s.channels_in != channels {
            v.push(Violation::ShapeChainBreak { layer: i });
        }
        if layer.spec.skip_op != SkipOp::NoSkip && !s.preserves_shape() {
            v.push(Violation::SkipShapeMismatch { layer: i });
        }
        res = s.out_height();
        channels = s.channels_out;
    }

    // Stored layers must agree with what the block specs resolve to.
    match resolve_layers(&arch.blocks, arch.input_resolution, arch.stem_filters) {
        Ok(expected) => {
            if expected.len() != arch.layers.len() {
                v.push(Violation::LayerCountMismatch {
                    expected: expected.len(),
                    found: arch.layers.len(),
                });
            }
            for (i, (want, got)) in expected.iter().zip(&arch.layers).enumerate() {
                let skip_ok = got.spec.skip_op == want.spec.skip_op
                    || (got.spec.skip_op != SkipOp::NoSkip && !got.shape.preserves_shape());
                let same_rest = want.block == got.block
                    && want.shape == got.shape
                    && LayerSpec {
                        skip_op: SkipOp::NoSkip,
                        ..want.spec
                    } == LayerSpec {
                        skip_op: SkipOp::NoSkip,
                        ..got.spec
                    };
                if !(skip_ok && same_rest) {
                    v.push(Violation::LayerMismatch { layer: i });
                }
            }
        }
        Err(ArchError::ShapeUnderflow { layer, .. }) => {
            v.push(Violation::ShapeUnderflow { layer });
        }
        Err(_) => {}
    }
    ValidationReport { violations: v }
}

/// Replaces every block's layer type with `layer_type` while keeping each
/// block's own filter count and repeat count.
///
/// Skips land only where shapes allow, as in [`propagate_shapes`].
pub fn uniform_variant(arch: &NetworkArch, layer_type: &LayerSpec) -> Result<NetworkArch, ArchError> {
    let blocks = arch
        .blocks
        .iter()
        .map(|b| BlockSpec {
            layer: LayerSpec {
                filters: b.layer.filters,
                ..*layer_type
            },
            ..*b
        })
        .collect();
    arch.with_blocks(blocks)
}

//! Multiply-add and parameter counting, device-profile latency estimation,
//! and the depth-multiplier / input-size scaling transforms.
//!
//! Counting conventions (stem and head are not included):
//!
//! | op | MACs | params |
//! |----|------|--------|
//! | regular | `H'·W'·M·N·K²` | `K²·M·N` |
//! | depthwise separable | `H'·W'·M·K² + H'·W'·M·N` | `K²·M + M·N` |
//! | MBConv(e) | `H·W·M·eM + H'·W'·eM·K² + H'·W'·eM·N` | `M·eM + K²·eM + eM·N` |
//!
//! `H'`, `W'` are the output spatial dims (input floored by the stride); every
//! term that runs after the strided stage uses them. Biases, batch norm, skip
//! adds and pooling are not counted.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, BlockSpec, ConvOp, LayerShape, NetworkArch, ResolvedLayer, SkipOp};

pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("device profile has no coefficients for ({op}, k{kernel})")]
    ProfileMiss { op: OpKind, kernel: u32 },
    #[error("invalid device profile: {0}")]
    InvalidProfile(String),
}

/// Multiply-adds of one layer.
pub fn layer_macs(shape: &LayerShape, op: ConvOp) -> u64 {
    let (h, w) = (shape.height as u64, shape.width as u64);
    let (ho, wo) = (shape.out_height() as u64, shape.out_width() as u64);
    let (m, n) = (shape.channels_in as u64, shape.channels_out as u64);
    let k2 = (shape.kernel as u64).pow(2);
    match op {
        ConvOp::Regular => ho * wo * m * n * k2,
        ConvOp::DepthwiseSep => ho * wo * m * k2 + ho * wo * m * n,
        ConvOp::MbConv { expansion } => {
            let hidden = expansion as u64 * m;
            h * w * m * hidden + ho * wo * hidden * k2 + ho * wo * hidden * n
        }
    }
}

/// Weight count of one layer (no biases, no batch norm).
pub fn layer_params(shape: &LayerShape, op: ConvOp) -> u64 {
    let (m, n) = (shape.channels_in as u64, shape.channels_out as u64);
    let k2 = (shape.kernel as u64).pow(2);
    match op {
        ConvOp::Regular => k2 * m * n,
        ConvOp::DepthwiseSep => k2 * m + m * n,
        ConvOp::MbConv { expansion } => {
            let hidden = expansion as u64 * m;
            m * hidden + k2 * hidden + hidden * n
        }
    }
}

/// Depthwise-separable cost of one 5x5 layer against two stacked 3x3 layers
/// at the same resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelCost {
    pub c5: u64,
    pub c3: u64,
    pub five_beats_two_threes: bool,
}

/// `c5 = H·W·M·(25+N)`, `c3 = H·W·M·(9+N)`; the flag is `c5 < 2·c3`,
/// which holds exactly when `N > 7`.
pub fn kernel_cost_compare(shape: &LayerShape, n_out: u64) -> KernelCost {
    let hwm = shape.height as u64 * shape.width as u64 * shape.channels_in as u64;
    let c5 = hwm * (25 + n_out);
    let c3 = hwm * (9 + n_out);
    KernelCost {
        c5,
        c3,
        five_beats_two_threes: c5 < 2 * c3,
    }
}

/// Coarse operator family used to key profile coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Regular,
    DepthwiseSep,
    #[serde(rename = "mbconv")]
    MbConv,
}

impl From<ConvOp> for OpKind {
    fn from(op: ConvOp) -> Self {
        match op {
            ConvOp::Regular => OpKind::Regular,
            ConvOp::DepthwiseSep => OpKind::DepthwiseSep,
            ConvOp::MbConv { .. } => OpKind::MbConv,
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OpKind::Regular => "regular",
            OpKind::DepthwiseSep => "depthwise_sep",
            OpKind::MbConv => "mbconv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub op: OpKind,
    pub kernel: u32,
    pub per_mac_ns: f64,
    pub per_param_ns: f64,
    pub fixed_overhead_us: f64,
}

/// Everything that identifies a layer for exact latency lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub conv_op: ConvOp,
    pub skip_op: SkipOp,
    pub height: u32,
    pub width: u32,
    pub channels_in: u32,
    pub channels_out: u32,
    pub kernel: u32,
    pub stride: u32,
}

impl From<&ResolvedLayer> for LayerDescriptor {
    fn from(l: &ResolvedLayer) -> Self {
        LayerDescriptor {
            conv_op: l.spec.conv_op,
            skip_op: l.spec.skip_op,
            height: l.shape.height,
            width: l.shape.width,
            channels_in: l.shape.channels_in,
            channels_out: l.shape.channels_out,
            kernel: l.shape.kernel,
            stride: l.shape.stride,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookupEntry {
    pub layer: LayerDescriptor,
    pub latency_ms: f64,
}

/// Device latency model: affine per-op coefficients plus exact per-layer
/// measurements that take precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub profile_version: u32,
    pub name: String,
    pub coefficients: Vec<CoefficientEntry>,
    #[serde(default)]
    pub lookup: Vec<LookupEntry>,
}

impl DeviceProfile {
    pub fn from_json(text: &str) -> Result<Self, CostError> {
        let p: DeviceProfile =
            serde_json::from_str(text).map_err(|e| CostError::InvalidProfile(e.to_string()))?;
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), CostError> {
        let bad = |m: String| Err(CostError::InvalidProfile(m));
        if self.profile_version != PROFILE_VERSION {
            return bad(format!("unsupported profile_version {}", self.profile_version));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.coefficients {
            let ok = |x: f64| x.is_finite() && x >= 0.0;
            if !(ok(c.per_mac_ns) && ok(c.per_param_ns) && ok(c.fixed_overhead_us)) {
                return bad(format!("({}, k{}): coefficients must be finite and >= 0", c.op, c.kernel));
            }
            if !seen.insert((c.op, c.kernel)) {
                return bad(format!("({}, k{}) listed twice", c.op, c.kernel));
            }
        }
        if let Some(e) = self
            .lookup
            .iter()
            .find(|e| !(e.latency_ms.is_finite() && e.latency_ms >= 0.0))
        {
            return bad(format!("lookup latency {} must be finite and >= 0", e.latency_ms));
        }
        Ok(())
    }

    /// Returns a copy with every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> DeviceProfile {
        let mut p = self.clone();
        for c in &mut p.coefficients {
            c.per_mac_ns *= factor;
            c.per_param_ns *= factor;
            c.fixed_overhead_us *= factor;
        }
        for e in &mut p.lookup {
            e.latency_ms *= factor;
        }
        p
    }
}

/// A [`DeviceProfile`] indexed for repeated estimation.
#[derive(Debug, Clone)]
pub struct LatencyModel {
    coefficients: HashMap<(OpKind, u32), CoefficientEntry>,
    lookup: HashMap<LayerDescriptor, f64>,
}

impl LatencyModel {
    pub fn new(profile: &DeviceProfile) -> Self {
        LatencyModel {
            coefficients: profile
                .coefficients
                .iter()
                .map(|c| ((c.op, c.kernel), *c))
                .collect(),
            lookup: profile
                .lookup
                .iter()
                .map(|e| (e.layer, e.latency_ms))
                .collect(),
        }
    }

    fn layer_latency_ms(&self, layer: &ResolvedLayer, macs: u64, params: u64) -> Result<f64, CostError> {
        if let Some(&ms) = self.lookup.get(&LayerDescriptor::from(layer)) {
            return Ok(ms);
        }
        let key = (OpKind::from(layer.spec.conv_op), layer.spec.kernel);
        let c = self.coefficients.get(&key).ok_or(CostError::ProfileMiss {
            op: key.0,
            kernel: key.1,
        })?;
        Ok((macs as f64 * c.per_mac_ns + params as f64 * c.per_param_ns) * 1e-6
            + c.fixed_overhead_us * 1e-3)
    }

    pub fn estimate(&self, arch: &NetworkArch) -> Result<CostBreakdown, CostError> {
        let mut per_layer = Vec::with_capacity(arch.layers.len());
        for layer in &arch.layers {
            let macs = layer_macs(&layer.shape, layer.spec.conv_op);
            let params = layer_params(&layer.shape, layer.spec.conv_op);
            let latency_ms = self.layer_latency_ms(layer, macs, params)?;
            per_layer.push(LayerCost {
                macs,
                params,
                latency_ms,
            });
        }
        Ok(CostBreakdown::from_layers(per_layer))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub macs: u64,
    pub params: u64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_layer: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_params: u64,
    pub total_latency_ms: f64,
}

impl CostBreakdown {
    fn from_layers(per_layer: Vec<LayerCost>) -> Self {
        CostBreakdown {
            total_macs: per_layer.iter().map(|l| l.macs).sum(),
            total_params: per_layer.iter().map(|l| l.params).sum(),
            total_latency_ms: per_layer.iter().map(|l| l.latency_ms).sum(),
            per_layer,
        }
    }
}

/// MACs and params of a whole arch without latency.
pub fn arch_macs(arch: &NetworkArch) -> u64 {
    arch.layers
        .iter()
        .map(|l| layer_macs(&l.shape, l.spec.conv_op))
        .sum()
}

pub fn arch_params(arch: &NetworkArch) -> u64 {
    arch.layers
        .iter()
        .map(|l| layer_params(&l.shape, l.spec.conv_op))
        .sum()
}

/// Per-layer and total cost of `arch` on `profile`.
pub fn estimate_latency(arch: &NetworkArch, profile: &DeviceProfile) -> Result<CostBreakdown, CostError> {
    LatencyModel::new(profile).estimate(arch)
}

/// `max(8, d·filters)` rounded to the nearest multiple of 8 (halves round up).
pub fn scaled_filters(filters: u32, multiplier: f64) -> u32 {
    let x = (multiplier * filters as f64).max(8.0);
    ((x / 8.0 + 0.5).floor() as u32 * 8).max(8)
}

/// Scales every channel count (stem included) by `multiplier`.
pub fn apply_depth_multiplier(arch: &NetworkArch, multiplier: f64) -> Result<NetworkArch, ArchError> {
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(ArchError::InvalidMultiplier(multiplier));
    }
    let blocks: Vec<BlockSpec> = arch
        .blocks
        .iter()
        .map(|b| {
            let mut b = *b;
            b.layer.filters = scaled_filters(b.layer.filters, multiplier);
            b
        })
        .collect();
    NetworkArch::from_parts(
        arch.skeleton_id.clone(),
        arch.input_resolution,
        scaled_filters(arch.stem_filters, multiplier),
        blocks,
    )
}

/// Re-propagates shapes for a new input resolution.
pub fn apply_input_size(arch: &NetworkArch, resolution: u32) -> Result<NetworkArch, ArchError> {
    NetworkArch::from_parts(
        arch.skeleton_id.clone(),
        resolution,
        arch.stem_filters,
        arch.blocks.clone(),
    )
}

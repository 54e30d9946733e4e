//! Exhaustive enumeration of small spaces and depth/resolution scaling grids.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, NetworkArch, Skeleton};
use crate::codec::{arch_id, cardinality, decode_tokens, CodecError, TokenOdometer};
use crate::cost::{apply_depth_multiplier, apply_input_size, CostError, LatencyModel};
use crate::eval::{surrogate_accuracy, SurrogateConfig};

/// Largest space [`enumerate`] walks unless told otherwise.
pub const DEFAULT_ENUMERATION_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("search space has {cardinality} archs, above the limit of {limit}")]
    SpaceTooLarge { cardinality: BigUint, limit: u64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

/// Costs of one enumerated arch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedArch {
    pub arch_id: String,
    pub tokens: Vec<usize>,
    pub macs: u64,
    pub params: u64,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Lazily walks every token sequence of a skeleton in odometer order.
pub struct Enumeration<'a> {
    skeleton: &'a Skeleton,
    model: &'a LatencyModel,
    surrogate: Option<&'a SurrogateConfig>,
    odometer: TokenOdometer,
}

impl Iterator for Enumeration<'_> {
    type Item = Result<EnumeratedArch, ExploreError>;

    fn next(&mut self) -> Option<Self::Item> {
        let tokens = self.odometer.next()?;
        Some(describe(&tokens, self.skeleton, self.model, self.surrogate))
    }
}

fn describe(
    tokens: &[usize],
    skeleton: &Skeleton,
    model: &LatencyModel,
    surrogate: Option<&SurrogateConfig>,
) -> Result<EnumeratedArch, ExploreError> {
    let arch = decode_tokens(tokens, skeleton)?;
    let cost = model.estimate(&arch)?;
    Ok(EnumeratedArch {
        arch_id: arch_id(tokens),
        tokens: tokens.to_vec(),
        macs: cost.total_macs,
        params: cost.total_params,
        latency_ms: cost.total_latency_ms,
        accuracy: surrogate.map(|s| surrogate_accuracy(&arch, s)),
    })
}

/// Every arch of `skeleton` with its costs, refusing spaces above `limit`.
pub fn enumerate<'a>(
    skeleton: &'a Skeleton,
    model: &'a LatencyModel,
    surrogate: Option<&'a SurrogateConfig>,
    limit: u64,
) -> Result<Enumeration<'a>, ExploreError> {
    let size = cardinality(skeleton);
    if size > BigUint::from(limit) {
        return Err(ExploreError::SpaceTooLarge {
            cardinality: size,
            limit,
        });
    }
    Ok(Enumeration {
        skeleton,
        model,
        surrogate,
        odometer: TokenOdometer::new(skeleton),
    })
}

/// One cell of a depth-multiplier by input-size grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub multiplier: f64,
    pub input_size: u32,
    pub macs: Option<u64>,
    pub params: Option<u64>,
    pub latency_ms: Option<f64>,
    pub accuracy: Option<f64>,
    /// Why the cell has no costs, e.g. a shape underflow.
    pub error: Option<String>,
}

fn scale_cell(
    arch: &NetworkArch,
    multiplier: f64,
    input_size: u32,
    model: &LatencyModel,
) -> Result<(NetworkArch, u64, u64, f64), ExploreError> {
    let scaled = apply_depth_multiplier(&apply_input_size(arch, input_size)?, multiplier)?;
    let cost = model.estimate(&scaled)?;
    Ok((scaled, cost.total_macs, cost.total_params, cost.total_latency_ms))
}

/// Costs of `arch` over every (multiplier, input size) pair, multiplier-major.
/// An empty `input_sizes` means the arch's own resolution. Cells whose shapes
/// underflow are reported with `error` set instead of failing the grid.
pub fn scale_grid(
    arch: &NetworkArch,
    multipliers: &[f64],
    input_sizes: &[u32],
    model: &LatencyModel,
    surrogate: Option<&SurrogateConfig>,
) -> Vec<ScaleRow> {
    let own = [arch.input_resolution];
    let sizes = if input_sizes.is_empty() { &own[..] } else { input_sizes };
    let mut rows = Vec::with_capacity(multipliers.len() * sizes.len());
    for &d in multipliers {
        for &r in sizes {
            let row = match scale_cell(arch, d, r, model) {
                Ok((scaled, macs, params, lat)) => ScaleRow {
                    multiplier: d,
                    input_size: r,
                    macs: Some(macs),
                    params: Some(params),
                    latency_ms: Some(lat),
                    accuracy: surrogate.map(|s| surrogate_accuracy(&scaled, s)),
                    error: None,
                },
                Err(e) => ScaleRow {
                    multiplier: d,
                    input_size: r,
                    macs: None,
                    params: None,
                    latency_ms: None,
                    accuracy: None,
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }
    rows
}

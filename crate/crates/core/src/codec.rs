//! Token encoding of architectures and search-space size accounting.
//!
//! Each block contributes five token slots, in this order: conv op, kernel,
//! skip op, filter count, repeat count. A token is the index of the chosen
//! value in the skeleton's corresponding choice list.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{validate, ArchError, BlockSpec, LayerSpec, NetworkArch, Skeleton, Slot, Violation};

/// Token slots contributed by every block.
pub const SLOTS_PER_BLOCK: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("arch is not a member of the search space ({} violations)", .0.len())]
    InvalidArch(Vec<Violation>),
    #[error("token {token} at position {position} out of range for arity {arity}")]
    TokenOutOfRange {
        position: usize,
        token: usize,
        arity: usize,
    },
    #[error("expected {expected} tokens, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Arch(#[from] ArchError),
}

/// A flat sequence of per-slot category indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub slot_arities: Vec<usize>,
}

impl TokenSequence {
    /// Builds a sequence, checking length and per-slot ranges.
    pub fn new(tokens: Vec<usize>, slot_arities: Vec<usize>) -> Result<Self, CodecError> {
        if tokens.len() != slot_arities.len() {
            return Err(CodecError::LengthMismatch {
                expected: slot_arities.len(),
                found: tokens.len(),
            });
        }
        for (position, (&token, &arity)) in tokens.iter().zip(&slot_arities).enumerate() {
            if token >= arity {
                return Err(CodecError::TokenOutOfRange {
                    position,
                    token,
                    arity,
                });
            }
        }
        Ok(TokenSequence {
            tokens,
            slot_arities,
        })
    }

    /// Stable identifier derived from the tokens, e.g. `t0-1-0-2-3`.
    pub fn arch_id(&self) -> String {
        arch_id(&self.tokens)
    }
}

/// Identifier for a token list; used as the arch id everywhere.
pub fn arch_id(tokens: &[usize]) -> String {
    let mut s = String::with_capacity(1 + tokens.len() * 2);
    s.push('t');
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push('-');
        }
        s.push_str(&t.to_string());
    }
    s
}

/// Alphabet size of every slot, block-major.
pub fn slot_arities(skeleton: &Skeleton) -> Vec<usize> {
    skeleton
        .blocks
        .iter()
        .flat_map(|b| {
            [
                b.conv_ops.len(),
                b.kernels.len(),
                b.skips.len(),
                b.filters.len(),
                b.repeats.len(),
            ]
        })
        .collect()
}

fn index_of<T: PartialEq>(items: &[T], value: &T) -> Option<usize> {
    items.iter().position(|x| x == value)
}

/// Maps a valid arch to its token sequence.
pub fn encode(arch: &NetworkArch, skeleton: &Skeleton) -> Result<TokenSequence, CodecError> {
    let report = validate(arch, skeleton);
    if !report.is_valid() {
        return Err(CodecError::InvalidArch(report.violations));
    }
    let mut tokens = Vec::with_capacity(skeleton.blocks.len() * SLOTS_PER_BLOCK);
    for (spec, choices) in arch.blocks.iter().zip(&skeleton.blocks) {
        // validate() has already confirmed membership.
        tokens.push(index_of(&choices.conv_ops, &spec.layer.conv_op).unwrap());
        tokens.push(index_of(&choices.kernels, &spec.layer.kernel).unwrap());
        tokens.push(index_of(&choices.skips, &spec.layer.skip_op).unwrap());
        tokens.push(index_of(&choices.filters, &spec.layer.filters).unwrap());
        tokens.push(index_of(&choices.repeats, &spec.repeats).unwrap());
    }
    Ok(TokenSequence {
        tokens,
        slot_arities: slot_arities(skeleton),
    })
}

/// Maps a token list back to the block specs it selects.
pub fn decode_blocks(tokens: &[usize], skeleton: &Skeleton) -> Result<Vec<BlockSpec>, CodecError> {
    let arities = slot_arities(skeleton);
    TokenSequence::new(tokens.to_vec(), arities)?;
    Ok(skeleton
        .blocks
        .iter()
        .zip(tokens.chunks_exact(SLOTS_PER_BLOCK))
        .map(|(choices, t)| BlockSpec {
            layer: LayerSpec {
                conv_op: choices.conv_ops[t[0]],
                kernel: choices.kernels[t[1]],
                skip_op: choices.skips[t[2]],
                filters: choices.filters[t[3]],
            },
            repeats: choices.repeats[t[4]],
            stride: choices.stride,
        })
        .collect())
}

/// Maps a token sequence to a resolved arch.
///
/// A skip token on a layer whose shape changes resolves to no skip on that
/// layer; the block keeps its chosen skip for the layers where it fits.
pub fn decode(tokens: &TokenSequence, skeleton: &Skeleton) -> Result<NetworkArch, CodecError> {
    decode_tokens(&tokens.tokens, skeleton)
}

pub fn decode_tokens(tokens: &[usize], skeleton: &Skeleton) -> Result<NetworkArch, CodecError> {
    let blocks = decode_blocks(tokens, skeleton)?;
    Ok(NetworkArch::build(skeleton, blocks)?)
}

/// Which decision a flat slot index refers to.
pub fn slot_kind(position: usize) -> (usize, Slot) {
    (
        position / SLOTS_PER_BLOCK,
        Slot::ORDER[position % SLOTS_PER_BLOCK],
    )
}

/// Size of the factorized space: the product of every block's sub-space size.
pub fn cardinality(skeleton: &Skeleton) -> BigUint {
    skeleton
        .blocks
        .iter()
        .fold(BigUint::from(1u32), |acc, b| acc * BigUint::from(b.size()))
}

/// Size of the equivalent flat per-layer space when every one of the
/// `layers_per_block` layers in a block picks independently from the block's
/// whole sub-space: the product over blocks of `S_b ^ layers_per_block`.
///
/// For `B` identical blocks of size `S` this is `S^(B·N)`.
pub fn flat_cardinality(skeleton: &Skeleton, layers_per_block: u32) -> BigUint {
    skeleton.blocks.iter().fold(BigUint::from(1u32), |acc, b| {
        acc * BigUint::from(b.size()).pow(layers_per_block)
    })
}

/// Odometer over every token sequence of a skeleton, last slot fastest.
pub struct TokenOdometer {
    arities: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl TokenOdometer {
    pub fn new(skeleton: &Skeleton) -> Self {
        let arities = slot_arities(skeleton);
        let start = if arities.iter().all(|&a| a > 0) {
            Some(vec![0; arities.len()])
        } else {
            None
        };
        TokenOdometer {
            arities,
            next: start,
        }
    }
}

impl Iterator for TokenOdometer {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut i = succ.len();
        loop {
            if i == 0 {
                self.next = None;
                break;
            }
            i -= 1;
            succ[i] += 1;
            if succ[i] < self.arities[i] {
                self.next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(current)
    }
}

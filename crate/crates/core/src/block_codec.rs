//! Little-endian `l`-bit block decomposition of coordinates.
//!
//! A coordinate `x < 2^(m*l)` is written as `sum_j blocks[j] * 2^(j*l)`. The
//! matching protocol discloses, per block, the signed scaled difference
//! `(driver_block - rider_block) * 2^(j*l)`; summing those over `j` gives the
//! exact signed coordinate difference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_BLOCK_BITS: u32 = 8;
/// Upper bound on `m * l`.
pub const MAX_TOTAL_BITS: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("block width l={0} outside [1, {MAX_BLOCK_BITS}]")]
    BlockWidth(u32),
    #[error("block count m must be at least 1")]
    ZeroBlocks,
    #[error("m*l = {0} exceeds the supported {MAX_TOTAL_BITS} bits")]
    TooManyBits(u32),
    #[error("value {value} does not fit in {bits} bits")]
    ValueOutOfRange { value: u64, bits: u32 },
    #[error("block value {value} does not fit in {l} bits")]
    BlockOutOfRange { value: u32, l: u32 },
    #[error("block index {index} out of range for {m} blocks")]
    BlockIndex { index: u32, m: u32 },
    #[error("scaled difference {value} is not a valid difference for block {block}")]
    MalformedDiff { block: u32, value: i64 },
    #[error("no difference supplied for block {0}")]
    MissingBlock(u32),
    #[error("block {0} supplied more than once")]
    DuplicateBlock(u32),
}

/// Block width `l` and block count `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawBlockParams")]
pub struct BlockParams {
    l: u32,
    m: u32,
}

#[derive(Deserialize)]
struct RawBlockParams {
    l: u32,
    m: u32,
}

impl TryFrom<RawBlockParams> for BlockParams {
    type Error = CodecError;

    fn try_from(raw: RawBlockParams) -> Result<Self, Self::Error> {
        BlockParams::new(raw.l, raw.m)
    }
}

impl BlockParams {
    pub fn new(l: u32, m: u32) -> Result<Self, CodecError> {
        if !(1..=MAX_BLOCK_BITS).contains(&l) {
            return Err(CodecError::BlockWidth(l));
        }
        if m == 0 {
            return Err(CodecError::ZeroBlocks);
        }
        let total = l.saturating_mul(m);
        if total > MAX_TOTAL_BITS {
            return Err(CodecError::TooManyBits(total));
        }
        Ok(BlockParams { l, m })
    }

    /// Every `(l, m)` pair accepted by [`BlockParams::new`].
    pub fn all_supported() -> impl Iterator<Item = BlockParams> {
        (1..=MAX_BLOCK_BITS)
            .flat_map(|l| (1..=MAX_TOTAL_BITS / l).map(move |m| BlockParams { l, m }))
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn total_bits(&self) -> u32 {
        self.l * self.m
    }

    /// Number of values a single block can take, `2^l`.
    pub fn block_radix(&self) -> u32 {
        1 << self.l
    }

    pub fn max_block(&self) -> u32 {
        self.block_radix() - 1
    }

    /// Exclusive upper bound on coordinates, `2^(m*l)`.
    pub fn coordinate_limit(&self) -> u64 {
        1u64 << self.total_bits()
    }

    /// Positional weight of block `j`, `2^(j*l)`.
    pub fn weight(&self, j: u32) -> i64 {
        1i64 << (j * self.l)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockVector {
    params: BlockParams,
    blocks: Vec<u32>,
}

impl BlockVector {
    pub fn from_blocks(params: BlockParams, blocks: Vec<u32>) -> Result<Self, CodecError> {
        if blocks.len() != params.m as usize {
            return Err(CodecError::BlockIndex {
                index: blocks.len() as u32,
                m: params.m,
            });
        }
        if let Some(&value) = blocks.iter().find(|&&b| b > params.max_block()) {
            return Err(CodecError::BlockOutOfRange { value, l: params.l });
        }
        Ok(BlockVector { params, blocks })
    }

    pub fn params(&self) -> BlockParams {
        self.params
    }

    pub fn blocks(&self) -> &[u32] {
        &self.blocks
    }
}

pub fn decompose(x: u64, params: BlockParams) -> Result<BlockVector, CodecError> {
    if x >= params.coordinate_limit() {
        return Err(CodecError::ValueOutOfRange {
            value: x,
            bits: params.total_bits(),
        });
    }
    let mask = u64::from(params.max_block());
    let blocks = (0..params.m)
        .map(|j| ((x >> (j * params.l)) & mask) as u32)
        .collect();
    Ok(BlockVector { params, blocks })
}

pub fn recompose(b: &BlockVector) -> u64 {
    b.blocks
        .iter()
        .enumerate()
        .map(|(j, &v)| u64::from(v) << (j as u32 * b.params.l))
        .sum()
}

/// One disclosed per-block difference, `(driver - rider) * 2^(j*l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaledDiff {
    block: u32,
    value: i64,
}

impl ScaledDiff {
    /// Validates that `value` is a multiple of `2^(j*l)` whose quotient lies in
    /// `[-(2^l - 1), 2^l - 1]`.
    pub fn new(block: u32, value: i64, params: BlockParams) -> Result<Self, CodecError> {
        if block >= params.m {
            return Err(CodecError::BlockIndex {
                index: block,
                m: params.m,
            });
        }
        let weight = params.weight(block);
        let max = i64::from(params.max_block());
        if value % weight != 0 || (value / weight).abs() > max {
            return Err(CodecError::MalformedDiff { block, value });
        }
        Ok(ScaledDiff { block, value })
    }

    pub fn block(&self) -> u32 {
        self.block
    }

    pub fn value(&self) -> i64 {
        self.value
    }

    /// The block-level difference `driver_block - rider_block`.
    pub fn unscaled(&self, params: BlockParams) -> i32 {
        (self.value / params.weight(self.block)) as i32
    }
}

pub fn signed_scaled_diff(
    driver_block: u32,
    rider_block: u32,
    j: u32,
    params: BlockParams,
) -> Result<ScaledDiff, CodecError> {
    for value in [driver_block, rider_block] {
        if value > params.max_block() {
            return Err(CodecError::BlockOutOfRange { value, l: params.l });
        }
    }
    if j >= params.m {
        return Err(CodecError::BlockIndex {
            index: j,
            m: params.m,
        });
    }
    let value = (i64::from(driver_block) - i64::from(rider_block)) * params.weight(j);
    Ok(ScaledDiff { block: j, value })
}

/// Sums one difference per block index, giving the signed coordinate
/// difference `driver - rider`.
pub fn sum_partial_diffs(diffs: &[ScaledDiff], params: BlockParams) -> Result<i64, CodecError> {
    let mut seen = vec![false; params.m as usize];
    let mut total = 0i64;
    for d in diffs {
        let slot = seen
            .get_mut(d.block as usize)
            .ok_or(CodecError::BlockIndex {
                index: d.block,
                m: params.m,
            })?;
        if *slot {
            return Err(CodecError::DuplicateBlock(d.block));
        }
        *slot = true;
        total += d.value;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(CodecError::MissingBlock(missing as u32));
    }
    Ok(total)
}

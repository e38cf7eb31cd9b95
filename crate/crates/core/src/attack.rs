//! Passive reconstruction of rider and driver encodings from match transcripts.
//!
//! For one position `(i, j)` every responding driver `k` discloses
//! `d_k = v*_k - v`, where `v` is the rider's block. The rider block must
//! satisfy `0 <= v + d_k <= 2^l - 1` for every `k`, so the consistent values
//! form the interval `[max(0, -min d), (2^l - 1) - max(0, max d)]`. Once the
//! drivers' blocks include both `0` and `2^l - 1` (in particular, once they
//! cover every value) the interval is a single point, and every driver block
//! follows as `v + d_k`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block_codec::{BlockParams, MAX_BLOCK_BITS};
use crate::protocol_sim::{DriverId, DriverLeakage, MatchTranscript};
use crate::road_network::{
    Embedder, EmbeddingError, EncodingParams, NodeId, ReferenceSets, RneVector, RoadGraph,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("difference set is not a contiguous run of {expected} integers around zero")]
    MalformedDifferenceSet { expected: usize },
    #[error("block width l={0} outside [1, {MAX_BLOCK_BITS}]")]
    BlockWidth(u32),
    #[error("transcript parameters {found} do not match attack parameters {expected}")]
    ConfigMismatch {
        expected: EncodingParams,
        found: EncodingParams,
    },
    #[error("driver {driver}: difference {diff} at coordinate {coordinate}, block {block} leaves no consistent rider block")]
    InconsistentObservation {
        driver: DriverId,
        coordinate: usize,
        block: u32,
        diff: i32,
    },
    #[error("driver {driver} supplied {found} block differences, expected {expected}")]
    LeakageShape {
        driver: DriverId,
        expected: usize,
        found: usize,
    },
    #[error("state already holds a query; accumulating another requires asserting the same rider")]
    CrossQueryNotAsserted,
}

/// Recovers `x` from the full multiset `{z - x : 0 <= z < 2^l}`.
pub fn lemma1_recover(diffs: &[i64], l: u32) -> Result<u32, AttackError> {
    if !(1..=MAX_BLOCK_BITS).contains(&l) {
        return Err(AttackError::BlockWidth(l));
    }
    let radix = 1usize << l;
    let malformed = AttackError::MalformedDifferenceSet { expected: radix };
    if diffs.len() != radix {
        return Err(malformed);
    }
    let mut sorted = diffs.to_vec();
    sorted.sort_unstable();
    let min = sorted[0];
    if sorted.iter().enumerate().any(|(k, &d)| d != min + k as i64) {
        return Err(malformed);
    }
    let from_min = -min;
    let from_max = (radix as i64 - 1) - sorted[radix - 1];
    debug_assert_eq!(from_min, from_max);
    if !(0..radix as i64).contains(&from_min) {
        return Err(malformed);
    }
    Ok(from_min as u32)
}

/// Rider-block values consistent with every difference seen at one position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCandidateSet {
    max_block: u32,
    lo: u32,
    hi: u32,
    observed: BTreeSet<i32>,
}

impl BlockCandidateSet {
    pub fn new(params: BlockParams) -> Self {
        BlockCandidateSet {
            max_block: params.max_block(),
            lo: 0,
            hi: params.max_block(),
            observed: BTreeSet::new(),
        }
    }

    /// The interval after also observing `diff`, or `None` if it would be empty.
    pub fn narrowed(&self, diff: i32) -> Option<(u32, u32)> {
        let max = self.max_block as i64;
        let d = diff as i64;
        let lo = (self.lo as i64).max(-d);
        let hi = (self.hi as i64).min(max - d);
        (lo <= hi).then_some((lo as u32, hi as u32))
    }

    /// Returns `false` (leaving the set unchanged) when `diff` is inconsistent.
    pub fn observe(&mut self, diff: i32) -> bool {
        match self.narrowed(diff) {
            Some((lo, hi)) => {
                self.lo = lo;
                self.hi = hi;
                self.observed.insert(diff);
                true
            }
            None => false,
        }
    }

    pub fn lo(&self) -> u32 {
        self.lo
    }

    pub fn hi(&self) -> u32 {
        self.hi
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn contains(&self, x: u32) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    pub fn is_singleton(&self) -> bool {
        self.lo == self.hi
    }

    pub fn value(&self) -> Option<u32> {
        self.is_singleton().then_some(self.lo)
    }

    pub fn candidates(&self) -> impl Iterator<Item = u32> {
        self.lo..=self.hi
    }

    /// Distinct unscaled differences seen so far.
    pub fn observed_diffs(&self) -> &BTreeSet<i32> {
        &self.observed
    }
}

/// The provider's accumulated knowledge for one rider.
#[derive(Debug, Clone)]
pub struct AttackState {
    params: EncodingParams,
    // blocks[i * m + j]
    blocks: Vec<BlockCandidateSet>,
    // unscaled diffs per driver, same layout as `blocks`
    drivers: BTreeMap<DriverId, Vec<i32>>,
    drivers_consumed: usize,
    queries: usize,
    same_rider: bool,
}

impl AttackState {
    pub fn new(params: EncodingParams) -> Self {
        AttackState {
            params,
            blocks: vec![BlockCandidateSet::new(params.blocks); params.positions()],
            drivers: BTreeMap::new(),
            drivers_consumed: 0,
            queries: 0,
            same_rider: false,
        }
    }

    /// Allows transcripts of several queries to be folded into this state.
    /// The caller asserts they all come from the same rider at the same
    /// location. A driver id seen again replaces its earlier differences.
    pub fn assume_same_rider(mut self) -> Self {
        self.same_rider = true;
        self
    }

    pub fn params(&self) -> EncodingParams {
        self.params
    }

    pub fn drivers_consumed(&self) -> usize {
        self.drivers_consumed
    }

    pub fn candidates(&self, i: usize, j: u32) -> &BlockCandidateSet {
        &self.blocks[i * self.params.m() as usize + j as usize]
    }

    pub fn is_complete(&self) -> bool {
        self.blocks.iter().all(BlockCandidateSet::is_singleton)
    }

    /// Folds in one query's transcript. On error the state is unchanged.
    pub fn observe(&mut self, transcript: &MatchTranscript) -> Result<(), AttackError> {
        if transcript.params != self.params {
            return Err(AttackError::ConfigMismatch {
                expected: self.params,
                found: transcript.params,
            });
        }
        if self.queries > 0 && !self.same_rider {
            return Err(AttackError::CrossQueryNotAsserted);
        }
        let mut next = self.clone();
        for leak in &transcript.per_driver {
            next.observe_driver(leak)?;
        }
        next.queries += 1;
        *self = next;
        Ok(())
    }

    /// Folds in a single driver's differences. On error the state is unchanged.
    pub fn observe_driver(&mut self, leak: &DriverLeakage) -> Result<(), AttackError> {
        if leak.diffs.len() != self.params.positions() {
            return Err(AttackError::LeakageShape {
                driver: leak.driver_id,
                expected: self.params.positions(),
                found: leak.diffs.len(),
            });
        }
        let m = self.params.m() as usize;
        let unscaled: Vec<i32> = leak
            .diffs
            .iter()
            .map(|d| d.unscaled(self.params.blocks))
            .collect();
        for (p, &d) in unscaled.iter().enumerate() {
            if self.blocks[p].narrowed(d).is_none() {
                return Err(AttackError::InconsistentObservation {
                    driver: leak.driver_id,
                    coordinate: p / m,
                    block: (p % m) as u32,
                    diff: d,
                });
            }
        }
        for (set, &d) in self.blocks.iter_mut().zip(&unscaled) {
            let ok = set.observe(d);
            debug_assert!(ok);
        }
        self.drivers.insert(leak.driver_id, unscaled);
        self.drivers_consumed += 1;
        Ok(())
    }

    pub fn recover(&self) -> RecoveredLocations {
        recover(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInterval {
    pub coordinate: usize,
    pub block: u32,
    #[serde(rename = "candidates_lo")]
    pub lo: u32,
    #[serde(rename = "candidates_hi")]
    pub hi: u32,
}

/// A coordinate either pinned down exactly or bounded by the smallest and
/// largest values its block intervals allow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateEstimate {
    Exact(u64),
    Range { lo: u64, hi: u64 },
}

impl CoordinateEstimate {
    pub fn contains(&self, x: u64) -> bool {
        match *self {
            CoordinateEstimate::Exact(v) => v == x,
            CoordinateEstimate::Range { lo, hi } => (lo..=hi).contains(&x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredLocations {
    pub params: EncodingParams,
    pub per_block: Vec<BlockInterval>,
    pub rider_estimate: Vec<CoordinateEstimate>,
    pub driver_estimates: BTreeMap<DriverId, Vec<CoordinateEstimate>>,
    /// Set only when every position is resolved.
    pub rider: Option<RneVector>,
    /// Populated only when every position is resolved.
    pub drivers: BTreeMap<DriverId, RneVector>,
    pub complete: bool,
    pub drivers_consumed: usize,
}

fn estimates(
    params: &EncodingParams,
    intervals: impl Iterator<Item = (u32, u32)>,
) -> Vec<CoordinateEstimate> {
    let m = params.m() as usize;
    let l = params.l();
    let intervals: Vec<_> = intervals.collect();
    intervals
        .chunks(m)
        .map(|chunk| {
            let (mut lo, mut hi) = (0u64, 0u64);
            for (j, &(a, b)) in chunk.iter().enumerate() {
                lo += u64::from(a) << (j as u32 * l);
                hi += u64::from(b) << (j as u32 * l);
            }
            if lo == hi {
                CoordinateEstimate::Exact(lo)
            } else {
                CoordinateEstimate::Range { lo, hi }
            }
        })
        .collect()
}

fn exact_vector(estimates: &[CoordinateEstimate]) -> Option<RneVector> {
    estimates
        .iter()
        .map(|e| match *e {
            CoordinateEstimate::Exact(v) => Some(v),
            CoordinateEstimate::Range { .. } => None,
        })
        .collect::<Option<Vec<_>>>()
        .map(RneVector::new)
}

/// Reads off everything the state determines. Partial knowledge is reported
/// as intervals.
pub fn recover(state: &AttackState) -> RecoveredLocations {
    let params = state.params;
    let m = params.m() as usize;
    let per_block: Vec<BlockInterval> = state
        .blocks
        .iter()
        .enumerate()
        .map(|(p, set)| BlockInterval {
            coordinate: p / m,
            block: (p % m) as u32,
            lo: set.lo(),
            hi: set.hi(),
        })
        .collect();
    let rider_estimate = estimates(&params, state.blocks.iter().map(|s| (s.lo(), s.hi())));
    let driver_estimates: BTreeMap<_, _> = state
        .drivers
        .iter()
        .map(|(&id, diffs)| {
            let shifted = state.blocks.iter().zip(diffs).map(|(s, &d)| {
                (
                    (s.lo() as i64 + d as i64) as u32,
                    (s.hi() as i64 + d as i64) as u32,
                )
            });
            (id, estimates(&params, shifted))
        })
        .collect();
    let complete = state.is_complete();
    let rider = exact_vector(&rider_estimate).filter(|_| complete);
    let drivers = if complete {
        driver_estimates
            .iter()
            .map(|(&id, e)| (id, exact_vector(e).expect("complete state")))
            .collect()
    } else {
        BTreeMap::new()
    };
    RecoveredLocations {
        params,
        per_block,
        rider_estimate,
        driver_estimates,
        rider,
        drivers,
        complete,
        drivers_consumed: state.drivers_consumed,
    }
}

/// All nodes whose embedding equals `vec`, by exhaustive search.
pub fn invert_to_nodes(
    graph: &RoadGraph,
    refs: &ReferenceSets,
    vec: &RneVector,
) -> Result<Vec<NodeId>, EmbeddingError> {
    Ok(invert_with(&Embedder::new(graph, refs)?, vec))
}

pub fn invert_with(embedder: &Embedder, vec: &RneVector) -> Vec<NodeId> {
    (0..embedder.node_count())
        .filter(|&u| embedder.embed(u).is_ok_and(|e| &e == vec))
        .collect()
}

//! Leakage-level simulation of one ride-request round.
//!
//! The rider publishes, for every (coordinate, block), `2^l` guess tokens in a
//! private random order; token `z` carries `(z - v_j) * 2^(j*l)` sealed under a
//! key shared by riders and drivers. Each driver publishes one commitment per
//! block. The service provider pairs a commitment with the single token whose
//! guess equals the committed block and learns that token's payload in the
//! clear. Those per-block differences are all the provider needs to assemble
//! max-norm distances, and they are also everything the attack consumes.
//!
//! The pairing-based encryption of the real protocol is replaced by keyed
//! 64-bit tags. Only the equality pattern and the disclosed differences matter
//! here.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block_codec::{
    decompose, signed_scaled_diff, sum_partial_diffs, CodecError, ScaledDiff,
};
use crate::road_network::{EmbeddingError, EncodingParams, RneVector};

pub type DriverId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("parameter mismatch: expected {expected}, found {found}")]
    ConfigMismatch {
        expected: EncodingParams,
        found: EncodingParams,
    },
    #[error("commitment of driver {driver} was issued for a different request")]
    NonceMismatch { driver: DriverId },
    #[error("no guess token matches driver {driver} at coordinate {coordinate}, block {block}")]
    NoMatch {
        driver: DriverId,
        coordinate: usize,
        block: u32,
    },
    #[error(
        "{count} guess tokens match driver {driver} at coordinate {coordinate}, block {block}"
    )]
    AmbiguousMatch {
        driver: DriverId,
        coordinate: usize,
        block: u32,
        count: usize,
    },
    #[error("position ({coordinate}, {block}) is out of range")]
    Position { coordinate: usize, block: u32 },
    #[error("driver {driver} has {found} block differences, expected {expected}")]
    LeakageShape {
        driver: DriverId,
        expected: usize,
        found: usize,
    },
    #[error("no driver responded")]
    EmptyResponseSet,
    #[error("driver id {0} appears more than once")]
    DuplicateDriver(DriverId),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn keyed_tag(key: u64, nonce: u64, coordinate: usize, block: u32, value: u32) -> u64 {
    [nonce, coordinate as u64, u64::from(block), u64::from(value)]
        .into_iter()
        .fold(mix(key ^ GOLDEN), |h, x| mix(h ^ x.wrapping_add(GOLDEN)))
}

/// Keys shared by all riders and drivers and withheld from the provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharedKeys {
    match_key: u64,
    seal_key: u64,
}

impl SharedKeys {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        SharedKeys {
            match_key: rng.gen(),
            seal_key: rng.gen(),
        }
    }

    fn match_tag(&self, nonce: u64, i: usize, j: u32, value: u32) -> u64 {
        keyed_tag(self.match_key, nonce, i, j, value)
    }

    fn pad(&self, nonce: u64, i: usize, j: u32, value: u32) -> u64 {
        keyed_tag(self.seal_key, nonce, i, j, value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GuessToken {
    match_tag: u64,
    sealed: u64,
}

#[derive(Debug, Clone)]
pub struct RideRequest {
    params: EncodingParams,
    nonce: u64,
    // tokens[i * m + j] holds the 2^l permuted tokens of position (i, j)
    tokens: Vec<Vec<GuessToken>>,
}

impl RideRequest {
    pub fn params(&self) -> EncodingParams {
        self.params
    }

    pub fn nonce(&self) -> u64 {
        self.nonce
    }

    pub fn tokens(&self, i: usize, j: u32) -> Option<&[GuessToken]> {
        self.position(i, j).map(|p| self.tokens[p].as_slice())
    }

    fn position(&self, i: usize, j: u32) -> Option<usize> {
        (i < self.params.eta && j < self.params.m())
            .then(|| i * self.params.m() as usize + j as usize)
    }

    /// Reorders the token list at one position. The provider's output must
    /// not depend on this order.
    pub fn shuffle_position<R: Rng + ?Sized>(&mut self, i: usize, j: u32, rng: &mut R) {
        if let Some(p) = self.position(i, j) {
            self.tokens[p].shuffle(rng);
        }
    }
}

/// Rider-side state: which guess sits in which token slot.
#[derive(Debug, Clone)]
pub struct RiderSession {
    params: EncodingParams,
    nonce: u64,
    // permutations[i * m + j][slot] = z
    permutations: Vec<Vec<u32>>,
}

impl RiderSession {
    pub fn permutation(&self, i: usize, j: u32) -> &[u32] {
        &self.permutations[i * self.params.m() as usize + j as usize]
    }

    /// Unseals every token at `(i, j)` in slot order, using the guess recorded
    /// for each slot.
    pub fn open_tokens(
        &self,
        request: &RideRequest,
        keys: &SharedKeys,
        i: usize,
        j: u32,
    ) -> Vec<i64> {
        let tokens = request.tokens(i, j).expect("position in range");
        tokens
            .iter()
            .zip(self.permutation(i, j))
            .map(|(t, &z)| (t.sealed ^ keys.pad(self.nonce, i, j, z)) as i64)
            .collect()
    }
}

pub fn rider_make_request<R: Rng + ?Sized>(
    rider_vec: &RneVector,
    params: &EncodingParams,
    keys: &SharedKeys,
    rng: &mut R,
) -> Result<(RideRequest, RiderSession), ProtocolError> {
    rider_vec.check_fits(params)?;
    let blocks = params.blocks;
    let nonce: u64 = rng.gen();
    let mut tokens = Vec::with_capacity(params.positions());
    let mut permutations = Vec::with_capacity(params.positions());
    for (i, &coord) in rider_vec.coords.iter().enumerate() {
        let decomposed = decompose(coord, blocks)?;
        for (j, &v) in decomposed.blocks().iter().enumerate() {
            let j = j as u32;
            let mut order: Vec<u32> = (0..blocks.block_radix()).collect();
            order.shuffle(rng);
            let slot_tokens = order
                .iter()
                .map(|&z| {
                    let diff = signed_scaled_diff(z, v, j, blocks)?;
                    Ok(GuessToken {
                        match_tag: keys.match_tag(nonce, i, j, z),
                        sealed: (diff.value() as u64) ^ keys.pad(nonce, i, j, z),
                    })
                })
                .collect::<Result<Vec<_>, CodecError>>()?;
            tokens.push(slot_tokens);
            permutations.push(order);
        }
    }
    Ok((
        RideRequest {
            params: *params,
            nonce,
            tokens,
        },
        RiderSession {
            params: *params,
            nonce,
            permutations,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockCommitment {
    match_tag: u64,
    unseal: u64,
}

#[derive(Debug, Clone)]
pub struct DriverResponse {
    driver_id: DriverId,
    params: EncodingParams,
    nonce: u64,
    // commitments[i * m + j]
    commitments: Vec<BlockCommitment>,
}

impl DriverResponse {
    pub fn driver_id(&self) -> DriverId {
        self.driver_id
    }

    pub fn params(&self) -> EncodingParams {
        self.params
    }

    pub fn commitment(&self, i: usize, j: u32) -> Option<&BlockCommitment> {
        if i < self.params.eta && j < self.params.m() {
            self.commitments
                .get(i * self.params.m() as usize + j as usize)
        } else {
            None
        }
    }

    /// Key-holder view: the block value committed at `(i, j)`.
    pub fn open(&self, keys: &SharedKeys, i: usize, j: u32) -> Option<u32> {
        let c = self.commitment(i, j)?;
        (0..self.params.blocks.block_radix())
            .find(|&v| keys.match_tag(self.nonce, i, j, v) == c.match_tag)
    }
}

/// Builds a driver's per-block commitments for the request identified by
/// `nonce`.
pub fn driver_make_response(
    driver_id: DriverId,
    driver_vec: &RneVector,
    params: &EncodingParams,
    keys: &SharedKeys,
    nonce: u64,
) -> Result<DriverResponse, ProtocolError> {
    driver_vec.check_fits(params)?;
    let mut commitments = Vec::with_capacity(params.positions());
    for (i, &coord) in driver_vec.coords.iter().enumerate() {
        for (j, &v) in decompose(coord, params.blocks)?.blocks().iter().enumerate() {
            let j = j as u32;
            commitments.push(BlockCommitment {
                match_tag: keys.match_tag(nonce, i, j, v),
                unseal: keys.pad(nonce, i, j, v),
            });
        }
    }
    Ok(DriverResponse {
        driver_id,
        params: *params,
        nonce,
        commitments,
    })
}

fn check_compatible(request: &RideRequest, response: &DriverResponse) -> Result<(), ProtocolError> {
    if request.params != response.params {
        return Err(ProtocolError::ConfigMismatch {
            expected: request.params,
            found: response.params,
        });
    }
    if request.nonce != response.nonce {
        return Err(ProtocolError::NonceMismatch {
            driver: response.driver_id,
        });
    }
    Ok(())
}

/// The provider's equality check at one position: finds the unique token
/// whose tag equals the driver's commitment and unseals its difference.
pub fn sp_resolve_block_diff(
    request: &RideRequest,
    response: &DriverResponse,
    i: usize,
    j: u32,
) -> Result<ScaledDiff, ProtocolError> {
    check_compatible(request, response)?;
    resolve_unchecked(request, response, i, j)
}

fn resolve_unchecked(
    request: &RideRequest,
    response: &DriverResponse,
    i: usize,
    j: u32,
) -> Result<ScaledDiff, ProtocolError> {
    let position = ProtocolError::Position {
        coordinate: i,
        block: j,
    };
    let tokens = request.tokens(i, j).ok_or(position.clone())?;
    let commitment = response.commitment(i, j).ok_or(position)?;
    let mut matches = tokens
        .iter()
        .filter(|t| t.match_tag == commitment.match_tag);
    let token = matches.next().ok_or(ProtocolError::NoMatch {
        driver: response.driver_id,
        coordinate: i,
        block: j,
    })?;
    let extra = matches.count();
    if extra > 0 {
        return Err(ProtocolError::AmbiguousMatch {
            driver: response.driver_id,
            coordinate: i,
            block: j,
            count: extra + 1,
        });
    }
    let value = (token.sealed ^ commitment.unseal) as i64;
    Ok(ScaledDiff::new(j, value, request.params.blocks)?)
}

/// Everything the provider learns about one driver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriverLeakage {
    pub driver_id: DriverId,
    /// One difference per position, ordered by coordinate then block.
    pub diffs: Vec<ScaledDiff>,
    /// Signed `driver - rider` difference per coordinate.
    pub coord_diffs: Vec<i64>,
    pub distance: u64,
}

impl DriverLeakage {
    /// Assembles coordinate differences and the distance from raw per-block
    /// differences, validating that every position is present exactly once.
    pub fn assemble(
        driver_id: DriverId,
        diffs: Vec<ScaledDiff>,
        params: &EncodingParams,
    ) -> Result<Self, ProtocolError> {
        let m = params.m() as usize;
        if diffs.len() != params.positions() {
            return Err(ProtocolError::LeakageShape {
                driver: driver_id,
                expected: params.positions(),
                found: diffs.len(),
            });
        }
        let coord_diffs = diffs
            .chunks(m)
            .map(|chunk| sum_partial_diffs(chunk, params.blocks))
            .collect::<Result<Vec<_>, _>>()?;
        let distance = coord_diffs
            .iter()
            .map(|d| d.unsigned_abs())
            .max()
            .unwrap_or(0);
        Ok(DriverLeakage {
            driver_id,
            diffs,
            coord_diffs,
            distance,
        })
    }

    pub fn diff(&self, i: usize, j: u32, m: u32) -> ScaledDiff {
        self.diffs[i * m as usize + j as usize]
    }
}

/// The provider's complete view of one ride request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchTranscript {
    pub params: EncodingParams,
    pub per_driver: Vec<DriverLeakage>,
    pub winner: DriverId,
}

impl MatchTranscript {
    /// Rebuilds a transcript from disclosed differences, recomputing distances
    /// and the winner.
    pub fn from_leakage(
        params: EncodingParams,
        per_driver: Vec<DriverLeakage>,
    ) -> Result<Self, ProtocolError> {
        let winner = select_winner(per_driver.iter().map(|d| (d.driver_id, d.distance)))?;
        Ok(MatchTranscript {
            params,
            per_driver,
            winner,
        })
    }

    pub fn result(&self) -> MatchResult {
        MatchResult {
            winner: self.winner,
            distances: self
                .per_driver
                .iter()
                .map(|d| (d.driver_id, d.distance))
                .collect(),
        }
    }

    pub fn diff_count(&self) -> usize {
        self.per_driver.iter().map(|d| d.diffs.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub winner: DriverId,
    pub distances: BTreeMap<DriverId, u64>,
}

/// Minimum distance, ties to the smallest driver id. Rejects repeated ids.
fn select_winner<I>(distances: I) -> Result<DriverId, ProtocolError>
where
    I: IntoIterator<Item = (DriverId, u64)>,
{
    let mut seen = BTreeSet::new();
    let mut best: Option<(u64, DriverId)> = None;
    for (id, dist) in distances {
        if !seen.insert(id) {
            return Err(ProtocolError::DuplicateDriver(id));
        }
        if best.is_none_or(|b| (dist, id) < b) {
            best = Some((dist, id));
        }
    }
    best.map(|(_, id)| id)
        .ok_or(ProtocolError::EmptyResponseSet)
}

/// Runs the provider's side of matching: resolves every block of every driver,
/// assembles distances and selects the nearest driver.
pub fn sp_match(
    request: &RideRequest,
    responses: &[DriverResponse],
) -> Result<(MatchResult, MatchTranscript), ProtocolError> {
    if responses.is_empty() {
        return Err(ProtocolError::EmptyResponseSet);
    }
    let params = request.params;
    let per_driver = responses
        .iter()
        .map(|resp| {
            check_compatible(request, resp)?;
            let diffs = (0..params.eta)
                .flat_map(|i| (0..params.m()).map(move |j| (i, j)))
                .map(|(i, j)| resolve_unchecked(request, resp, i, j))
                .collect::<Result<Vec<_>, _>>()?;
            DriverLeakage::assemble(resp.driver_id, diffs, &params)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let transcript = MatchTranscript::from_leakage(params, per_driver)?;
    Ok((transcript.result(), transcript))
}

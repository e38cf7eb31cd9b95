//! Serializable transcript and recovery-report documents.
//!
//! Transcript document:
//!
//! ```json
//! {
//!   "config": {"eta": 8, "l": 2, "m": 5, "seed": 42, "query": 0, ...},
//!   "rider_hidden": [3, 1, ...],          // only with ground truth
//!   "drivers_hidden": {"0": [...], ...},  // only with ground truth
//!   "per_driver": [
//!     {"driver_id": 0, "diffs": [[coordinate, block, scaled_value], ...], "distance": 5}
//!   ],
//!   "winner": 0
//! }
//! ```
//!
//! Importing a document re-derives every distance and the winner from the
//! disclosed differences and rejects anything that does not add up.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{BlockInterval, CoordinateEstimate, RecoveredLocations};
use crate::block_codec::{CodecError, ScaledDiff};
use crate::experiment::{AttackOutcome, GroundTruth, QueryOutcome};
use crate::protocol_sim::{DriverId, DriverLeakage, MatchTranscript, ProtocolError};
use crate::road_network::{EncodingParams, RneVector};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImportError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("driver {driver}: position ({coordinate}, {block}) out of range")]
    Position {
        driver: DriverId,
        coordinate: usize,
        block: u32,
    },
    #[error("driver {driver}: position ({coordinate}, {block}) listed twice")]
    DuplicatePosition {
        driver: DriverId,
        coordinate: usize,
        block: u32,
    },
    #[error("driver {driver}: {source}")]
    Diff {
        driver: DriverId,
        #[source]
        source: CodecError,
    },
    #[error("driver {driver}: stated distance {stated} but differences give {derived}")]
    DistanceMismatch {
        driver: DriverId,
        stated: u64,
        derived: u64,
    },
    #[error("stated winner {stated} but distances select {derived}")]
    WinnerMismatch { stated: DriverId, derived: DriverId },
    #[error("ground truth has dimension {found}, expected {expected}")]
    TruthShape { expected: usize, found: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Run metadata carried alongside the encoding parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptConfig {
    pub eta: usize,
    pub l: u32,
    pub m: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rider_node: Option<usize>,
}

impl TranscriptConfig {
    pub fn bare(params: &EncodingParams) -> Self {
        TranscriptConfig {
            eta: params.eta,
            l: params.l(),
            m: params.m(),
            seed: None,
            query: None,
            graph: None,
            placement: None,
            rider_node: None,
        }
    }

    pub fn params(&self) -> Result<EncodingParams, ImportError> {
        EncodingParams::new(self.eta, self.l, self.m)
            .map_err(|e| ImportError::Params(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverDoc {
    pub driver_id: DriverId,
    /// `[coordinate, block, scaled_value]` triples.
    pub diffs: Vec<(usize, u32, i64)>,
    pub distance: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptDoc {
    pub config: TranscriptConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rider_hidden: Option<RneVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drivers_hidden: Option<BTreeMap<DriverId, RneVector>>,
    pub per_driver: Vec<DriverDoc>,
    pub winner: DriverId,
}

impl TranscriptDoc {
    pub fn from_transcript(transcript: &MatchTranscript, config: TranscriptConfig) -> Self {
        let m = transcript.params.m() as usize;
        let per_driver = transcript
            .per_driver
            .iter()
            .map(|leak| DriverDoc {
                driver_id: leak.driver_id,
                diffs: leak
                    .diffs
                    .iter()
                    .enumerate()
                    .map(|(p, d)| (p / m, d.block(), d.value()))
                    .collect(),
                distance: leak.distance,
            })
            .collect();
        TranscriptDoc {
            config,
            rider_hidden: None,
            drivers_hidden: None,
            per_driver,
            winner: transcript.winner,
        }
    }

    /// Document for a simulated query; ground truth is attached only when
    /// `reveal_truth` is set.
    pub fn from_outcome(
        outcome: &QueryOutcome,
        mut config: TranscriptConfig,
        reveal_truth: bool,
    ) -> Self {
        config.query = Some(outcome.query);
        if reveal_truth {
            config.rider_node = Some(outcome.rider_node);
        }
        let mut doc = TranscriptDoc::from_transcript(&outcome.transcript, config);
        if reveal_truth {
            doc.rider_hidden = Some(outcome.truth.rider.clone());
            doc.drivers_hidden = Some(outcome.truth.drivers.clone());
        }
        doc
    }

    /// Validates the document and rebuilds the provider's transcript.
    pub fn to_transcript(&self) -> Result<MatchTranscript, ImportError> {
        let params = self.config.params()?;
        let m = params.m() as usize;
        let mut per_driver = Vec::with_capacity(self.per_driver.len());
        for doc in &self.per_driver {
            let driver = doc.driver_id;
            let mut slots: Vec<Option<ScaledDiff>> = vec![None; params.positions()];
            for &(coordinate, block, value) in &doc.diffs {
                if coordinate >= params.eta || block >= params.m() {
                    return Err(ImportError::Position {
                        driver,
                        coordinate,
                        block,
                    });
                }
                let slot = &mut slots[coordinate * m + block as usize];
                if slot.is_some() {
                    return Err(ImportError::DuplicatePosition {
                        driver,
                        coordinate,
                        block,
                    });
                }
                *slot = Some(
                    ScaledDiff::new(block, value, params.blocks)
                        .map_err(|source| ImportError::Diff { driver, source })?,
                );
            }
            if let Some(p) = slots.iter().position(Option::is_none) {
                return Err(ImportError::Diff {
                    driver,
                    source: CodecError::MissingBlock((p % m) as u32),
                });
            }
            let leak =
                DriverLeakage::assemble(driver, slots.into_iter().flatten().collect(), &params)?;
            if leak.distance != doc.distance {
                return Err(ImportError::DistanceMismatch {
                    driver,
                    stated: doc.distance,
                    derived: leak.distance,
                });
            }
            per_driver.push(leak);
        }
        let transcript = MatchTranscript::from_leakage(params, per_driver)?;
        if transcript.winner != self.winner {
            return Err(ImportError::WinnerMismatch {
                stated: self.winner,
                derived: transcript.winner,
            });
        }
        Ok(transcript)
    }

    /// Ground truth, when the document carries it.
    pub fn truth(&self) -> Result<Option<GroundTruth>, ImportError> {
        let (Some(rider), Some(drivers)) = (&self.rider_hidden, &self.drivers_hidden) else {
            return Ok(None);
        };
        let eta = self.config.eta;
        for v in std::iter::once(rider).chain(drivers.values()) {
            if v.eta() != eta {
                return Err(ImportError::TruthShape {
                    expected: eta,
                    found: v.eta(),
                });
            }
        }
        Ok(Some(GroundTruth {
            rider: rider.clone(),
            drivers: drivers.clone(),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactMatch {
    pub rider: bool,
    pub drivers: BTreeMap<DriverId, bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<usize>,
    pub per_block: Vec<BlockInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rider_vec: Option<RneVector>,
    pub rider_estimate: Vec<CoordinateEstimate>,
    pub drivers: BTreeMap<DriverId, RneVector>,
    pub complete: bool,
    pub drivers_consumed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<ExactMatch>,
}

impl RecoveryReport {
    pub fn new(recovered: &RecoveredLocations, query: Option<usize>) -> Self {
        RecoveryReport {
            query,
            per_block: recovered.per_block.clone(),
            rider_vec: recovered.rider.clone(),
            rider_estimate: recovered.rider_estimate.clone(),
            drivers: recovered.drivers.clone(),
            complete: recovered.complete,
            drivers_consumed: recovered.drivers_consumed,
            exact_match: None,
        }
    }

    pub fn with_truth(outcome: &AttackOutcome, query: Option<usize>) -> Self {
        RecoveryReport {
            exact_match: Some(ExactMatch {
                rider: outcome.rider_exact,
                drivers: outcome.drivers_exact.clone(),
            }),
            ..RecoveryReport::new(&outcome.recovered, query)
        }
    }
}

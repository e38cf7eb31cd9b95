//! Seeded end-to-end ride-request runs with ground truth kept on the side.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackError, AttackState, RecoveredLocations};
use crate::protocol_sim::{
    driver_make_response, rider_make_request, sp_match, DriverId, MatchResult, MatchTranscript,
    ProtocolError, SharedKeys,
};
use crate::road_network::{
    build_reference_sets, Embedder, EmbeddingConfig, EmbeddingError, EncodingParams, NodeId,
    ReferenceSets, RneVector, RoadGraph,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("driver count must be at least 1")]
    NoDrivers,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

/// Independent ChaCha stream `stream` of the master `seed`.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How responding drivers' encodings are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverPlacement {
    /// Every coordinate drawn uniformly from `[0, 2^(m*l))`, so every block is
    /// i.i.d. uniform.
    UniformBlocks,
    /// Drivers sit on uniformly chosen graph nodes and carry their embedding.
    GraphNodes,
}

impl fmt::Display for DriverPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriverPlacement::UniformBlocks => "uniform-blocks",
            DriverPlacement::GraphNodes => "graph-nodes",
        })
    }
}

impl FromStr for DriverPlacement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform-blocks" => Ok(DriverPlacement::UniformBlocks),
            "graph-nodes" => Ok(DriverPlacement::GraphNodes),
            other => Err(format!("unknown placement {other:?}")),
        }
    }
}

/// Plaintext encodings behind a transcript. Never visible to the provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rider: RneVector,
    pub drivers: BTreeMap<DriverId, RneVector>,
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub query: usize,
    pub rider_node: NodeId,
    pub result: MatchResult,
    pub transcript: MatchTranscript,
    pub truth: GroundTruth,
}

/// A graph with its reference sets and precomputed embedding tables.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: RoadGraph,
    pub refs: ReferenceSets,
    pub embedder: Embedder,
    pub config: EmbeddingConfig,
}

impl Scenario {
    /// Validates the coordinate range against the graph and draws reference
    /// sets from stream 0 of the configured seed.
    pub fn new(graph: RoadGraph, config: EmbeddingConfig) -> Result<Self, EmbeddingError> {
        config.validate_for(&graph)?;
        let refs = build_reference_sets(&graph, &config, &mut derive_rng(config.seed, 0))?;
        let embedder = Embedder::new(&graph, &refs)?;
        Ok(Scenario {
            graph,
            refs,
            embedder,
            config,
        })
    }

    pub fn params(&self) -> EncodingParams {
        self.config.encoding
    }

    /// One ride request: rider on a random node, `driver_count` drivers placed
    /// per `placement`, fresh shared keys. Driver ids are `0..driver_count`.
    pub fn run_query<R: Rng + ?Sized>(
        &self,
        query: usize,
        driver_count: usize,
        placement: DriverPlacement,
        rng: &mut R,
    ) -> Result<QueryOutcome, ExperimentError> {
        if driver_count == 0 {
            return Err(ExperimentError::NoDrivers);
        }
        let params = self.params();
        let n = self.graph.node_count();
        let rider_node = rng.gen_range(0..n);
        let rider = self.embedder.embed_checked(rider_node, &params)?;
        let limit = params.blocks.coordinate_limit();
        let drivers: BTreeMap<DriverId, RneVector> = (0..driver_count as DriverId)
            .map(|k| {
                let v = match placement {
                    DriverPlacement::UniformBlocks => {
                        RneVector::new((0..params.eta).map(|_| rng.gen_range(0..limit)).collect())
                    }
                    DriverPlacement::GraphNodes => {
                        self.embedder.embed_checked(rng.gen_range(0..n), &params)?
                    }
                };
                Ok((k, v))
            })
            .collect::<Result<_, EmbeddingError>>()?;

        let keys = SharedKeys::generate(rng);
        let (request, _session) = rider_make_request(&rider, &params, &keys, rng)?;
        let responses = drivers
            .iter()
            .map(|(&k, v)| driver_make_response(k, v, &params, &keys, request.nonce()))
            .collect::<Result<Vec<_>, _>>()?;
        let (result, transcript) = sp_match(&request, &responses)?;
        Ok(QueryOutcome {
            query,
            rider_node,
            result,
            transcript,
            truth: GroundTruth { rider, drivers },
        })
    }

    /// Runs `queries` independent requests. Query `q` uses stream `q + 1` of
    /// the seed; results come back in query order.
    pub fn run_queries(
        &self,
        queries: usize,
        driver_count: usize,
        placement: DriverPlacement,
    ) -> Result<Vec<QueryOutcome>, ExperimentError> {
        (0..queries)
            .into_par_iter()
            .map(|q| {
                let mut rng = derive_rng(self.config.seed, q as u64 + 1);
                self.run_query(q, driver_count, placement, &mut rng)
            })
            .collect()
    }
}

/// Attack outcome for one query, compared against ground truth.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub recovered: RecoveredLocations,
    pub rider_exact: bool,
    pub drivers_exact: BTreeMap<DriverId, bool>,
}

impl AttackOutcome {
    pub fn all_exact(&self) -> bool {
        self.rider_exact && self.drivers_exact.values().all(|&b| b)
    }
}

/// Runs the attack on a single transcript and checks it against `truth`.
pub fn attack_with_truth(
    transcript: &MatchTranscript,
    truth: &GroundTruth,
) -> Result<AttackOutcome, AttackError> {
    let mut state = AttackState::new(transcript.params);
    state.observe(transcript)?;
    let recovered = state.recover();
    Ok(compare_with_truth(recovered, truth))
}

pub fn compare_with_truth(recovered: RecoveredLocations, truth: &GroundTruth) -> AttackOutcome {
    let rider_exact = recovered.rider.as_ref() == Some(&truth.rider);
    let drivers_exact = truth
        .drivers
        .iter()
        .map(|(id, v)| (*id, recovered.drivers.get(id) == Some(v)))
        .collect();
    AttackOutcome {
        recovered,
        rider_exact,
        drivers_exact,
    }
}

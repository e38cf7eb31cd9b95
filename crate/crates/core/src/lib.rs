//! Simulation of the leakage in a privacy-preserving ride-hailing matching
//! protocol, and the passive attack that turns that leakage back into the
//! rider's and every responding driver's location encoding.
//!
//! * [`road_network`]: road graphs, shortest paths and the max-norm embedding.
//! * [`block_codec`]: `l`-bit block decomposition and signed block differences.
//! * [`protocol_sim`]: rider tokens, driver commitments and the provider's matching.
//! * [`attack`]: candidate-interval narrowing and full reconstruction.
//! * [`coupon_analysis`]: driver counts needed for coverage, exact and simulated.
//! * [`experiment`] and [`export`]: seeded end-to-end runs and their JSON documents.

pub mod attack;
pub mod block_codec;
pub mod coupon_analysis;
pub mod experiment;
pub mod export;
pub mod protocol_sim;
pub mod road_network;

pub use attack::{
    invert_to_nodes, lemma1_recover, recover, AttackError, AttackState, BlockCandidateSet,
    CoordinateEstimate, RecoveredLocations,
};
pub use block_codec::{
    decompose, recompose, signed_scaled_diff, sum_partial_diffs, BlockParams, BlockVector,
    CodecError, ScaledDiff,
};
pub use coupon_analysis::{
    empirical_coverage_from_sim, expected_drivers_closed_form, monte_carlo_drivers_needed,
    CouponError, CouponExpectation, CouponStats,
};
pub use experiment::{
    derive_rng, DriverPlacement, ExperimentError, GroundTruth, QueryOutcome, Scenario,
};
pub use export::{ImportError, RecoveryReport, TranscriptConfig, TranscriptDoc};
pub use protocol_sim::{
    driver_make_response, rider_make_request, sp_match, sp_resolve_block_diff, DriverId,
    DriverLeakage, DriverResponse, MatchResult, MatchTranscript, ProtocolError, RideRequest,
    SharedKeys,
};
pub use road_network::{
    build_reference_sets, embed, rne_distance, Embedder, EmbeddingConfig, EmbeddingError,
    EncodingParams, GraphError, NodeId, ReferenceSets, RneVector, RoadGraph,
};

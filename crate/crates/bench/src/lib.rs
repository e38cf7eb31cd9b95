//! Shared fixtures for the criterion benchmarks.

use orhleak_core::{DriverPlacement, EmbeddingConfig, QueryOutcome, RoadGraph, Scenario};

/// Square grid scenario with `eta` reference sets.
pub fn grid_scenario(side: usize, eta: usize, l: u32, m: u32) -> Scenario {
    let graph = RoadGraph::grid(side, side).expect("nonempty grid");
    let cfg = EmbeddingConfig::new(eta, l, m, 7).expect("valid parameters");
    Scenario::new(graph, cfg).expect("range covers the grid")
}

pub fn uniform_query(scenario: &Scenario, drivers: usize) -> QueryOutcome {
    scenario
        .run_query(
            0,
            drivers,
            DriverPlacement::UniformBlocks,
            &mut orhleak_core::derive_rng(7, 1),
        )
        .expect("query runs")
}

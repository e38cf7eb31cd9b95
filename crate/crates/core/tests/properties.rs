use std::collections::VecDeque;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orhleak_core::attack::{invert_with, AttackState};
use orhleak_core::block_codec::decompose;
use orhleak_core::coupon_analysis::{
    empirical_coverage_from_sim, monte_carlo_drivers_needed, CouponError,
};
use orhleak_core::experiment::{derive_rng, DriverPlacement, GroundTruth, Scenario};
use orhleak_core::protocol_sim::{
    driver_make_response, rider_make_request, sp_match, DriverLeakage, MatchTranscript, SharedKeys,
};
use orhleak_core::road_network::{
    build_reference_sets, Embedder, EmbeddingConfig, EncodingParams, RneVector, RoadGraph,
};

fn random_graph(n: usize, extra: usize, seed: u64) -> RoadGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize, i64)> = (1..n)
        .map(|v| (rng.gen_range(0..v), v, rng.gen_range(0..12)))
        .collect();
    for _ in 0..extra {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v {
            edges.push((u, v, rng.gen_range(0..12)));
        }
    }
    RoadGraph::new(n, edges).unwrap()
}

/// Bellman-Ford style relaxation, independent of the heap-based search.
fn relax_oracle(g: &RoadGraph, s: usize) -> Vec<u64> {
    let mut dist = vec![u64::MAX; g.node_count()];
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for &(v, w) in g.neighbors(u) {
            if dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                queue.push_back(v);
            }
        }
    }
    dist
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn shortest_paths_form_a_metric(seed in any::<u64>(), n in 2usize..60, extra in 0usize..60) {
        let g = random_graph(n, extra, seed);
        let all: Vec<Vec<u64>> = (0..n).map(|u| g.distances_from(&[u]).unwrap()).collect();
        for u in 0..n {
            prop_assert_eq!(&all[u], &relax_oracle(&g, u));
            prop_assert_eq!(all[u][u], 0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..50 {
            let (a, b, c) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
            prop_assert_eq!(all[a][b], all[b][a]);
            prop_assert!(all[a][c] <= all[a][b] + all[b][c]);
        }
    }

    #[test]
    fn embedding_is_lipschitz_and_deterministic(seed in any::<u64>(), n in 2usize..80, eta in 1usize..6) {
        let g = random_graph(n, n / 2, seed);
        let cfg = EmbeddingConfig::new(eta, 4, 8, seed).unwrap();
        let refs = build_reference_sets(&g, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let emb = Embedder::new(&g, &refs).unwrap();
        let vecs = emb.embed_all();
        prop_assert_eq!(&vecs, &Embedder::new(&g, &refs).unwrap().embed_all());
        for u in 0..n {
            let du = g.distances_from(&[u]).unwrap();
            for v in 0..n {
                for i in 0..eta {
                    prop_assert!(vecs[u].coords[i].abs_diff(vecs[v].coords[i]) <= du[v]);
                }
            }
        }
    }

    #[test]
    fn attack_is_sound_monotone_and_exact(seed in any::<u64>(), l in 1u32..=5, m in 1u32..=4, eta in 1usize..4, k in 1usize..60) {
        let params = EncodingParams::new(eta, l, m).unwrap();
        let limit = params.blocks.coordinate_limit();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys = SharedKeys::generate(&mut rng);
        let rider = RneVector::new((0..eta).map(|_| rng.gen_range(0..limit)).collect());
        let drivers: Vec<RneVector> = (0..k)
            .map(|_| RneVector::new((0..eta).map(|_| rng.gen_range(0..limit)).collect()))
            .collect();
        let (req, _) = rider_make_request(&rider, &params, &keys, &mut rng).unwrap();
        let responses: Vec<_> = drivers
            .iter()
            .enumerate()
            .map(|(id, v)| driver_make_response(id as u32, v, &params, &keys, req.nonce()).unwrap())
            .collect();
        let (_, transcript) = sp_match(&req, &responses).unwrap();

        let rider_blocks: Vec<u32> = rider.coords.iter()
            .flat_map(|&c| decompose(c, params.blocks).unwrap().blocks().to_vec())
            .collect();
        let mut covered = vec![vec![false; params.blocks.block_radix() as usize]; params.positions()];
        let mut state = AttackState::new(params);
        let mut prev_len = vec![usize::MAX; params.positions()];
        for (leak, v) in transcript.per_driver.iter().zip(&drivers) {
            state.observe_driver(leak).unwrap();
            let driver_blocks: Vec<u32> = v.coords.iter()
                .flat_map(|&c| decompose(c, params.blocks).unwrap().blocks().to_vec())
                .collect();
            for p in 0..params.positions() {
                covered[p][driver_blocks[p] as usize] = true;
                let set = state.candidates(p / m as usize, (p % m as usize) as u32);
                prop_assert!(set.contains(rider_blocks[p]));
                prop_assert!(set.len() <= prev_len[p]);
                prev_len[p] = set.len();
                if covered[p].iter().all(|&c| c) {
                    prop_assert_eq!(set.value(), Some(rider_blocks[p]));
                }
            }
        }
        let rec = state.recover();
        for (e, &x) in rec.rider_estimate.iter().zip(&rider.coords) {
            prop_assert!(e.contains(x));
        }
        if rec.complete {
            prop_assert_eq!(rec.rider.as_ref(), Some(&rider));
            for (id, v) in drivers.iter().enumerate() {
                prop_assert_eq!(&rec.drivers[&(id as u32)], v);
            }
        }
    }
}

#[test]
fn singleton_never_later_than_full_coverage() {
    let cfg = EmbeddingConfig::new(8, 2, 5, 12).unwrap();
    let scenario = Scenario::new(RoadGraph::grid(10, 10).unwrap(), cfg).unwrap();
    for out in scenario
        .run_queries(20, 80, DriverPlacement::UniformBlocks)
        .unwrap()
    {
        let cov = empirical_coverage_from_sim(&out.transcript, Some(&out.truth)).unwrap();
        assert_eq!(cov.len(), 40);
        for c in cov {
            if let Some(full) = c.to_full_coverage {
                let single = c.to_singleton.expect("full coverage implies a singleton");
                assert!(single <= full, "{c:?}");
            }
        }
    }
}

#[test]
fn covering_drivers_resolve_at_radix() {
    // l=3, one coordinate, one block: drivers hold 0..8 in order
    let params = EncodingParams::new(1, 3, 1).unwrap();
    let rider = RneVector::new(vec![5]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let keys = SharedKeys::generate(&mut rng);
    let (req, _) = rider_make_request(&rider, &params, &keys, &mut rng).unwrap();
    // put the extremes last so neither route finishes early
    let order = [3u64, 1, 4, 6, 2, 5, 0, 7];
    let drivers: Vec<_> = order
        .iter()
        .enumerate()
        .map(|(k, &x)| (k as u32, RneVector::new(vec![x])))
        .collect();
    let responses: Vec<_> = drivers
        .iter()
        .map(|(k, v)| driver_make_response(*k, v, &params, &keys, req.nonce()).unwrap())
        .collect();
    let (_, transcript) = sp_match(&req, &responses).unwrap();
    let truth = GroundTruth {
        rider,
        drivers: drivers.into_iter().collect(),
    };
    let cov = empirical_coverage_from_sim(&transcript, Some(&truth)).unwrap();
    assert_eq!(cov[0].to_full_coverage, Some(8));
    assert_eq!(cov[0].to_singleton, Some(8));
    assert_eq!(
        empirical_coverage_from_sim(&transcript, None),
        Err(CouponError::IncompleteExperiment)
    );
}

#[test]
fn uniform_coverage_tracks_monte_carlo() {
    // mean drivers to full coverage over many positions vs. the coupon simulation
    let params = EncodingParams::new(4, 2, 4).unwrap();
    let limit = params.blocks.coordinate_limit();
    let mut counts = Vec::new();
    for q in 0..150u64 {
        let mut rng = derive_rng(55, q);
        let drivers: Vec<Vec<u64>> = (0..60)
            .map(|_| (0..4).map(|_| rng.gen_range(0..limit)).collect())
            .collect();
        let rider: Vec<u64> = (0..4).map(|_| rng.gen_range(0..limit)).collect();
        let leaks = drivers
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let diffs = (0..4)
                    .flat_map(|i| {
                        let a = decompose(rider[i], params.blocks).unwrap();
                        let b = decompose(d[i], params.blocks).unwrap();
                        (0..4u32)
                            .map(move |j| {
                                orhleak_core::block_codec::signed_scaled_diff(
                                    b.blocks()[j as usize],
                                    a.blocks()[j as usize],
                                    j,
                                    params.blocks,
                                )
                                .unwrap()
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect();
                DriverLeakage::assemble(k as u32, diffs, &params).unwrap()
            })
            .collect();
        let transcript = MatchTranscript::from_leakage(params, leaks).unwrap();
        let truth = GroundTruth {
            rider: RneVector::new(rider),
            drivers: drivers
                .into_iter()
                .enumerate()
                .map(|(k, d)| (k as u32, RneVector::new(d)))
                .collect(),
        };
        for c in empirical_coverage_from_sim(&transcript, Some(&truth)).unwrap() {
            counts.push(c.to_full_coverage.expect("60 draws cover 4 values") as f64);
        }
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let sd = (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mc = monte_carlo_drivers_needed(2, 200_000, 9).unwrap();
    let tolerance = 4.0 * (sd / n.sqrt() + mc.standard_error());
    assert!(
        (mean - mc.mc_mean).abs() < tolerance,
        "{mean} vs {}",
        mc.mc_mean
    );
}

#[test]
fn grid_preimage_sizes() {
    let g = RoadGraph::grid(10, 10).unwrap();
    let cfg = EmbeddingConfig::new(8, 2, 5, 8).unwrap();
    let refs = build_reference_sets(&g, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let emb = Embedder::new(&g, &refs).unwrap();
    let sizes: Vec<usize> = (0..100)
        .map(|u| {
            let nodes = invert_with(&emb, &emb.embed(u).unwrap());
            assert!(nodes.contains(&u));
            nodes.len()
        })
        .collect();
    let mean = sizes.iter().sum::<usize>() as f64 / 100.0;
    println!("mean preimage size on 10x10 grid, eta=8: {mean:.3}");
    assert!(mean >= 1.0);
}

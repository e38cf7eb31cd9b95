//! How many responding drivers it takes before every block value is seen.
//!
//! With drivers' blocks i.i.d. uniform over `N = 2^l` values this is the coupon
//! collector's problem, whose expectation is `N * H_N`.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::BlockCandidateSet;
use crate::block_codec::decompose;
use crate::experiment::{derive_rng, GroundTruth};
use crate::protocol_sim::MatchTranscript;
use crate::road_network::{EncodingParams, RneVector};

pub const MAX_COUPON_BITS: u32 = 16;

/// Percentiles reported by [`monte_carlo_drivers_needed`].
pub const REPORTED_PERCENTILES: [u32; 3] = [50, 90, 99];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CouponError {
    #[error("block width l={0} outside [1, {MAX_COUPON_BITS}]")]
    LOutOfRange(u32),
    #[error("at least one trial is required")]
    NoTrials,
    #[error("experiment was run without ground truth")]
    IncompleteExperiment,
    #[error("driver pool is empty")]
    EmptyPool,
}

/// Exact and floating-point coupon-collector expectation for `N = 2^l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouponExpectation {
    pub l: u32,
    pub exact: BigRational,
    pub value: f64,
    pub ceil: u64,
}

fn primes_up_to(n: u64) -> Vec<u64> {
    let n = n as usize;
    let mut sieve = vec![true; n + 1];
    let mut primes = Vec::new();
    for p in 2..=n {
        if sieve[p] {
            primes.push(p as u64);
            let mut q = p * p;
            while q <= n {
                sieve[q] = false;
                q += p;
            }
        }
    }
    primes
}

fn lcm_up_to(n: u64) -> BigUint {
    let mut acc = BigUint::one();
    for p in primes_up_to(n) {
        let mut pk = p;
        while pk * p <= n {
            pk *= p;
        }
        acc *= pk;
    }
    acc
}

/// `H_n` as an exact fraction.
pub fn harmonic_exact(n: u64) -> BigRational {
    if n == 0 {
        return BigRational::zero();
    }
    let denom = lcm_up_to(n);
    let numer: BigUint = (1..=n).map(|t| &denom / t).sum();
    BigRational::new(numer.into(), denom.into())
}

pub fn expected_drivers_closed_form(l: u32) -> Result<CouponExpectation, CouponError> {
    if !(1..=MAX_COUPON_BITS).contains(&l) {
        return Err(CouponError::LOutOfRange(l));
    }
    let n = 1u64 << l;
    let exact = harmonic_exact(n) * BigRational::from_integer(n.into());
    // summed smallest-first to limit rounding
    let value = n as f64 * (1..=n).rev().map(|t| 1.0 / t as f64).sum::<f64>();
    let ceil = exact
        .ceil()
        .to_integer()
        .to_u64()
        .expect("expectation fits in u64");
    Ok(CouponExpectation {
        l,
        exact,
        value,
        ceil,
    })
}

/// Uniform draws from `radix` values until every value has appeared.
pub fn draws_until_covered<R: Rng + ?Sized>(radix: u32, rng: &mut R) -> u64 {
    let mut seen = vec![0u64; (radix as usize).div_ceil(64)];
    let mut distinct = 0;
    let mut draws = 0;
    while distinct < radix {
        let v = rng.gen_range(0..radix) as usize;
        draws += 1;
        let (word, bit) = (v / 64, 1u64 << (v % 64));
        if seen[word] & bit == 0 {
            seen[word] |= bit;
            distinct += 1;
        }
    }
    draws
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouponStats {
    pub l: u32,
    pub trials: usize,
    pub expected_closed_form: f64,
    pub closed_form_ceil: u64,
    pub mc_mean: f64,
    /// Sample standard deviation; zero for a single trial.
    pub mc_stddev: f64,
    /// Nearest-rank percentiles keyed by percent.
    pub mc_quantiles: BTreeMap<u32, u64>,
    pub min: u64,
    pub max: u64,
}

impl CouponStats {
    pub fn standard_error(&self) -> f64 {
        self.mc_stddev / (self.trials as f64).sqrt()
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Default, Clone, Copy)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[u64], pct: u32) -> u64 {
    let n = sorted.len();
    let rank = ((pct as f64 / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Simulates `trials` coupon-collector runs over `2^l` values. Trial `t`
/// draws from its own stream of the master seed, so results do not depend on
/// how trials are scheduled across threads.
pub fn monte_carlo_drivers_needed(
    l: u32,
    trials: usize,
    seed: u64,
) -> Result<CouponStats, CouponError> {
    let expectation = expected_drivers_closed_form(l)?;
    if trials == 0 {
        return Err(CouponError::NoTrials);
    }
    let radix = 1u32 << l;
    let mut counts: Vec<u64> = (0..trials)
        .into_par_iter()
        .map(|t| draws_until_covered(radix, &mut derive_rng(seed, t as u64)))
        .collect();
    let mut stats = RunningStats::default();
    for &c in &counts {
        stats.push(c as f64);
    }
    counts.sort_unstable();
    Ok(CouponStats {
        l,
        trials,
        expected_closed_form: expectation.value,
        closed_form_ceil: expectation.ceil,
        mc_mean: stats.mean(),
        mc_stddev: stats.sample_variance().sqrt(),
        mc_quantiles: REPORTED_PERCENTILES
            .iter()
            .map(|&p| (p, percentile(&counts, p)))
            .collect(),
        min: counts[0],
        max: counts[trials - 1],
    })
}

/// Drivers consumed at one position, in transcript order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCoverage {
    pub coordinate: usize,
    pub block: u32,
    /// Drivers needed before the rider's candidate interval became a single value.
    pub to_singleton: Option<usize>,
    /// Drivers needed before their blocks covered every value.
    pub to_full_coverage: Option<usize>,
}

/// Per-position driver counts for one simulated query. Needs the ground truth
/// to measure coverage of the drivers' actual block values.
pub fn empirical_coverage_from_sim(
    transcript: &MatchTranscript,
    truth: Option<&GroundTruth>,
) -> Result<Vec<BlockCoverage>, CouponError> {
    let truth = truth.ok_or(CouponError::IncompleteExperiment)?;
    let params = transcript.params;
    let blocks = params.blocks;
    let m = params.m();
    let mut out = Vec::with_capacity(params.positions());
    for i in 0..params.eta {
        for j in 0..m {
            let mut set = BlockCandidateSet::new(blocks);
            let mut seen = vec![false; blocks.block_radix() as usize];
            let mut distinct = 0;
            let (mut to_singleton, mut to_full_coverage) = (None, None);
            for (k, leak) in transcript.per_driver.iter().enumerate() {
                let d = leak.diff(i, j, m).unscaled(blocks);
                set.observe(d);
                if to_singleton.is_none() && set.is_singleton() {
                    to_singleton = Some(k + 1);
                }
                let driver_vec = truth
                    .drivers
                    .get(&leak.driver_id)
                    .ok_or(CouponError::IncompleteExperiment)?;
                let b = decompose(driver_vec.coords[i], blocks)
                    .map_err(|_| CouponError::IncompleteExperiment)?
                    .blocks()[j as usize] as usize;
                if !seen[b] {
                    seen[b] = true;
                    distinct += 1;
                    if distinct == seen.len() {
                        to_full_coverage = Some(k + 1);
                    }
                }
                if to_singleton.is_some() && to_full_coverage.is_some() {
                    break;
                }
            }
            out.push(BlockCoverage {
                coordinate: i,
                block: j,
                to_singleton,
                to_full_coverage,
            });
        }
    }
    Ok(out)
}

/// Coverage behaviour at one position when drivers sit on graph nodes
/// rather than carrying uniform blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionCoverage {
    pub coordinate: usize,
    pub block: u32,
    /// Distinct block values present anywhere in the pool.
    pub distinct_values: usize,
    /// Fraction of trials in which the rider block was pinned down.
    pub singleton_rate: f64,
    /// Mean drivers to a single candidate, over the trials that got there.
    pub mean_drivers_to_singleton: Option<f64>,
}

/// Draws a rider and up to `max_drivers` drivers uniformly (with replacement)
/// from `pool`, typically the embeddings of every graph node, and records how
/// quickly each position's candidate interval collapses.
pub fn graph_placed_coverage(
    pool: &[RneVector],
    params: &EncodingParams,
    max_drivers: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<PositionCoverage>, CouponError> {
    if pool.is_empty() {
        return Err(CouponError::EmptyPool);
    }
    if trials == 0 {
        return Err(CouponError::NoTrials);
    }
    let blocks = params.blocks;
    let m = params.m() as usize;
    let decomposed: Vec<Vec<u32>> = pool
        .iter()
        .map(|v| {
            v.coords
                .iter()
                .flat_map(|&c| {
                    decompose(c, blocks)
                        .expect("pool fits the block layout")
                        .blocks()
                        .to_vec()
                })
                .collect()
        })
        .collect();

    let per_trial: Vec<Vec<Option<usize>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derive_rng(seed, t as u64);
            let rider = &decomposed[rng.gen_range(0..pool.len())];
            let mut sets = vec![BlockCandidateSet::new(blocks); params.positions()];
            let mut first = vec![None; params.positions()];
            for k in 0..max_drivers {
                let driver = &decomposed[rng.gen_range(0..pool.len())];
                for p in 0..params.positions() {
                    sets[p].observe(driver[p] as i32 - rider[p] as i32);
                    if first[p].is_none() && sets[p].is_singleton() {
                        first[p] = Some(k + 1);
                    }
                }
            }
            first
        })
        .collect();

    Ok((0..params.positions())
        .map(|p| {
            let mut present = vec![false; blocks.block_radix() as usize];
            for d in &decomposed {
                present[d[p] as usize] = true;
            }
            let mut stats = RunningStats::default();
            for trial in &per_trial {
                if let Some(k) = trial[p] {
                    stats.push(k as f64);
                }
            }
            PositionCoverage {
                coordinate: p / m,
                block: (p % m) as u32,
                distinct_values: present.iter().filter(|&&x| x).count(),
                singleton_rate: stats.count() as f64 / trials as f64,
                mean_drivers_to_singleton: (stats.count() > 0).then(|| stats.mean()),
            }
        })
        .collect())
}

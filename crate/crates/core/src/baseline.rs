//! Random testing baseline: sample valid close pairs and look for a bias
//! instance.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BiasInstance, FeatureDomain, Threshold};
use crate::verify::VerificationTask;

pub const DEFAULT_BUDGET: usize = 50_000;
const SHARD_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Two independent uniform points, kept only when close.
    UniformPairs,
    /// One uniform point; the partner resamples only unconstrained blocks.
    ProtectedFlip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomTestConfig {
    pub budget: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub workers: usize,
}

impl Default for RandomTestConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            seed: 0,
            strategy: Strategy::ProtectedFlip,
            workers: 1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaselineError {
    #[error("sample budget must be at least 1")]
    ZeroBudget,
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestOutcome {
    FoundBias {
        instance: BiasInstance,
        samples_used: usize,
        elapsed: Duration,
    },
    NotFound {
        samples_used: usize,
        elapsed: Duration,
    },
}

impl TestOutcome {
    pub fn is_found(&self) -> bool {
        matches!(self, TestOutcome::FoundBias { .. })
    }

    pub fn samples_used(&self) -> usize {
        match self {
            TestOutcome::FoundBias { samples_used, .. }
            | TestOutcome::NotFound { samples_used, .. } => *samples_used,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn shard_seed(seed: u64, shard: usize) -> u64 {
    splitmix64(seed ^ splitmix64(shard as u64))
}

fn sample_value(rng: &mut ChaCha8Rng, d: &FeatureDomain) -> f64 {
    if d.is_discrete() {
        rng.gen_range(d.lower as i64..=d.upper as i64) as f64
    } else if d.upper > d.lower {
        rng.gen_range(d.lower..=d.upper)
    } else {
        d.lower
    }
}

fn sample_pair(
    rng: &mut ChaCha8Rng,
    task: &VerificationTask,
    strategy: Strategy,
) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = task.domains.iter().map(|d| sample_value(rng, d)).collect();
    let xp = match strategy {
        Strategy::UniformPairs => task.domains.iter().map(|d| sample_value(rng, d)).collect(),
        Strategy::ProtectedFlip => task
            .domains
            .iter()
            .enumerate()
            .map(|(i, d)| match task.spec.threshold_of(i) {
                Threshold::Infinity => sample_value(rng, d),
                Threshold::Finite(_) => x[i],
            })
            .collect(),
    };
    (x, xp)
}

/// First hit in a shard as `(offset, x, x')`.
fn run_shard(
    task: &VerificationTask,
    config: &RandomTestConfig,
    shard: usize,
) -> Option<(usize, Vec<f64>, Vec<f64>)> {
    let start = shard * SHARD_SIZE;
    let len = SHARD_SIZE.min(config.budget - start);
    let mut rng = ChaCha8Rng::seed_from_u64(shard_seed(config.seed, shard));
    for k in 0..len {
        let (x, xp) = sample_pair(&mut rng, task, config.strategy);
        if task.check(&x, &xp) {
            return Some((k, x, xp));
        }
    }
    None
}

/// Samples up to `config.budget` pairs. Shards of 4096 samples use seeds
/// derived from `config.seed`, so the outcome does not depend on `workers`.
pub fn random_test(
    task: &VerificationTask,
    config: &RandomTestConfig,
) -> Result<TestOutcome, BaselineError> {
    if config.budget == 0 {
        return Err(BaselineError::ZeroBudget);
    }
    let start = Instant::now();
    let n_shards = config.budget.div_ceil(SHARD_SIZE);
    let workers = config.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BaselineError::Pool(e.to_string()))?;
    let mut next = 0;
    while next < n_shards {
        let batch: Vec<usize> = (next..(next + workers).min(n_shards)).collect();
        let hits: Vec<Option<(usize, Vec<f64>, Vec<f64>)>> = pool.install(|| {
            batch
                .par_iter()
                .map(|&s| run_shard(task, config, s))
                .collect()
        });
        for (&shard, hit) in batch.iter().zip(hits) {
            if let Some((k, x, xp)) = hit {
                return Ok(TestOutcome::FoundBias {
                    instance: BiasInstance::oriented(&task.model, x, xp),
                    samples_used: shard * SHARD_SIZE + k + 1,
                    elapsed: start.elapsed(),
                });
            }
        }
        next += batch.len();
    }
    Ok(TestOutcome::NotFound {
        samples_used: config.budget,
        elapsed: start.elapsed(),
    })
}

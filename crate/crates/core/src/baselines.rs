//! Reference searchers that share the controller's ledger format: uniform
//! random sampling and an aging evolution with tournament selection.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::Skeleton;
use crate::codec::slot_arities;
use crate::controller::{batch_rng, score_batch, BatchEvaluator, LedgerRecord, SearchConfig, SearchError, SearchObserver};
use crate::eval::Evaluator;
use crate::reward::RewardConfig;

/// Largest tournament drawn from the population.
pub const TOURNAMENT_SIZE: usize = 5;

// Keeps baseline draws apart from the controller's streams under the same seed.
const RANDOM_SALT: u64 = 0x5241_4E44_4F4D_0001;
const EVOLUTION_SALT: u64 = 0x4556_4F4C_5645_0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Random,
    /// Aging evolution: children replace the oldest member.
    Evolution { population: usize, mutation_rate: f64 },
}

impl Strategy {
    pub fn evolution() -> Self {
        Strategy::Evolution {
            population: 64,
            mutation_rate: 1.0,
        }
    }

    pub fn check(&self) -> Result<(), SearchError> {
        if let Strategy::Evolution {
            population,
            mutation_rate,
        } = *self
        {
            if population == 0 {
                return Err(SearchError::Config("population must be positive".into()));
            }
            if !(0.0..=1.0).contains(&mutation_rate) {
                return Err(SearchError::Config(format!(
                    "mutation_rate {mutation_rate} must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

fn uniform_tokens<R: Rng + ?Sized>(arities: &[usize], rng: &mut R) -> Vec<usize> {
    arities.iter().map(|&a| rng.gen_range(0..a)).collect()
}

/// Copies `parent` and, with probability `rate`, redraws one uniformly chosen
/// slot uniformly over its arity.
pub fn mutate<R: Rng + ?Sized>(parent: &[usize], arities: &[usize], rate: f64, rng: &mut R) -> Vec<usize> {
    let mut child = parent.to_vec();
    if rate > 0.0 && rng.gen::<f64>() < rate {
        let slot = rng.gen_range(0..arities.len());
        child[slot] = rng.gen_range(0..arities[slot]);
    }
    child
}

/// Index of the best-reward member among `min(5, len)` uniform draws; ties go
/// to the earlier draw.
fn tournament<R: Rng + ?Sized>(population: &VecDeque<LedgerRecord>, rng: &mut R) -> usize {
    let k = TOURNAMENT_SIZE.min(population.len());
    let mut best = rng.gen_range(0..population.len());
    for _ in 1..k {
        let i = rng.gen_range(0..population.len());
        if population[i].reward > population[best].reward {
            best = i;
        }
    }
    best
}

/// Runs a baseline for `cfg.total_samples` evaluations and returns the ledger.
///
/// Uses `batch_size`, `seed`, and `parallelism` from `cfg`; the policy and
/// update settings are ignored.
pub fn run_baseline(
    skeleton: &Skeleton,
    reward_cfg: &RewardConfig,
    cfg: &SearchConfig,
    strategy: Strategy,
    evaluator: &Evaluator,
    observer: &mut dyn SearchObserver,
) -> Result<Vec<LedgerRecord>, SearchError> {
    cfg.check()?;
    strategy.check()?;
    reward_cfg
        .check()
        .map_err(|e| SearchError::Config(e.to_string()))?;
    let arities = slot_arities(skeleton);
    let mut batches = BatchEvaluator::new(evaluator, cfg.parallelism)?;
    let mut ledger: Vec<LedgerRecord> = Vec::with_capacity(cfg.total_samples);
    let mut step = 0;

    match strategy {
        Strategy::Random => {
            while ledger.len() < cfg.total_samples {
                let mut rng = batch_rng(cfg.seed ^ RANDOM_SALT, step);
                let n = cfg.batch_size.min(cfg.total_samples - ledger.len());
                let tokens = (0..n).map(|_| uniform_tokens(&arities, &mut rng)).collect();
                let records = score_batch(&mut batches, skeleton, reward_cfg, ledger.len(), step, tokens)?;
                observer.on_batch(&records)?;
                ledger.extend(records);
                step += 1;
            }
        }
        Strategy::Evolution {
            population,
            mutation_rate,
        } => {
            let mut pop: VecDeque<LedgerRecord> = VecDeque::with_capacity(population);
            while ledger.len() < cfg.total_samples {
                let mut rng = batch_rng(cfg.seed ^ EVOLUTION_SALT, step);
                let left = cfg.total_samples - ledger.len();
                let tokens: Vec<Vec<usize>> = if step == 0 {
                    (0..population.min(left))
                        .map(|_| uniform_tokens(&arities, &mut rng))
                        .collect()
                } else {
                    (0..cfg.batch_size.min(left))
                        .map(|_| {
                            let parent = &pop[tournament(&pop, &mut rng)];
                            mutate(&parent.tokens, &arities, mutation_rate, &mut rng)
                        })
                        .collect()
                };
                let records = score_batch(&mut batches, skeleton, reward_cfg, ledger.len(), step, tokens)?;
                observer.on_batch(&records)?;
                for r in &records {
                    pop.push_back(r.clone());
                    if pop.len() > population {
                        pop.pop_front();
                    }
                }
                ledger.extend(records);
                step += 1;
            }
        }
    }
    Ok(ledger)
}

//! Policy-gradient search over token sequences.
//!
//! Each step samples a batch of token sequences from the policy, evaluates
//! the decoded archs, scores them with the reward, and takes one
//! REINFORCE-with-baseline step or several PPO-clip passes.

mod policy;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Skeleton;
use crate::codec::{arch_id, decode_tokens, slot_arities, CodecError};
use crate::eval::{EvalError, Evaluation, Evaluator};
use crate::reward::{reward, Measurement, RewardConfig, RewardError};

pub use policy::{PolicyMode, PolicyParams, Trace, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIM};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("evaluation of sample {sample} failed: {source}")]
    Eval { sample: usize, source: EvalError },
    #[error("sample {sample}: {source}")]
    Reward { sample: usize, source: RewardError },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum UpdateRule {
    Reinforce,
    PpoClip { epsilon: f64, epochs: usize },
}

impl UpdateRule {
    pub fn ppo() -> Self {
        UpdateRule::PpoClip {
            epsilon: 0.2,
            epochs: 3,
        }
    }
}

fn default_batch() -> usize {
    16
}
fn default_total() -> usize {
    8000
}
fn default_decay() -> f64 {
    0.9
}
fn default_entropy() -> f64 {
    1e-4
}
fn default_one() -> usize {
    1
}
fn default_checkpoint_every() -> usize {
    10
}
fn default_rule() -> UpdateRule {
    UpdateRule::Reinforce
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_total")]
    pub total_samples: usize,
    /// Defaults to 0.5 for the independent policy and 0.3 for the
    /// recurrent one (rewards live in [0, 1], so advantages are small).
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_decay")]
    pub baseline_decay: f64,
    #[serde(default = "default_rule")]
    pub update_rule: UpdateRule,
    #[serde(default = "default_entropy")]
    pub entropy_weight: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyMode,
    #[serde(default = "default_one")]
    pub parallelism: usize,
    /// Batches between checkpoints.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            batch_size: default_batch(),
            total_samples: default_total(),
            learning_rate: None,
            baseline_decay: default_decay(),
            update_rule: default_rule(),
            entropy_weight: default_entropy(),
            seed: 0,
            policy: PolicyMode::Independent,
            parallelism: 1,
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

impl SearchConfig {
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.policy {
            PolicyMode::Independent => 0.5,
            PolicyMode::Recurrent { .. } => 0.3,
        })
    }

    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.total_samples % self.batch_size != 0 {
            return bad(format!(
                "total_samples {} is not a multiple of batch_size {}",
                self.total_samples, self.batch_size
            ));
        }
        let lr = self.learning_rate();
        if !(lr.is_finite() && lr > 0.0) {
            return bad(format!("learning rate {lr} must be positive"));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad(format!("baseline_decay {} must lie in [0, 1)", self.baseline_decay));
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return bad("entropy_weight must be >= 0".into());
        }
        if let UpdateRule::PpoClip { epsilon, epochs } = self.update_rule {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                return bad(format!("ppo epsilon {epsilon} must lie in (0, 1)"));
            }
            if epochs == 0 {
                return bad("ppo epochs must be positive".into());
            }
        }
        if self.parallelism == 0 {
            return bad("parallelism must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        Ok(())
    }
}

/// One scored sample fed to an update.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Vec<usize>,
    pub reward: f64,
    /// Log probability under the policy that drew the sample.
    pub log_prob: f64,
}

/// One line of the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub sample: usize,
    pub step: usize,
    pub arch_id: String,
    pub tokens: Vec<usize>,
    pub evaluation: Evaluation,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    /// Number of completed updates.
    pub step: usize,
    pub policy: PolicyParams,
    /// Exponential moving average of batch-mean reward.
    pub baseline: f64,
    pub ledger: Vec<LedgerRecord>,
}

impl SearchState {
    pub fn new(policy: PolicyParams) -> Self {
        SearchState {
            step: 0,
            policy,
            baseline: 0.0,
            ledger: Vec::new(),
        }
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            checkpoint_version: CHECKPOINT_VERSION,
            step: self.step,
            samples: self.ledger.len(),
            seed,
            baseline: self.baseline,
            policy: self.policy.clone(),
        }
    }

    /// Rebuilds a state from a checkpoint and the ledger written so far.
    /// Ledger records past the checkpoint are dropped.
    pub fn resume(checkpoint: Checkpoint, mut ledger: Vec<LedgerRecord>) -> Result<Self, SearchError> {
        if checkpoint.checkpoint_version != CHECKPOINT_VERSION {
            return Err(SearchError::Config(format!(
                "unsupported checkpoint_version {}",
                checkpoint.checkpoint_version
            )));
        }
        let mut policy = checkpoint.policy;
        policy.check().map_err(SearchError::Config)?;
        policy.reindex();
        if ledger.len() < checkpoint.samples {
            return Err(SearchError::Config(format!(
                "ledger has {} records but checkpoint expects {}",
                ledger.len(),
                checkpoint.samples
            )));
        }
        ledger.truncate(checkpoint.samples);
        Ok(SearchState {
            step: checkpoint.step,
            policy,
            baseline: checkpoint.baseline,
            ledger,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub checkpoint_version: u32,
    pub step: usize,
    pub samples: usize,
    pub seed: u64,
    pub baseline: f64,
    pub policy: PolicyParams,
}

/// Summary of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub mean_reward: f64,
    pub baseline_before: f64,
    /// Fraction of (sample, epoch) terms whose clipped branch was active.
    pub clipped_fraction: f64,
}

fn axpy(acc: &mut [f64], scale: f64, g: &[f64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += scale * v;
    }
}

fn entropy_term(policy: &PolicyParams, batch: &[Sample], weight: f64, acc: &mut [f64]) {
    if weight == 0.0 {
        return;
    }
    let n = batch.len() as f64;
    for s in batch {
        let (_, g) = policy.entropy_and_grad(&s.tokens);
        axpy(acc, weight / n, &g);
    }
}

fn finish_update(state: &mut SearchState, batch: &[Sample], cfg: &SearchConfig) -> f64 {
    let mean = batch.iter().map(|s| s.reward).sum::<f64>() / batch.len() as f64;
    state.baseline = cfg.baseline_decay * state.baseline + (1.0 - cfg.baseline_decay) * mean;
    mean
}

/// One REINFORCE step:
/// `θ += lr · (mean_i (r_i − b)·∇log π(τ_i) + w_H · mean_i ∇H_i)`, then the
/// baseline moves toward the batch mean.
pub fn update_reinforce(state: &mut SearchState, batch: &[Sample], cfg: &SearchConfig) -> UpdateStats {
    assert!(!batch.is_empty(), "update needs a non-empty batch");
    let baseline_before = state.baseline;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; state.policy.theta.len()];
    for s in batch {
        let advantage = s.reward - baseline_before;
        let (_, g) = state.policy.log_prob_and_grad(&s.tokens);
        axpy(&mut grad, advantage * 1.0 / n, &g);
    }
    entropy_term(&state.policy, batch, cfg.entropy_weight, &mut grad);
    axpy(&mut state.policy.theta, cfg.learning_rate(), &grad);
    let mean_reward = finish_update(state, batch, cfg);
    UpdateStats {
        mean_reward,
        baseline_before,
        clipped_fraction: 0.0,
    }
}

/// PPO-clip: `epochs` full-batch ascent passes on
/// `mean_i min(ρ_i·A_i, clip(ρ_i, 1−ε, 1+ε)·A_i)` with
/// `ρ_i = exp(log π(τ_i) − log π_old(τ_i))` and `A_i = r_i − b`.
///
/// The epsilon and epoch count come from `cfg.update_rule`; a non-PPO rule
/// falls back to ε = 0.2 and 3 epochs.
pub fn update_ppo(state: &mut SearchState, batch: &[Sample], cfg: &SearchConfig) -> UpdateStats {
    assert!(!batch.is_empty(), "update needs a non-empty batch");
    let (epsilon, epochs) = match cfg.update_rule {
        UpdateRule::PpoClip { epsilon, epochs } => (epsilon, epochs),
        UpdateRule::Reinforce => (0.2, 3),
    };
    let baseline_before = state.baseline;
    let n = batch.len() as f64;
    let mut clipped = 0usize;
    for _ in 0..epochs {
        let mut grad = vec![0.0; state.policy.theta.len()];
        for s in batch {
            let advantage = s.reward - baseline_before;
            let (lp, g) = state.policy.log_prob_and_grad(&s.tokens);
            let ratio = (lp - s.log_prob).exp();
            let unclipped = ratio * advantage;
            let clipped_obj = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
            if unclipped <= clipped_obj {
                axpy(&mut grad, advantage * ratio / n, &g);
            } else {
                clipped += 1;
            }
        }
        entropy_term(&state.policy, batch, cfg.entropy_weight, &mut grad);
        axpy(&mut state.policy.theta, cfg.learning_rate(), &grad);
    }
    let mean_reward = finish_update(state, batch, cfg);
    UpdateStats {
        mean_reward,
        baseline_before,
        clipped_fraction: clipped as f64 / (epochs as f64 * n),
    }
}

/// Receives ledger records and checkpoints as a run progresses.
pub trait SearchObserver {
    fn on_batch(&mut self, _records: &[LedgerRecord]) -> std::io::Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> std::io::Result<()> {
        Ok(())
    }
}

impl SearchObserver for () {}

/// Evaluates batches on a bounded worker pool, keeping sample order and
/// caching results of pure evaluators by arch id.
pub struct BatchEvaluator<'a> {
    evaluator: &'a Evaluator,
    pool: Option<rayon::ThreadPool>,
    cache: HashMap<String, Evaluation>,
}

impl<'a> BatchEvaluator<'a> {
    pub fn new(evaluator: &'a Evaluator, parallelism: usize) -> Result<Self, SearchError> {
        let pool = if parallelism > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(parallelism)
                    .build()
                    .map_err(|e| SearchError::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(BatchEvaluator {
            evaluator,
            pool,
            cache: HashMap::new(),
        })
    }

    /// Evaluates each token sequence; the i-th result belongs to the i-th input.
    pub fn evaluate(
        &mut self,
        skeleton: &Skeleton,
        batch: &[Vec<usize>],
    ) -> Result<Vec<Result<Evaluation, EvalError>>, SearchError> {
        use rayon::prelude::*;

        let ids: Vec<String> = batch.iter().map(|t| arch_id(t)).collect();
        // First occurrence of every id not yet cached.
        let mut todo: Vec<usize> = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            if !self.cache.contains_key(id) && !todo.iter().any(|&j| ids[j] == *id) {
                todo.push(i);
            }
        }
        let archs = todo
            .iter()
            .map(|&i| decode_tokens(&batch[i], skeleton))
            .collect::<Result<Vec<_>, _>>()?;
        let evaluator = self.evaluator;
        let run = |k: usize| evaluator.evaluate(&archs[k], &batch[todo[k]]);
        let fresh: Vec<Result<Evaluation, EvalError>> = match &self.pool {
            Some(pool) => pool.install(|| (0..todo.len()).into_par_iter().map(run).collect()),
            None => (0..todo.len()).map(run).collect(),
        };
        let mut fresh_by_id: HashMap<&str, Result<Evaluation, EvalError>> = HashMap::new();
        for (k, res) in fresh.into_iter().enumerate() {
            fresh_by_id.insert(&ids[todo[k]], res);
        }
        let out = ids
            .iter()
            .map(|id| match self.cache.get(id) {
                Some(ev) => Ok(ev.clone()),
                None => fresh_by_id[id.as_str()].clone(),
            })
            .collect();
        for (id, res) in fresh_by_id {
            if let Ok(ev) = res {
                self.cache.insert(id.to_string(), ev);
            }
        }
        Ok(out)
    }
}

/// Evaluates and scores one batch, numbering samples from `first`.
pub(crate) fn score_batch(
    batches: &mut BatchEvaluator<'_>,
    skeleton: &Skeleton,
    reward_cfg: &RewardConfig,
    first: usize,
    step: usize,
    tokens: Vec<Vec<usize>>,
) -> Result<Vec<LedgerRecord>, SearchError> {
    let evals = batches.evaluate(skeleton, &tokens)?;
    let mut records = Vec::with_capacity(tokens.len());
    for (i, (tokens, ev)) in tokens.into_iter().zip(evals).enumerate() {
        let sample = first + i;
        let ev = ev.map_err(|source| SearchError::Eval { sample, source })?;
        let r = reward(
            Measurement {
                accuracy: ev.accuracy,
                latency_ms: ev.latency_ms,
            },
            reward_cfg,
        )
        .map_err(|source| SearchError::Reward { sample, source })?;
        records.push(LedgerRecord {
            sample,
            step,
            arch_id: ev.arch_id.clone(),
            tokens,
            evaluation: ev,
            reward: r,
        });
    }
    Ok(records)
}

/// Per-batch RNG: the seed picks the key, the batch index picks the stream,
/// so any batch can be regenerated without replaying earlier ones.
pub(crate) fn batch_rng(seed: u64, batch_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch_index as u64);
    rng
}

/// Initial state for a fresh run.
pub fn initial_state(skeleton: &Skeleton, cfg: &SearchConfig) -> SearchState {
    let mut rng = batch_rng(cfg.seed, usize::MAX);
    SearchState::new(PolicyParams::new(cfg.policy, slot_arities(skeleton), &mut rng))
}

/// Runs the sample-eval-update loop from scratch until `total_samples` have
/// been drawn.
pub fn run_search(
    skeleton: &Skeleton,
    reward_cfg: &RewardConfig,
    search_cfg: &SearchConfig,
    evaluator: &Evaluator,
    observer: &mut dyn SearchObserver,
) -> Result<SearchState, SearchError> {
    let state = initial_state(skeleton, search_cfg);
    continue_search(state, skeleton, reward_cfg, search_cfg, evaluator, observer)
}

/// Continues a run (fresh or resumed) until `total_samples` have been drawn.
///
/// An evaluator error aborts the run; records of completed batches have
/// already been handed to the observer.
pub fn continue_search(
    mut state: SearchState,
    skeleton: &Skeleton,
    reward_cfg: &RewardConfig,
    cfg: &SearchConfig,
    evaluator: &Evaluator,
    observer: &mut dyn SearchObserver,
) -> Result<SearchState, SearchError> {
    cfg.check()?;
    reward_cfg
        .check()
        .map_err(|e| SearchError::Config(e.to_string()))?;
    if state.policy.arities != slot_arities(skeleton) {
        return Err(SearchError::Config("policy layout does not match skeleton".into()));
    }
    let mut batches = BatchEvaluator::new(evaluator, cfg.parallelism)?;
    while state.ledger.len() < cfg.total_samples {
        let mut rng = batch_rng(cfg.seed, state.step);
        let drawn: Vec<(Vec<usize>, f64)> = (0..cfg.batch_size)
            .map(|_| state.policy.sample(&mut rng))
            .collect();
        let tokens: Vec<Vec<usize>> = drawn.iter().map(|(t, _)| t.clone()).collect();
        let first = state.ledger.len();
        let records = score_batch(&mut batches, skeleton, reward_cfg, first, state.step, tokens)?;
        let samples: Vec<Sample> = records
            .iter()
            .zip(&drawn)
            .map(|(rec, (_, log_prob))| Sample {
                tokens: rec.tokens.clone(),
                reward: rec.reward,
                log_prob: *log_prob,
            })
            .collect();

        match cfg.update_rule {
            UpdateRule::Reinforce => update_reinforce(&mut state, &samples, cfg),
            UpdateRule::PpoClip { .. } => update_ppo(&mut state, &samples, cfg),
        };
        state.step += 1;
        observer.on_batch(&records)?;
        state.ledger.extend(records);
        if state.step % cfg.checkpoint_every == 0 || state.ledger.len() >= cfg.total_samples {
            observer.on_checkpoint(&state.checkpoint(cfg.seed))?;
        }
    }
    Ok(state)
}

/// Recomputes every ledger reward from its stored measurement.
pub fn replay_rewards(ledger: &[LedgerRecord], reward_cfg: &RewardConfig) -> Result<Vec<f64>, RewardError> {
    ledger
        .iter()
        .map(|r| {
            reward(
                Measurement {
                    accuracy: r.evaluation.accuracy,
                    latency_ms: r.evaluation.latency_ms,
                },
                reward_cfg,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::LatencyModel;
    use crate::eval::{AccuracySource, SurrogateConfig};
    use crate::presets;
    use rand::Rng;

    fn bandit_cfg(rule: UpdateRule) -> SearchConfig {
        SearchConfig {
            batch_size: 16,
            learning_rate: Some(0.1),
            entropy_weight: 0.0,
            update_rule: rule,
            ..Default::default()
        }
    }

    fn bandit_prob_after(rule: UpdateRule, steps: usize, seed: u64) -> f64 {
        let cfg = bandit_cfg(rule);
        let mut state = SearchState::new(PolicyParams::independent(vec![2]));
        for step in 0..steps {
            let mut rng = batch_rng(seed, step);
            let batch: Vec<Sample> = (0..cfg.batch_size)
                .map(|_| {
                    let (t, lp) = state.policy.sample(&mut rng);
                    let reward = if t[0] == 0 { 1.0 } else { 0.0 };
                    Sample {
                        tokens: t,
                        reward,
                        log_prob: lp,
                    }
                })
                .collect();
            match rule {
                UpdateRule::Reinforce => update_reinforce(&mut state, &batch, &cfg),
                UpdateRule::PpoClip { .. } => update_ppo(&mut state, &batch, &cfg),
            };
        }
        state.policy.slot_probs(0).unwrap()[0]
    }

    #[test]
    fn zero_advantage_without_entropy_leaves_theta() {
        let mut state = SearchState::new(PolicyParams::independent(vec![3, 2]));
        state.policy.theta = vec![0.3, -0.2, 0.1, 0.5, -0.5];
        state.baseline = 0.4;
        let before = state.policy.theta.clone();
        let batch: Vec<Sample> = [[0, 1], [2, 0]]
            .iter()
            .map(|t| Sample {
                tokens: t.to_vec(),
                reward: 0.4,
                log_prob: 0.0,
            })
            .collect();
        let cfg = SearchConfig {
            entropy_weight: 0.0,
            ..Default::default()
        };
        update_reinforce(&mut state, &batch, &cfg);
        assert_eq!(state.policy.theta, before);
        // With entropy on, only the entropy gradient moves theta.
        let cfg = SearchConfig {
            entropy_weight: 0.5,
            ..Default::default()
        };
        state.baseline = 0.4;
        update_reinforce(&mut state, &batch, &cfg);
        assert_ne!(state.policy.theta, before);
    }

    #[test]
    fn baseline_ema_after_one_batch() {
        let mut state = SearchState::new(PolicyParams::independent(vec![2]));
        let batch = vec![
            Sample {
                tokens: vec![0],
                reward: 0.2,
                log_prob: 0.0,
            },
            Sample {
                tokens: vec![1],
                reward: 0.6,
                log_prob: 0.0,
            },
        ];
        update_reinforce(&mut state, &batch, &SearchConfig::default());
        assert!((state.baseline - 0.1 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn reinforce_solves_two_armed_bandit() {
        assert!(bandit_prob_after(UpdateRule::Reinforce, 500, 1) > 0.95);
    }

    #[test]
    fn ppo_solves_two_armed_bandit() {
        assert!(bandit_prob_after(UpdateRule::ppo(), 500, 1) > 0.95);
    }

    #[test]
    fn clipped_positive_advantage_contributes_nothing() {
        let mut state = SearchState::new(PolicyParams::independent(vec![2]));
        // log_prob_old far below current: ratio = e^2 > 1 + eps.
        let lp_now = state.policy.log_prob(&[0]);
        let batch = vec![Sample {
            tokens: vec![0],
            reward: 1.0,
            log_prob: lp_now - 2.0,
        }];
        let cfg = SearchConfig {
            entropy_weight: 0.0,
            update_rule: UpdateRule::PpoClip {
                epsilon: 0.2,
                epochs: 1,
            },
            ..Default::default()
        };
        let before = state.policy.theta.clone();
        let stats = update_ppo(&mut state, &batch, &cfg);
        assert_eq!(stats.clipped_fraction, 1.0);
        assert_eq!(state.policy.theta, before);
    }

    #[test]
    fn ppo_with_huge_epsilon_matches_reinforce() {
        let mut rng = batch_rng(7, 0);
        let mut base = SearchState::new(PolicyParams::recurrent(vec![3, 2, 4], 3, 5, &mut rng));
        base.baseline = 0.3;
        let batch: Vec<Sample> = (0..8)
            .map(|_| {
                let (t, lp) = base.policy.sample(&mut rng);
                Sample {
                    tokens: t,
                    reward: rng.gen(),
                    log_prob: lp,
                }
            })
            .collect();
        let mut a = base.clone();
        let mut b = base.clone();
        let cfg = |rule| SearchConfig {
            entropy_weight: 0.0,
            learning_rate: Some(0.05),
            update_rule: rule,
            ..Default::default()
        };
        update_reinforce(&mut a, &batch, &cfg(UpdateRule::Reinforce));
        update_ppo(
            &mut b,
            &batch,
            &cfg(UpdateRule::PpoClip {
                epsilon: 1e12,
                epochs: 1,
            }),
        );
        for (x, y) in a.policy.theta.iter().zip(&b.policy.theta) {
            assert!((x - y).abs() <= 1e-10);
        }
        assert_eq!(a.baseline, b.baseline);
    }

    fn tiny_evaluator() -> Evaluator {
        Evaluator::new(
            AccuracySource::Surrogate(SurrogateConfig {
                capacity_half_point: 3e6,
                ..Default::default()
            }),
            LatencyModel::new(&presets::desk_phone_profile()),
        )
    }

    #[derive(Default)]
    struct Counter {
        batches: usize,
        checkpoints: Vec<usize>,
    }

    impl SearchObserver for Counter {
        fn on_batch(&mut self, _records: &[LedgerRecord]) -> std::io::Result<()> {
            self.batches += 1;
            Ok(())
        }
        fn on_checkpoint(&mut self, c: &Checkpoint) -> std::io::Result<()> {
            self.checkpoints.push(c.step);
            Ok(())
        }
    }

    #[test]
    fn sixty_four_samples_make_four_updates() {
        let cfg = SearchConfig {
            total_samples: 64,
            checkpoint_every: 3,
            ..Default::default()
        };
        let mut counter = Counter::default();
        let state = run_search(
            &presets::tiny(),
            &RewardConfig::soft(1.0),
            &cfg,
            &tiny_evaluator(),
            &mut counter,
        )
        .unwrap();
        assert_eq!(state.step, 4);
        assert_eq!(state.ledger.len(), 64);
        assert_eq!(counter.batches, 4);
        assert_eq!(counter.checkpoints, vec![3, 4]);
        let idx: Vec<usize> = state.ledger.iter().map(|r| r.sample).collect();
        assert_eq!(idx, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn ledger_rewards_replay_bitwise() {
        let cfg = SearchConfig {
            total_samples: 32,
            ..Default::default()
        };
        let reward_cfg = RewardConfig::soft(1.0);
        let state = run_search(&presets::tiny(), &reward_cfg, &cfg, &tiny_evaluator(), &mut ()).unwrap();
        let text: String = state
            .ledger
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        let parsed: Vec<LedgerRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let replayed = replay_rewards(&parsed, &reward_cfg).unwrap();
        for (rec, r) in state.ledger.iter().zip(replayed) {
            assert_eq!(rec.reward.to_bits(), r.to_bits());
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let sk = presets::tiny();
        let reward_cfg = RewardConfig::soft(1.0);
        let full_cfg = SearchConfig {
            total_samples: 96,
            ..Default::default()
        };
        let ev = tiny_evaluator();
        let full = run_search(&sk, &reward_cfg, &full_cfg, &ev, &mut ()).unwrap();
        let half_cfg = SearchConfig {
            total_samples: 48,
            ..full_cfg.clone()
        };
        let half = run_search(&sk, &reward_cfg, &half_cfg, &ev, &mut ()).unwrap();
        let resumed = SearchState::resume(half.checkpoint(0), half.ledger.clone()).unwrap();
        let done = continue_search(resumed, &sk, &reward_cfg, &full_cfg, &ev, &mut ()).unwrap();
        assert_eq!(done.ledger, full.ledger);
        assert_eq!(done.policy.theta, full.policy.theta);
    }

    #[test]
    fn rejects_uneven_budget() {
        let cfg = SearchConfig {
            total_samples: 30,
            ..Default::default()
        };
        assert!(matches!(cfg.check(), Err(SearchError::Config(_))));
    }
}

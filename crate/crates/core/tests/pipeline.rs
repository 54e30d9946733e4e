//! Library-level flow: tokens to arch to cost to evaluation to search, then
//! the ledger's front and a reward replay.

use latnas::codec::{cardinality, decode_tokens, encode, slot_arities};
use latnas::controller::{replay_rewards, run_search, PolicyMode, SearchConfig, UpdateRule};
use latnas::cost::{arch_macs, LatencyModel};
use latnas::eval::{AccuracySource, Evaluator, SurrogateConfig};
use latnas::pareto::{brute_force_front, extract_front, ParetoPoint};
use latnas::presets;
use latnas::reward::RewardConfig;

fn evaluator() -> Evaluator {
    let surrogate = SurrogateConfig {
        capacity_half_point: 2e6,
        ..SurrogateConfig::default()
    };
    Evaluator::new(
        AccuracySource::Surrogate(surrogate),
        LatencyModel::new(&presets::desk_phone_profile()),
    )
}

#[test]
fn reference_arch_round_trips_and_costs() {
    let sk = presets::mnasnet_like();
    let arch = presets::mnasnet_like_arch();
    let tokens = encode(&arch, &sk).unwrap();
    assert_eq!(decode_tokens(&tokens.tokens, &sk).unwrap(), arch);
    assert_eq!(arch_macs(&arch), 282_227_456);
    let est = LatencyModel::new(&presets::desk_phone_profile()).estimate(&arch).unwrap();
    assert_eq!(est.total_macs, 282_227_456);
    assert!(est.total_latency_ms > 0.0);
    assert_eq!(slot_arities(&sk).len(), 5 * sk.blocks.len());
    assert!(cardinality(&sk).to_string().len() > 6);
}

#[test]
fn search_ledger_front_and_replay() {
    let sk = presets::tiny();
    let ev = evaluator();
    let rc = RewardConfig::soft(0.5);
    for (policy, rule) in [
        (PolicyMode::Independent, UpdateRule::Reinforce),
        (PolicyMode::recurrent(), UpdateRule::ppo()),
    ] {
        let cfg = SearchConfig {
            batch_size: 8,
            total_samples: 64,
            seed: 3,
            policy,
            update_rule: rule,
            parallelism: 2,
            ..SearchConfig::default()
        };
        let state = run_search(&sk, &rc, &cfg, &ev, &mut ()).unwrap();
        assert_eq!(state.ledger.len(), 64);
        assert_eq!(state.step, 8);

        let replayed = replay_rewards(&state.ledger, &rc).unwrap();
        for (r, again) in state.ledger.iter().zip(replayed) {
            assert_eq!(r.reward.to_bits(), again.to_bits());
        }

        let points: Vec<ParetoPoint> = state
            .ledger
            .iter()
            .map(|r| ParetoPoint::new(r.arch_id.clone(), r.evaluation.accuracy, r.evaluation.latency_ms))
            .collect();
        let front = extract_front(points.clone());
        assert!(!front.is_empty());
        assert_eq!(front.points(), brute_force_front(&points).as_slice());
    }
}

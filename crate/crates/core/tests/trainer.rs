mod common;

use common::{action, Logits};
use entbonus::diffcore::{HasParams, Tape};
use entbonus::entropy::{enumerate_probs, exact_entropy_gradient, EstimatorKind};
use entbonus::envs::{BanditConfig, HuntersConfig};
use entbonus::policy::{ActionSpace, ModelKind, PolicyModel};
use entbonus::trainer::{
    curve_csv, policy_gradient_step, train, EnvConfig, Optimizer, OptimizerKind, TrainConfig, Trajectory, CURVE_HEADER,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_step(a: &[usize]) -> Trajectory {
    Trajectory { states: vec![vec![0.0]], actions: vec![action(a)], rewards: vec![0.0] }
}

fn sgd(lr: f64) -> Optimizer<f64> {
    Optimizer::new(OptimizerKind::Sgd, lr).unwrap()
}

#[test]
fn positive_advantage_raises_the_action_probability() {
    let l = Logits { d: 1, k: 2, blocks: vec![vec![0.3, -0.2]] };
    let mut table = l.table();
    let mut tape = Tape::new();
    policy_gradient_step(&mut table, &mut tape, &one_step(&[1]), &[2.0], EstimatorKind::None, 0.0, 10.0, &mut sgd(0.1))
        .unwrap();
    let after = table.params().flat_values();
    let p_before = l.prob(&[1]);
    let p_after = Logits { blocks: vec![after], ..l }.prob(&[1]);
    assert!(p_after > p_before, "{p_before} -> {p_after}");
}

/// With zero advantage the update is exactly `lr * beta * grad H`.
#[test]
fn exact_entropy_term_moves_along_the_exact_gradient() {
    let l = Logits::random(2, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let mut table = l.table();
    let grad = exact_entropy_gradient(&table, &[0.0]).unwrap().concat();
    let before = table.params().flat_values();
    let (lr, beta) = (0.01, 0.5);
    let mut tape = Tape::new();
    policy_gradient_step(&mut table, &mut tape, &one_step(&[0, 2]), &[0.0], EstimatorKind::Exact, beta, 1e9, &mut sgd(lr))
        .unwrap();
    for ((b, a), g) in before.iter().zip(table.params().flat_values()).zip(&grad) {
        assert!(((a - b) / lr - beta * g).abs() < 1e-6);
    }
}

#[test]
fn clipping_bounds_every_update_entry() {
    let l = Logits::random(2, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let mut table = l.table();
    let before = table.params().flat_values();
    let lr = 0.05;
    let mut tape = Tape::new();
    policy_gradient_step(&mut table, &mut tape, &one_step(&[1, 1]), &[1e6], EstimatorKind::Smoothed, 0.1, 1.0, &mut sgd(lr))
        .unwrap();
    let moved = before.iter().zip(table.params().flat_values()).map(|(b, a)| (a - b).abs());
    let largest = moved.fold(0.0, f64::max);
    assert!(largest <= lr * (1.0 + 1e-12));
    assert!(largest > 0.5 * lr);
}

/// Without an entropy term, only the log-probability graph is recorded.
#[test]
fn no_entropy_estimator_adds_no_entropy_nodes() {
    let l = Logits::random(2, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    let size = |kind: EstimatorKind, beta: f64| {
        let mut table = l.table();
        let mut tape = Tape::new();
        policy_gradient_step(&mut table, &mut tape, &one_step(&[0, 1]), &[1.0], kind, beta, 1.0, &mut sgd(0.1)).unwrap();
        (tape.len(), table.params().flat_values())
    };
    let (plain, plain_params) = size(EstimatorKind::None, 0.0);
    let (with_bonus, bonus_params) = size(EstimatorKind::Smoothed, 0.0);
    assert!(plain < with_bonus);
    // at beta = 0 the bonus changes nothing numerically
    assert_eq!(plain_params, bonus_params);
}

#[test]
fn unbiased_and_smoothed_differ_only_through_the_correction() {
    let l = Logits::random(1, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let run = |kind| {
        let mut table = l.table();
        let mut tape = Tape::new();
        policy_gradient_step(&mut table, &mut tape, &one_step(&[2]), &[0.3], kind, 0.2, 1.0, &mut sgd(0.1)).unwrap();
        table.params().flat_values()
    };
    // a single dimension has no correction terms
    assert_eq!(run(EstimatorKind::Smoothed), run(EstimatorKind::UnbiasedGradient));
}

fn small_bandit(estimator: EstimatorKind, episodes: usize) -> TrainConfig {
    let env = EnvConfig::Bandit(BanditConfig::standard(2, 3, 10.0, 0.2));
    let mut c = TrainConfig::new(env, ModelKind::Lstm, estimator);
    c.hidden = vec![6];
    c.episodes = episodes;
    c.record_wallclock = false;
    c
}

#[test]
fn training_is_bit_reproducible() {
    for est in [EstimatorKind::Crude, EstimatorKind::UnbiasedGradient, EstimatorKind::SmoothedMode { beam: 2 }] {
        let config = TrainConfig { seed: 5, ..small_bandit(est, 60) };
        let a = train::<f64>(&config).unwrap();
        let b = train::<f64>(&config).unwrap();
        assert_eq!(curve_csv(&a.records), curve_csv(&b.records));
        assert_eq!(a.model.params().flat_values(), b.model.params().flat_values());
        let c = train::<f64>(&TrainConfig { seed: 6, ..config }).unwrap();
        assert_ne!(curve_csv(&a.records), curve_csv(&c.records));
    }
}

#[test]
fn curve_has_one_row_per_episode() {
    let out = train::<f64>(&small_bandit(EstimatorKind::Smoothed, 25)).unwrap();
    let csv = curve_csv(&out.records);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    assert_eq!(lines.count(), 25);
    assert!(out.records.iter().all(|r| r.length == 1 && r.entropy_mean > 0.0 && r.optimal.is_some()));
}

#[test]
fn hunters_training_runs_every_model() {
    let env = EnvConfig::Hunters(HuntersConfig { grid_size: 3, hunters: 1, rabbits: 1, max_steps: 200 });
    for (model, hidden) in [(ModelKind::Lstm, vec![8]), (ModelKind::Mmdp, vec![8, 8]), (ModelKind::Is, vec![8])] {
        for est in [EstimatorKind::None, EstimatorKind::Exact, EstimatorKind::UnbiasedGradient] {
            let mut c = TrainConfig::new(env.clone(), model, est);
            c.hidden = hidden.clone();
            c.episodes = 3;
            let out = train::<f64>(&c).unwrap();
            assert_eq!(out.records.len(), 3);
            assert!(out.model.params().flat_values().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn single_precision_training() {
    let out = train::<f32>(&small_bandit(EstimatorKind::UnbiasedGradient, 20)).unwrap();
    assert_eq!(out.records.len(), 20);
    assert_eq!(out.discarded, 0);
}

#[test]
fn invalid_configurations_are_rejected() {
    let ok = small_bandit(EstimatorKind::Smoothed, 1);
    assert!(TrainConfig { discount: 0.0, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { entropy_weight: -1.0, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { hidden: vec![3, 4], ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { estimator: EstimatorKind::Exact, enumeration_cap: 8, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { estimator: EstimatorKind::Exact, enumeration_cap: 9, ..ok }.validate().is_ok());
}

#[test]
fn table_model_learns_the_bonus_on_a_tiny_bandit() {
    // 2 agents, 3 arms: the bonus pair pays 5 + 10 * 0.2 = 7 on average, any other optimal pair 5
    let mut c = small_bandit(EstimatorKind::Smoothed, 3000);
    c.model = ModelKind::Table;
    c.hidden = vec![];
    c.learning_rate = 0.05;
    let out = train::<f64>(&c).unwrap();
    let table: &dyn PolicyModel<f64> = out.model.as_ref();
    let space = ActionSpace::new(2, 3).unwrap();
    let probs = enumerate_probs(table, &[1.0]).unwrap();
    let bonus = BanditConfig::standard(2, 3, 10.0, 0.2).bonus_config;
    let p_bonus = probs.iter().find(|(a, _)| a.components() == bonus.as_slice()).unwrap().1;
    assert_eq!(probs.len() as u128, space.total_actions());
    assert!(p_bonus > 0.5, "bonus probability {p_bonus}");
}

use entbonus::diffcore::HasParams;
use entbonus::envs::{BanditConfig, Environment, HuntersConfig, HuntersRabbits, MultiAgentBandit};
use entbonus::policy::{Action, ActionSpace, IsPolicy, LstmPolicy, PolicyModel};
use entbonus::trainer::evaluate;
use entbonus::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_action<R: Rng>(space: ActionSpace, rng: &mut R) -> Action {
    Action::new((0..space.dims()).map(|_| rng.gen_range(0..space.arity())).collect())
}

/// Independent heads whose output layer puts all mass on `target`.
fn pinned_policy(env: &MultiAgentBandit, target: &[usize]) -> IsPolicy<f64> {
    let space = env.action_space();
    let mut policy = IsPolicy::new(space, env.state_dim(), &[4], &mut ChaCha8Rng::seed_from_u64(0));
    policy.zero_output_layer();
    let bias = policy.params_mut().iter_mut().last().unwrap();
    assert_eq!(bias.value.len(), space.dims() * space.arity());
    for (i, &arm) in target.iter().enumerate() {
        bias.value.values_mut()[i * space.arity() + arm] = 60.0;
    }
    policy
}

#[test]
fn always_playing_the_bonus_configuration() {
    let config = BanditConfig::default();
    let mut env = MultiAgentBandit::new(config.clone()).unwrap();
    let policy = pinned_policy(&env, &config.bonus_config);
    let episodes = 100_000;
    let report = evaluate(&policy, &mut env, episodes, 0.8, 1, false).unwrap();
    assert_eq!(report.optimal_pct, Some(100.0));
    // arms 7..=10 pay 34; the bonus adds 166 with probability 0.01
    let expected = 34.0 + 166.0 * 0.01;
    let se = 166.0 * (0.01f64 * 0.99).sqrt() / (episodes as f64).sqrt();
    assert!((report.mean_reward - expected).abs() < 4.0 * se, "{} vs {expected}", report.mean_reward);
    assert_eq!(report.mean_length, 1.0);
}

#[test]
fn uniform_policy_rarely_finds_the_bonus_configuration() {
    let config = BanditConfig::default();
    let mut env = MultiAgentBandit::new(config).unwrap();
    let mut policy = IsPolicy::<f64>::new(env.action_space(), env.state_dim(), &[4], &mut ChaCha8Rng::seed_from_u64(0));
    policy.zero_output_layer();
    let episodes = 200_000;
    let report = evaluate(&policy, &mut env, episodes, 0.8, 2, false).unwrap();
    // one configuration in 10^4
    let hits = report.optimal_pct.unwrap() / 100.0 * episodes as f64;
    let expected = episodes as f64 * 1e-4;
    assert!((hits - expected).abs() < 5.0 * expected.sqrt(), "{hits} hits, expected {expected}");
}

#[test]
fn bandit_rewards_count_each_arm_once() {
    let config = BanditConfig::default();
    assert_eq!(config.base_reward(&Action::new(vec![9, 9, 9, 9])), 10.0);
    assert_eq!(config.base_reward(&Action::new(vec![0, 1, 2, 3])), 10.0);
    assert_eq!(config.max_reward(), 34.0);
    let mut env = MultiAgentBandit::new(BanditConfig { bonus_prob: 1.0, ..config.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    env.reset(&mut rng);
    let step = env.step(&Action::new(config.bonus_config.clone()), &mut rng).unwrap();
    assert_eq!(step.reward, 200.0);
    assert!(step.done);
    assert!(matches!(env.step(&Action::new(config.bonus_config), &mut rng), Err(Error::EpisodeDone)));
}

#[test]
fn bandit_config_validation() {
    let ok = BanditConfig::default();
    assert!(BanditConfig { bonus_config: vec![0, 1, 2, 3], ..ok.clone() }.validate().is_err());
    assert!(BanditConfig { bonus_prob: 1.5, ..ok.clone() }.validate().is_err());
    assert!(BanditConfig { agents: 11, ..ok }.validate().is_err());
}

#[test]
fn random_hunters_almost_always_finish() {
    let config = HuntersConfig::default();
    let mut env = HuntersRabbits::new(config.clone()).unwrap();
    let space = env.action_space();
    assert_eq!((space.dims(), space.arity()), (2, 9));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let episodes = 400;
    let mut finished = 0;
    for _ in 0..episodes {
        env.reset(&mut rng);
        let mut steps = 0;
        while !env.is_done() && steps < config.max_steps {
            let a = random_action(space, &mut rng);
            env.step(&a, &mut rng).unwrap();
            steps += 1;
        }
        finished += env.is_done() as usize;
    }
    assert!(finished as f64 / episodes as f64 > 0.99, "{finished}/{episodes}");
}

#[test]
fn episodes_are_reproducible_from_the_stream() {
    let run = |seed: u64| {
        let mut env = HuntersRabbits::new(HuntersConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log = vec![env.reset(&mut rng)];
        while !env.is_done() && log.len() < 200 {
            let a = random_action(env.action_space(), &mut rng);
            log.push(env.step(&a, &mut rng).unwrap().state);
        }
        log
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

#[test]
fn hunters_state_layout() {
    let mut env = HuntersRabbits::new(HuntersConfig { grid_size: 4, hunters: 3, rabbits: 2, max_steps: 100 }).unwrap();
    let state = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(state.len(), env.state_dim());
    assert_eq!(state.len(), 3 * (3 + 2));
    assert!(state.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn fresh_policy_on_a_small_grid_has_finite_episodes() {
    let config = HuntersConfig { grid_size: 3, hunters: 1, rabbits: 1, max_steps: 10_000 };
    let mut env = HuntersRabbits::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = LstmPolicy::<f64>::new(env.action_space(), env.state_dim(), 16, &mut rng);
    let report = evaluate(&policy, &mut env, 200, 0.8, 5, false).unwrap();
    assert!(report.mean_length.is_finite() && report.mean_length < 10_000.0);
    assert_eq!(report.optimal_pct, None);
}

#[test]
fn evaluation_rejects_a_mismatched_model() {
    let mut env = HuntersRabbits::new(HuntersConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let policy = LstmPolicy::<f64>::new(ActionSpace::new(2, 9).unwrap(), 5, 8, &mut rng);
    assert!(matches!(evaluate(&policy, &mut env, 1, 0.8, 0, false), Err(Error::Config(_))));
}

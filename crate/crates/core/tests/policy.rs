use entbonus::diffcore::Tape;
use entbonus::entropy::{enumerate_probs, SoftmaxTable};
use entbonus::policy::{
    beam_search, conditional_dist, greedy_action, load_checkpoint, log_prob, read_header, sample, save_checkpoint,
    Action, ActionSpace, IsPolicy, LstmPolicy, MmdpPolicy, ModelKind, PolicyModel,
};
use entbonus::{Error, LstmPolicy32};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STATE_DIM: usize = 3;

fn models(space: ActionSpace, rng: &mut ChaCha8Rng) -> Vec<Box<dyn PolicyModel<f64>>> {
    vec![
        Box::new(LstmPolicy::new(space, STATE_DIM, 5, rng)),
        Box::new(MmdpPolicy::new(space, STATE_DIM, &[6, 4], rng)),
        Box::new(IsPolicy::new(space, STATE_DIM, &[6], rng)),
    ]
}

fn random_state(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..STATE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn joint_probabilities_sum_to_one_and_match_log_prob() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (d, k) in [(1, 3), (2, 4), (3, 3)] {
        let space = ActionSpace::new(d, k).unwrap();
        for model in models(space, &mut rng) {
            let state = random_state(&mut rng);
            let probs = enumerate_probs(model.as_ref(), &state).unwrap();
            assert_eq!(probs.len(), k.pow(d as u32));
            let total: f64 = probs.iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12, "{} sums to {total}", model.kind());
            for (a, p) in probs.iter().step_by(5) {
                let mut tape = Tape::new();
                let lp = log_prob(model.as_ref(), &mut tape, &state, a).unwrap();
                assert!((tape.scalar(lp).unwrap() - p.ln()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn independent_heads_ignore_the_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let space = ActionSpace::new(3, 4).unwrap();
    let model = IsPolicy::<f64>::new(space, STATE_DIM, &[8], &mut rng);
    let state = random_state(&mut rng);
    let mut tape = Tape::new();
    let a = conditional_dist(&model, &mut tape, &state, &[0, 1]).unwrap();
    let b = conditional_dist(&model, &mut tape, &state, &[3, 2]).unwrap();
    assert_eq!(tape.value(a).unwrap(), tape.value(b).unwrap());
}

#[test]
fn autoregressive_models_condition_on_the_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let space = ActionSpace::new(2, 4).unwrap();
    let state = random_state(&mut rng);
    let lstm = LstmPolicy::<f64>::new(space, STATE_DIM, 6, &mut rng);
    let mmdp = MmdpPolicy::<f64>::new(space, STATE_DIM, &[8], &mut rng);
    let models: [&dyn PolicyModel<f64>; 2] = [&lstm, &mmdp];
    for model in models {
        let mut tape = Tape::new();
        let a = conditional_dist(model, &mut tape, &state, &[0]).unwrap();
        let b = conditional_dist(model, &mut tape, &state, &[3]).unwrap();
        assert_ne!(tape.value(a).unwrap(), tape.value(b).unwrap(), "{}", model.kind());
    }
}

#[test]
fn sample_frequencies_follow_the_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let space = ActionSpace::new(2, 3).unwrap();
    let model = LstmPolicy::<f64>::new(space, STATE_DIM, 4, &mut rng);
    let state = random_state(&mut rng);
    let probs = enumerate_probs(&model, &state).unwrap();
    let n = 40_000;
    let mut counts = vec![0usize; probs.len()];
    let mut tape = Tape::new();
    for _ in 0..n {
        tape.clear();
        let a = sample(&model, &mut tape, &state, &mut rng).unwrap().action;
        counts[a.components()[0] * 3 + a.components()[1]] += 1;
    }
    for ((_, p), c) in probs.iter().zip(counts) {
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((c as f64 / n as f64 - p).abs() < 5.0 * sd, "freq {} vs p {p}", c as f64 / n as f64);
    }
}

#[test]
fn full_width_beam_finds_the_mode_and_greedy_is_no_better() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let space = ActionSpace::new(3, 3).unwrap();
    for model in models(space, &mut rng) {
        let state = random_state(&mut rng);
        let probs = enumerate_probs(model.as_ref(), &state).unwrap();
        let (mode, p_mode) = probs.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(&beam_search(model.as_ref(), &state, 27).unwrap(), mode);
        let g = greedy_action(model.as_ref(), &state).unwrap();
        let p_greedy = probs.iter().find(|(a, _)| *a == g).unwrap().1;
        assert!(p_greedy <= *p_mode);
    }
}

#[test]
fn zeroed_output_layer_gives_uniform_conditionals() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let space = ActionSpace::new(2, 5).unwrap();
    for mut model in models(space, &mut rng) {
        model.zero_output_layer();
        let state = random_state(&mut rng);
        for (_, p) in enumerate_probs(model.as_ref(), &state).unwrap() {
            assert!((p - 1.0 / 25.0).abs() < 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_every_log_prob() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let space = ActionSpace::new(2, 3).unwrap();
    let mut all = models(space, &mut rng);
    all.push(Box::new(SoftmaxTable::<f64>::random(space, 1.0, &mut rng).unwrap()));
    for (i, model) in all.iter().enumerate() {
        let path = dir.path().join(format!("m{i}.ckpt"));
        save_checkpoint(model.as_ref(), 42, &path).unwrap();
        let header = read_header(&path).unwrap();
        assert_eq!((header.kind, header.seed, header.hidden.clone()), (model.kind(), 42, model.hidden()));
        let (_, loaded) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(loaded.params().flat_values(), model.params().flat_values());
        let state: Vec<f64> = if model.kind() == ModelKind::Table { vec![0.0] } else { random_state(&mut rng) };
        assert_eq!(enumerate_probs(loaded.as_ref(), &state).unwrap(), enumerate_probs(model.as_ref(), &state).unwrap());
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = LstmPolicy::<f64>::new(ActionSpace::new(2, 3).unwrap(), STATE_DIM, 4, &mut rng);
    save_checkpoint(&model, 0, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 9);
    std::fs::write(&path, bytes).unwrap();
    assert!(load_checkpoint::<f64>(&path).is_err());
}

#[test]
fn wrong_state_and_invalid_actions_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = LstmPolicy::<f64>::new(ActionSpace::new(2, 3).unwrap(), STATE_DIM, 4, &mut rng);
    let mut tape = Tape::new();
    assert!(matches!(sample(&model, &mut tape, &[0.0], &mut rng), Err(Error::StateDim { expected: 3, got: 1 })));
    let state = random_state(&mut rng);
    assert!(log_prob(&model, &mut tape, &state, &Action::new(vec![0, 3])).is_err());
    assert!(log_prob(&model, &mut tape, &state, &Action::new(vec![0])).is_err());
    assert!(conditional_dist(&model, &mut tape, &state, &[0, 0]).is_err());
}

#[test]
fn single_precision_lstm_samples_valid_actions() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let space = ActionSpace::new(3, 4).unwrap();
    let model = LstmPolicy32::new(space, STATE_DIM, 8, &mut rng);
    let mut tape = Tape::<f32>::new();
    let total: f32 = enumerate_probs(&model, &[0.1f32, -0.2, 0.3]).unwrap().iter().map(|(_, p)| p).sum();
    assert!((total - 1.0).abs() < 1e-5);
    let a = sample(&model, &mut tape, &[0.1f32, -0.2, 0.3], &mut rng).unwrap().action;
    space.validate(&a).unwrap();
}

mod common;

use common::{action, Logits};
use entbonus::diffcore::{HasParams, Tape};
use entbonus::entropy::{
    crude_entropy, crude_entropy_gradient_estimate, exact_entropy, exact_entropy_detailed, exact_entropy_gradient,
    smoothed_entropy, smoothed_mode_entropy, unbiased_entropy_gradient_estimate, EstimatorKind, SoftmaxTable,
    DEFAULT_ENUMERATION_CAP,
};
use entbonus::policy::{sample, trace_action, ActionSpace, PolicyModel};
use entbonus::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STATE: [f64; 1] = [0.0];

fn logits_strategy() -> impl Strategy<Value = Logits> {
    (1usize..=3, 2usize..=4, any::<u64>(), 0.1f64..3.0).prop_map(|(d, k, seed, scale)| {
        Logits::random(d, k, scale, &mut ChaCha8Rng::seed_from_u64(seed))
    })
}

/// Gradient of a tape scalar with respect to every parameter, flattened.
fn flat_grad(table: &SoftmaxTable<f64>, build: impl FnOnce(&mut Tape<f64>) -> entbonus::diffcore::Var) -> Vec<f64> {
    let mut tape = Tape::new();
    let root = build(&mut tape);
    let mut store = table.params().clone();
    store.zero_grad();
    tape.backward(root, &mut store).unwrap();
    store.flat_grad()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_entropy_matches_enumeration(l in logits_strategy()) {
        let table = l.table();
        let mut tape = Tape::new();
        let h = exact_entropy(&mut tape, &table, &STATE).unwrap();
        prop_assert!((tape.scalar(h).unwrap() - l.entropy()).abs() < 1e-12);
    }

    #[test]
    fn smoothed_and_crude_values_match_hand_computation(l in logits_strategy(), pick in any::<u64>()) {
        let table = l.table();
        let actions = l.actions();
        let a = &actions[(pick % actions.len() as u64) as usize];
        let mut tape = Tape::new();
        let trace = trace_action(&table, &mut tape, &STATE, &action(a)).unwrap();
        let smoothed = smoothed_entropy(&mut tape, &trace).unwrap().value;
        let crude = crude_entropy(&mut tape, &trace).unwrap().value;
        prop_assert!((tape.scalar(smoothed).unwrap() - l.smoothed(a)).abs() < 1e-12);
        prop_assert!((tape.scalar(crude).unwrap() + l.prob(a).ln()).abs() < 1e-10);
    }

    /// Both estimators are unbiased: their expectation under the policy,
    /// computed by enumeration rather than sampling, is the entropy.
    #[test]
    fn estimator_expectations_equal_entropy(l in logits_strategy()) {
        let smoothed: f64 = l.actions().iter().map(|a| l.prob(a) * l.smoothed(a)).sum();
        let crude: f64 = l.actions().iter().map(|a| -l.prob(a) * l.prob(a).ln()).sum();
        prop_assert!((smoothed - l.entropy()).abs() < 1e-12);
        prop_assert!((crude - l.entropy()).abs() < 1e-12);
    }

    #[test]
    fn exact_gradient_matches_finite_differences(l in logits_strategy()) {
        let analytic = exact_entropy_gradient(&l.table(), &STATE).unwrap().concat();
        let numeric = l.numeric_gradient(Logits::entropy, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            prop_assert!((a - n).abs() < 1e-6, "analytic {a} numeric {n}");
        }
    }

    /// The single-sample gradient estimators average, under the policy, to
    /// the exact gradient. The expectation is taken by enumeration.
    #[test]
    fn gradient_estimators_are_unbiased_in_expectation(l in logits_strategy()) {
        let table = l.table();
        let exact = exact_entropy_gradient(&table, &STATE).unwrap().concat();
        let mut unbiased = vec![0.0; exact.len()];
        let mut crude = vec![0.0; exact.len()];
        for a in l.actions() {
            let p = l.prob(&a);
            let g = flat_grad(&table, |tape| {
                let trace = trace_action(&table, tape, &STATE, &action(&a)).unwrap();
                unbiased_entropy_gradient_estimate(tape, &trace).unwrap().objective(tape).unwrap()
            });
            let c = flat_grad(&table, |tape| {
                let trace = trace_action(&table, tape, &STATE, &action(&a)).unwrap();
                crude_entropy_gradient_estimate(tape, &trace).unwrap()
            });
            for j in 0..exact.len() {
                unbiased[j] += p * g[j];
                crude[j] += p * c[j];
            }
        }
        for j in 0..exact.len() {
            prop_assert!((unbiased[j] - exact[j]).abs() < 1e-10, "unbiased {} vs {}", unbiased[j], exact[j]);
            prop_assert!((crude[j] - exact[j]).abs() < 1e-10, "crude {} vs {}", crude[j], exact[j]);
        }
    }
}

/// The plain smoothed gradient alone is biased once d > 1; the correction is needed.
#[test]
fn smoothed_gradient_without_correction_is_biased() {
    let l = Logits::random(2, 3, 1.5, &mut ChaCha8Rng::seed_from_u64(7));
    let table = l.table();
    let exact = exact_entropy_gradient(&table, &STATE).unwrap().concat();
    let mut mean = vec![0.0; exact.len()];
    for a in l.actions() {
        let p = l.prob(&a);
        let g = flat_grad(&table, |tape| {
            let trace = trace_action(&table, tape, &STATE, &action(&a)).unwrap();
            smoothed_entropy(tape, &trace).unwrap().value
        });
        mean.iter_mut().zip(&g).for_each(|(m, g)| *m += p * g);
    }
    let gap = mean.iter().zip(&exact).map(|(m, e)| (m - e).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-3, "gap {gap}");
}

#[test]
fn temperature_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (d, k) in [(2, 3), (3, 4)] {
        let space = ActionSpace::new(d, k).unwrap();
        let hot = SoftmaxTable::<f64>::random(space, 1.5, &mut rng).unwrap().with_temperature(1e6);
        let cold = SoftmaxTable::<f64>::random(space, 1.5, &mut rng).unwrap().with_temperature(1e-6);
        for a in space.enumerate() {
            let mut tape = Tape::new();
            let t = trace_action(&hot, &mut tape, &STATE, &a).unwrap();
            let v = smoothed_entropy(&mut tape, &t).unwrap().value;
            let h = tape.scalar(v).unwrap();
            assert!((h - d as f64 * (k as f64).ln()).abs() < 1e-6);
            let t = trace_action(&cold, &mut tape, &STATE, &a).unwrap();
            let v = smoothed_entropy(&mut tape, &t).unwrap().value;
            let h = tape.scalar(v).unwrap();
            assert!(h < 1e-6 && h >= 0.0);
        }
    }
}

#[test]
fn smoothed_mode_uses_the_most_likely_action() {
    let l = Logits { d: 2, k: 2, blocks: vec![vec![2.0, 0.0], vec![0.0, 1.0, -3.0, 0.0]] };
    let table = l.table();
    let mut tape = Tape::new();
    let e = smoothed_mode_entropy(&mut tape, &table, &STATE, 4).unwrap();
    assert_eq!(e.kind, EstimatorKind::SmoothedMode { beam: 4 });
    let best = l.actions().into_iter().max_by(|a, b| l.prob(a).total_cmp(&l.prob(b))).unwrap();
    assert!((tape.scalar(e.value).unwrap() - l.smoothed(&best)).abs() < 1e-12);
}

#[test]
fn sampling_and_smoothing_costs_d_evaluations_exact_costs_the_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (d, k) in [(1, 4), (2, 3), (3, 4), (3, 6)] {
        let table = SoftmaxTable::<f64>::random(ActionSpace::new(d, k).unwrap(), 1.0, &mut rng).unwrap();
        table.counter().reset();
        let mut tape = Tape::new();
        let trace = sample(&table, &mut tape, &STATE, &mut rng).unwrap();
        smoothed_entropy(&mut tape, &trace).unwrap();
        assert_eq!(table.counter().get(), d as u64);

        table.counter().reset();
        let exact = exact_entropy_detailed(&mut tape, &table, &STATE, DEFAULT_ENUMERATION_CAP).unwrap();
        let internal = (0..d as u32).map(|i| (k as u64).pow(i)).sum::<u64>();
        assert_eq!(exact.evaluations, internal);
        assert_eq!(table.counter().get(), internal);
        assert_eq!(exact.leaves, (k as u64).pow(d as u32));
    }
}

#[test]
fn exact_entropy_respects_the_cap() {
    let table = SoftmaxTable::<f64>::uniform(ActionSpace::new(3, 4).unwrap()).unwrap();
    let mut tape = Tape::new();
    let err = exact_entropy_detailed(&mut tape, &table, &STATE, 63).unwrap_err();
    assert!(matches!(err, Error::BudgetExceeded { required: 64, cap: 63 }));
}

#[test]
fn single_precision_agrees_with_double() {
    let l = Logits::random(2, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let blocks32 = l.blocks.iter().map(|b| b.iter().map(|&v| v as f32).collect()).collect();
    let t32 = SoftmaxTable::<f32>::from_logits(ActionSpace::new(2, 4).unwrap(), blocks32).unwrap();
    let mut tape = Tape::<f32>::new();
    let h = exact_entropy(&mut tape, &t32, &[0.0f32]).unwrap();
    assert!((tape.scalar(h).unwrap() as f64 - l.entropy()).abs() < 1e-5);
}

//! Numerical verification suites for the entropy estimators.
//!
//! Each suite returns rows of `estimator,d,k,trials,mc_mean,exact,std_err,pass`.
//! Monte Carlo rows pass when `|mc_mean - exact| <= 3 * std_err`. Deterministic
//! rows (limits, closed forms, beam checks) put the largest absolute deviation
//! in `std_err` and compare it against a fixed tolerance.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{Tape, Var};
use crate::entropy::{
    crude_entropy, crude_entropy_gradient_estimate, enumerate_probs, exact_entropy, exact_entropy_gradient,
    gaussian_smoothed_check, smoothed_entropy, smoothed_mode_entropy, unbiased_entropy_gradient_estimate, SoftmaxTable,
};
use crate::error::{Error, Result};
use crate::policy::{beam_search, sample, trace_action, ActionSpace, LstmPolicy, PolicyModel, SampleTrace};

pub const CSV_HEADER: &str = "estimator,d,k,trials,mc_mean,exact,std_err,pass";
/// Acceptance band in standard errors.
pub const SIGMA_BAND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Unbiasedness,
    Gradient,
    Theorem2,
    Theorem3,
    Beam,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Unbiasedness, Suite::Gradient, Suite::Theorem2, Suite::Theorem3, Suite::Beam];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Unbiasedness => "unbiasedness",
            Suite::Gradient => "gradient",
            Suite::Theorem2 => "theorem2",
            Suite::Theorem3 => "theorem3",
            Suite::Beam => "beam",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite '{s}' (unbiasedness, gradient, theorem2, theorem3, beam)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Reported for comparison only; never fails a suite.
    Info,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Info => "info",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub estimator: String,
    pub d: usize,
    pub k: usize,
    pub trials: usize,
    pub mc_mean: f64,
    pub exact: f64,
    pub std_err: f64,
    pub verdict: Verdict,
    /// Free-form context, not part of the CSV.
    pub note: String,
}

impl CheckRow {
    pub fn failed(&self) -> bool {
        self.verdict == Verdict::Fail
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:?},{:?},{:?},{}",
            self.estimator, self.d, self.k, self.trials, self.mc_mean, self.exact, self.std_err, self.verdict
        )
    }
}

pub fn rows_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Overrides each suite's default number of Monte Carlo trials.
    pub trials: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, trials: None }
    }
}

pub fn run_suite(suite: Suite, opts: VerifyOptions) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    match suite {
        Suite::Unbiasedness => unbiasedness(opts.trials.unwrap_or(50_000), &mut rng),
        Suite::Gradient => gradient(opts.trials.unwrap_or(100_000), &mut rng),
        Suite::Theorem2 => theorem2(opts.trials.unwrap_or(10_000), &mut rng),
        Suite::Theorem3 => theorem3(&mut rng),
        Suite::Beam => beam(&mut rng),
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Default)]
pub struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        (self.variance() / self.n.max(1) as f64).sqrt()
    }
}

fn within_band(mean: f64, exact: f64, se: f64) -> bool {
    (mean - exact).abs() <= SIGMA_BAND * se + 1e-12 * exact.abs().max(1.0)
}

fn mc_row(estimator: &str, space: ActionSpace, m: &Moments, exact: f64, note: String) -> CheckRow {
    CheckRow {
        estimator: estimator.into(),
        d: space.dims(),
        k: space.arity(),
        trials: m.count(),
        mc_mean: m.mean(),
        exact,
        std_err: m.std_err(),
        verdict: if within_band(m.mean(), exact, m.std_err()) { Verdict::Pass } else { Verdict::Fail },
        note,
    }
}

/// The twenty `(d, k)` shapes used by the unbiasedness suite.
pub fn unbiasedness_shapes() -> Vec<ActionSpace> {
    let combos: Vec<(usize, usize)> = [2, 3].iter().flat_map(|&d| [2, 3, 4].map(|k| (d, k))).collect();
    (0..20).map(|i| combos[i % combos.len()]).map(|(d, k)| ActionSpace::new(d, k).expect("valid shape")).collect()
}

fn exact_value(model: &dyn PolicyModel<f64>, state: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let h = exact_entropy(&mut tape, model, state)?;
    tape.scalar(h)
}

/// Crude and smoothed MC means against enumeration on random tables.
pub fn unbiasedness<R: Rng>(samples: usize, rng: &mut R) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (i, space) in unbiasedness_shapes().into_iter().enumerate() {
        let table = SoftmaxTable::<f64>::random(space, 1.5, rng)?;
        let state = [0.0];
        let exact = exact_value(&table, &state)?;
        let (mut crude, mut smoothed) = (Moments::default(), Moments::default());
        let mut tape = Tape::new();
        for _ in 0..samples {
            tape.clear();
            let trace = sample(&table, &mut tape, &state, rng)?;
            let c = crude_entropy(&mut tape, &trace)?.value;
            let s = smoothed_entropy(&mut tape, &trace)?.value;
            crude.push(tape.scalar(c)?);
            smoothed.push(tape.scalar(s)?);
        }
        let note = format!(
            "table {i}: var crude {:.4e}, var smoothed {:.4e}",
            crude.variance(),
            smoothed.variance()
        );
        rows.push(mc_row("crude", space, &crude, exact, note.clone()));
        rows.push(mc_row("smoothed", space, &smoothed, exact, note));
    }
    Ok(rows)
}

/// Per-parameter MC statistics of a single-sample gradient estimator.
#[derive(Debug, Clone)]
pub struct GradientStats {
    pub exact: Vec<f64>,
    pub moments: Vec<Moments>,
}

impl GradientStats {
    /// Parameters whose MC mean lies outside the band.
    pub fn failing(&self) -> Vec<usize> {
        (0..self.exact.len())
            .filter(|&i| !within_band(self.moments[i].mean(), self.exact[i], self.moments[i].std_err()))
            .collect()
    }

    /// Index of the parameter with the largest deviation in standard errors.
    pub fn worst(&self) -> usize {
        let z = |i: usize| {
            let (m, se) = (&self.moments[i], self.moments[i].std_err());
            let dev = (m.mean() - self.exact[i]).abs();
            if se > 0.0 {
                dev / se
            } else if dev > 1e-12 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        (0..self.exact.len()).max_by(|&a, &b| z(a).total_cmp(&z(b))).unwrap_or(0)
    }
}

/// Which single-sample surrogate to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientEstimator {
    /// Smoothed entropy plus the score-function correction.
    Unbiased,
    /// `-log p(a) * grad log p(a)`.
    Crude,
    /// Smoothed entropy alone: biased, reported to expose the correction.
    SmoothedOnly,
}

impl GradientEstimator {
    fn surrogate(self, tape: &mut Tape<f64>, trace: &SampleTrace) -> Result<Var> {
        match self {
            GradientEstimator::Unbiased => unbiased_entropy_gradient_estimate(tape, trace)?.objective(tape),
            GradientEstimator::Crude => crude_entropy_gradient_estimate(tape, trace),
            GradientEstimator::SmoothedOnly => Ok(smoothed_entropy(tape, trace)?.value),
        }
    }

    fn label(self) -> &'static str {
        match self {
            GradientEstimator::Unbiased => "unbiased_gradient",
            GradientEstimator::Crude => "crude_gradient",
            GradientEstimator::SmoothedOnly => "smoothed_gradient_uncorrected",
        }
    }
}

/// MC statistics of `estimators` over the same `samples` draws, against the
/// enumeration gradient.
pub fn gradient_stats<M, R>(
    model: &mut M,
    state: &[f64],
    estimators: &[GradientEstimator],
    samples: usize,
    rng: &mut R,
) -> Result<Vec<GradientStats>>
where
    M: PolicyModel<f64> + ?Sized,
    R: Rng,
{
    let exact: Vec<f64> = exact_entropy_gradient(&*model, state)?.into_iter().flatten().collect();
    let mut stats: Vec<GradientStats> = estimators
        .iter()
        .map(|_| GradientStats { exact: exact.clone(), moments: vec![Moments::default(); exact.len()] })
        .collect();
    let mut tape = Tape::new();
    for _ in 0..samples {
        tape.clear();
        let drawn = sample(&*model, &mut tape, state, rng)?.action;
        for (est, st) in estimators.iter().zip(&mut stats) {
            tape.clear();
            let trace = trace_action(&*model, &mut tape, state, &drawn)?;
            let root = est.surrogate(&mut tape, &trace)?;
            model.params_mut().zero_grad();
            tape.backward(root, model.params_mut())?;
            for (m, g) in st.moments.iter_mut().zip(model.params().flat_grad()) {
                m.push(g);
            }
        }
    }
    model.params_mut().zero_grad();
    Ok(stats)
}

fn gradient_rows(label: &str, space: ActionSpace, est: GradientEstimator, st: &GradientStats) -> CheckRow {
    let w = st.worst();
    let failing = st.failing();
    let verdict = match est {
        GradientEstimator::SmoothedOnly => Verdict::Info,
        _ if failing.is_empty() => Verdict::Pass,
        _ => Verdict::Fail,
    };
    CheckRow {
        estimator: est.label().into(),
        d: space.dims(),
        k: space.arity(),
        trials: st.moments[w].count(),
        mc_mean: st.moments[w].mean(),
        exact: st.exact[w],
        std_err: st.moments[w].std_err(),
        verdict,
        note: format!("{label}: worst of {} parameters is #{w}; {} outside the band", st.exact.len(), failing.len()),
    }
}

/// The five small models of the gradient suite with their states.
pub fn gradient_models<R: Rng>(rng: &mut R) -> Result<Vec<(String, Box<dyn PolicyModel<f64> + Send>, Vec<f64>)>> {
    let space = ActionSpace::new(2, 3)?;
    let mut out: Vec<(String, Box<dyn PolicyModel<f64> + Send>, Vec<f64>)> = Vec::new();
    for i in 0..5 {
        if i % 2 == 0 {
            out.push((format!("table{i}"), Box::new(SoftmaxTable::random(space, 1.0, rng)?), vec![0.0]));
        } else {
            let state: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            out.push((format!("lstm{i}"), Box::new(LstmPolicy::new(space, 2, 3, rng)), state));
        }
    }
    Ok(out)
}

pub fn gradient<R: Rng>(samples: usize, rng: &mut R) -> Result<Vec<CheckRow>> {
    let estimators = [GradientEstimator::Unbiased, GradientEstimator::Crude, GradientEstimator::SmoothedOnly];
    let mut rows = Vec::new();
    for (label, mut model, state) in gradient_models(rng)? {
        let space = model.action_space();
        let stats = gradient_stats(&mut *model, &state, &estimators, samples, rng)?;
        for (est, st) in estimators.iter().zip(&stats) {
            rows.push(gradient_rows(&label, space, *est, st));
        }
    }
    Ok(rows)
}

pub const THEOREM2_TOLERANCE: f64 = 1e-10;
pub const THEOREM2_COV: [[f64; 2]; 2] = [[2.0, 0.6], [0.6, 1.0]];

pub fn theorem2<R: Rng>(samples: usize, rng: &mut R) -> Result<Vec<CheckRow>> {
    let r = gaussian_smoothed_check([0.0, 0.0], THEOREM2_COV, samples, rng)?;
    Ok(vec![CheckRow {
        estimator: "gaussian_smoothed".into(),
        d: 2,
        k: 0,
        trials: r.samples,
        mc_mean: r.smoothed_first,
        exact: r.exact,
        std_err: r.max_deviation,
        verdict: if r.max_deviation < THEOREM2_TOLERANCE { Verdict::Pass } else { Verdict::Fail },
        note: "std_err holds the max |smoothed - exact| over samples".into(),
    }])
}

pub const THEOREM3_TOLERANCE: f64 = 1e-6;
pub const HOT: f64 = 1e6;
pub const COLD: f64 = 1e-6;

/// Smoothed entropy of every action of `model`, in lexicographic order.
pub fn smoothed_all_actions(model: &dyn PolicyModel<f64>, state: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut out = Vec::new();
    for a in model.action_space().enumerate() {
        tape.clear();
        let trace = trace_action(model, &mut tape, state, &a)?;
        let h = smoothed_entropy(&mut tape, &trace)?.value;
        out.push(tape.scalar(h)?);
    }
    Ok(out)
}

fn limit_row(estimator: String, space: ActionSpace, values: &[f64], target: f64) -> CheckRow {
    let dev = values.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    CheckRow {
        estimator,
        d: space.dims(),
        k: space.arity(),
        trials: values.len(),
        mc_mean: mean,
        exact: target,
        std_err: dev,
        verdict: if dev < THEOREM3_TOLERANCE { Verdict::Pass } else { Verdict::Fail },
        note: "std_err holds the max deviation from the limit".into(),
    }
}

/// Temperature limits of the smoothed (every action) and smoothed-mode estimators.
pub fn theorem3<R: Rng>(rng: &mut R) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (d, k) in [(2, 2), (2, 3), (3, 3), (3, 4)] {
        let space = ActionSpace::new(d, k)?;
        let base = SoftmaxTable::<f64>::random(space, 1.0, rng)?;
        for (name, t, target) in [("hot", HOT, d as f64 * (k as f64).ln()), ("cold", COLD, 0.0)] {
            let table = base.clone().with_temperature(t);
            let values = smoothed_all_actions(&table, &[0.0])?;
            rows.push(limit_row(format!("smoothed@{name}"), space, &values, target));
            let mut tape = Tape::new();
            let mode = smoothed_mode_entropy(&mut tape, &table, &[0.0], k)?.value;
            rows.push(limit_row(format!("smoothed_mode@{name}"), space, &[tape.scalar(mode)?], target));
        }
    }
    Ok(rows)
}

/// Zero variance of the smoothed-mode estimator and exactness of a full-width beam.
pub fn beam<R: Rng>(rng: &mut R) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (d, k) in [(2, 3), (3, 3), (3, 4)] {
        let space = ActionSpace::new(d, k)?;
        let table = SoftmaxTable::<f64>::random(space, 2.0, rng)?;
        let state = [0.0];

        let repeats: Vec<f64> = (0..10)
            .map(|_| {
                let mut tape = Tape::new();
                let v = smoothed_mode_entropy(&mut tape, &table, &state, 2)?.value;
                tape.scalar(v)
            })
            .collect::<Result<_>>()?;
        let spread = repeats.iter().map(|v| (v - repeats[0]).abs()).fold(0.0, f64::max);
        rows.push(CheckRow {
            estimator: "smoothed_mode_repeat".into(),
            d,
            k,
            trials: repeats.len(),
            mc_mean: repeats[0],
            exact: repeats[0],
            std_err: spread,
            verdict: if spread == 0.0 { Verdict::Pass } else { Verdict::Fail },
            note: "std_err holds the spread across repeated calls".into(),
        });

        let probs = enumerate_probs(&table, &state)?;
        let (best, p_best) = probs.iter().fold((None, f64::NEG_INFINITY), |acc, (a, p)| if *p > acc.1 { (Some(a), *p) } else { acc });
        let full = beam_search(&table, &state, k.pow(d as u32 - 1))?;
        let p_full = probs.iter().find(|(a, _)| *a == full).map(|(_, p)| *p).unwrap_or(0.0);
        rows.push(CheckRow {
            estimator: "beam_full_width".into(),
            d,
            k,
            trials: 1,
            mc_mean: p_full,
            exact: p_best,
            std_err: (p_full - p_best).abs(),
            verdict: if Some(&full) == best { Verdict::Pass } else { Verdict::Fail },
            note: format!("beam {full} vs argmax {}", best.map(|a| a.to_string()).unwrap_or_default()),
        });

        let greedy = beam_search(&table, &state, 1)?;
        let p_greedy = probs.iter().find(|(a, _)| *a == greedy).map(|(_, p)| *p).unwrap_or(0.0);
        rows.push(CheckRow {
            estimator: "greedy_vs_argmax".into(),
            d,
            k,
            trials: 1,
            mc_mean: p_greedy,
            exact: p_best,
            std_err: p_best - p_greedy,
            verdict: if p_greedy <= p_best + 1e-15 { Verdict::Pass } else { Verdict::Fail },
            note: String::new(),
        });
    }
    Ok(rows)
}

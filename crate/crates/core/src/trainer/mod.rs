//! REINFORCE with a baseline and a pluggable entropy bonus.
//!
//! Per episode the policy is rolled out on a scratch tape, then every step is
//! rebuilt and differentiated one at a time, so memory stays bounded by a
//! single decision however long the episode runs. Gradients of
//! `sum_t log p(a_t|s_t) * (R_t - b(s_t)) + beta * E_t` accumulate across the
//! steps, are clipped elementwise and applied with one optimizer step.

mod baseline;
mod config;
mod optim;

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{ParamStore, Tape};
use crate::entropy::{estimate, EstimatorKind};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::policy::{beam_search_trace, sample, trace_action, Action, CheckpointHeader, PolicyModel, SampleTrace};
use crate::scalar::Scalar;

pub use baseline::{first_visit_pairs, Baseline, BaselineKind, MovingAverage, ValueNet, MOVING_AVERAGE_WINDOW, VALUE_NET_HIDDEN};
pub use config::{
    default_baseline, default_entropy_weight, default_hidden, default_learning_rate, EnvConfig, EnvKind, TrainConfig,
    DEFAULT_BASELINE_LR, DEFAULT_CLIP, DEFAULT_DISCOUNT, DEFAULT_EVAL_EPISODES, DEFAULT_EVAL_SEED,
};
pub use optim::{clip_gradients, gradients_finite, Optimizer, OptimizerKind, ADAM_BETAS, EPSILON, RMSPROP_DECAY};

// Independent ChaCha streams derived from the run seed.
const ENV_STREAM: u64 = 1;
const POLICY_STREAM: u64 = 2;
const BASELINE_STREAM: u64 = 3;

pub const CURVE_HEADER: &str = "episode,length,reward_raw,reward_discounted,entropy_mean,wallclock_ms";

/// `R_t = r_t + gamma * R_{t+1}`, with `R` of the last step equal to its reward.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Steps of one finished episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Result of one policy update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    /// Mean over steps of the estimator's logged value (smoothed entropy for `none`).
    pub entropy_mean: f64,
    /// False when the gradient was non-finite and the update was skipped.
    pub applied: bool,
}

/// Registers every parameter up front so later rewinds keep them.
fn register_params<S: Scalar>(tape: &mut Tape<S>, store: &ParamStore<S>) -> usize {
    tape.clear();
    for id in store.ids() {
        tape.param(store, id);
    }
    tape.mark()
}

fn to_scalars<S: Scalar>(state: &[f64]) -> Vec<S> {
    state.iter().map(|&v| S::lit(v)).collect()
}

/// Smoothed entropy of a trace computed from recorded values, off the tape.
fn smoothed_value<S: Scalar>(tape: &Tape<S>, trace: &SampleTrace) -> Result<f64> {
    let mut h = 0.0;
    for (&p, &lp) in trace.cond_dists.iter().zip(&trace.cond_log_dists) {
        for (p, lp) in tape.value(p)?.iter().zip(tape.value(lp)?) {
            h -= p.as_f64() * lp.as_f64();
        }
    }
    Ok(h)
}

/// Accumulates the gradient of the negated objective into the model's
/// parameters, clips it elementwise to `[-clip, clip]` and applies one
/// optimizer step. `advantages[t]` is treated as a constant.
#[allow(clippy::too_many_arguments)]
pub fn policy_gradient_step<S: Scalar>(
    model: &mut dyn PolicyModel<S>,
    tape: &mut Tape<S>,
    trajectory: &Trajectory,
    advantages: &[f64],
    estimator: EstimatorKind,
    beta: f64,
    clip: f64,
    optimizer: &mut Optimizer<S>,
) -> Result<UpdateReport> {
    if advantages.len() != trajectory.len() {
        return Err(Error::InvalidArgument(format!(
            "{} advantages for {} steps",
            advantages.len(),
            trajectory.len()
        )));
    }
    model.params_mut().zero_grad();
    let mark = register_params(tape, model.params());
    let mut logged = 0.0;
    for ((state, action), &adv) in trajectory.states.iter().zip(&trajectory.actions).zip(advantages) {
        tape.rewind(mark);
        let s = to_scalars::<S>(state);
        let trace = trace_action(&*model, tape, &s, action)?;
        let lp = trace.log_prob(tape)?;
        let mut objective = tape.scale(lp, S::lit(adv))?;
        match estimate(estimator, tape, &*model, &s, &trace)? {
            Some(e) => {
                logged += tape.scalar(e.value)?.as_f64();
                let bonus = e.objective(tape)?;
                let bonus = tape.scale(bonus, S::lit(beta))?;
                objective = tape.add(objective, bonus)?;
            }
            // logged from values only: no entropy nodes enter the tape
            None => logged += smoothed_value(tape, &trace)?,
        }
        let loss = tape.neg(objective)?;
        tape.backward(loss, model.params_mut())?;
    }
    let entropy_mean = if trajectory.is_empty() { 0.0 } else { logged / trajectory.len() as f64 };
    let store = model.params_mut();
    if !gradients_finite(store) {
        store.zero_grad();
        return Ok(UpdateReport { entropy_mean, applied: false });
    }
    clip_gradients(store, clip);
    optimizer.step(store);
    store.zero_grad();
    Ok(UpdateReport { entropy_mean, applied: true })
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub length: usize,
    pub reward_raw: f64,
    /// `sum_t gamma^t r_t`, discounted from the start of the episode.
    pub reward_discounted: f64,
    pub entropy_mean: f64,
    /// Bandit only: whether the executed action was the bonus configuration.
    pub optimal: Option<bool>,
    pub wallclock_ms: u64,
}

/// Learning curve as CSV with [`CURVE_HEADER`].
pub fn curve_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::with_capacity(48 * (records.len() + 1));
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.episode, r.length, r.reward_raw, r.reward_discounted, r.entropy_mean, r.wallclock_ms
        );
    }
    out
}

/// Rolls out `model` for one episode; `greedy` decodes with beam width 1.
fn rollout<S: Scalar, R: rand::Rng>(
    model: &dyn PolicyModel<S>,
    env: &mut dyn Environment,
    tape: &mut Tape<S>,
    env_rng: &mut R,
    policy_rng: &mut R,
    greedy: bool,
) -> Result<(Trajectory, f64, Option<bool>)> {
    let mut traj = Trajectory::default();
    let mut state = env.reset(env_rng);
    let reset_reward = env.reset_reward();
    let mut optimal = None;
    let mark = register_params(tape, model.params());
    while !env.is_done() {
        tape.rewind(mark);
        let s = to_scalars::<S>(&state);
        let trace = if greedy { beam_search_trace(model, tape, &s, 1)? } else { sample(model, tape, &s, policy_rng)? };
        let step = env.step(&trace.action, env_rng)?;
        if let Some(o) = env.is_optimal_config(&trace.action) {
            optimal = Some(o);
        }
        traj.states.push(std::mem::replace(&mut state, step.state));
        traj.actions.push(trace.action);
        traj.rewards.push(step.reward);
    }
    Ok((traj, reset_reward, optimal))
}

fn episode_rewards(traj: &Trajectory, reset_reward: f64, gamma: f64) -> (f64, f64) {
    let mut raw = reset_reward;
    let mut discounted = reset_reward;
    let mut w = 1.0;
    for &r in &traj.rewards {
        raw += r;
        discounted += w * r;
        w *= gamma;
    }
    (raw, discounted)
}

/// Stateful training loop; [`train`] drives it to completion.
pub struct Trainer<S: Scalar> {
    config: TrainConfig,
    model: Box<dyn PolicyModel<S> + Send>,
    env: Box<dyn Environment + Send>,
    baseline: Baseline<S>,
    optimizer: Optimizer<S>,
    env_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    tape: Tape<S>,
    episode: usize,
    discarded: usize,
    started: Instant,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = config.env.build()?;
        let header = CheckpointHeader {
            kind: config.model,
            space: env.action_space(),
            state_dim: env.state_dim(),
            hidden: config.hidden.clone(),
            seed: config.seed,
        };
        let model = header.build::<S>()?;
        let stream = |n: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(n);
            rng
        };
        let baseline = Baseline::new(config.baseline, env.state_dim(), config.baseline_lr, &mut stream(BASELINE_STREAM))?;
        Ok(Self {
            optimizer: Optimizer::new(config.optimizer, config.learning_rate)?,
            env_rng: stream(ENV_STREAM),
            policy_rng: stream(POLICY_STREAM),
            config,
            model,
            env,
            baseline,
            tape: Tape::new(),
            episode: 0,
            discarded: 0,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &(dyn PolicyModel<S> + Send) {
        &*self.model
    }

    pub fn into_model(self) -> Box<dyn PolicyModel<S> + Send> {
        self.model
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    /// Episodes whose update was skipped because of a non-finite gradient.
    pub fn discarded(&self) -> usize {
        self.discarded
    }

    /// Runs and learns from one episode.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        let gamma = self.config.discount;
        let (traj, reset_reward, optimal) = rollout(
            &*self.model,
            &mut *self.env,
            &mut self.tape,
            &mut self.env_rng,
            &mut self.policy_rng,
            false,
        )?;
        let (reward_raw, reward_discounted) = episode_rewards(&traj, reset_reward, gamma);
        let mut entropy_mean = 0.0;
        if !traj.is_empty() {
            let returns = compute_returns(&traj.rewards, gamma);
            let baseline = self.baseline.values(&traj.states)?;
            let advantages: Vec<f64> = returns.iter().zip(&baseline).map(|(r, b)| r - b).collect();
            let report = policy_gradient_step(
                &mut *self.model,
                &mut self.tape,
                &traj,
                &advantages,
                self.config.estimator,
                self.config.entropy_weight,
                self.config.clip,
                &mut self.optimizer,
            )?;
            if !report.applied {
                self.discarded += 1;
                log::warn!("episode {}: non-finite gradient, update skipped", self.episode);
            }
            entropy_mean = report.entropy_mean;
            self.baseline.update(&traj.states, &returns, reward_raw)?;
        }
        let record = EpisodeRecord {
            episode: self.episode,
            length: traj.len(),
            reward_raw,
            reward_discounted,
            entropy_mean,
            optimal,
            wallclock_ms: if self.config.record_wallclock { self.started.elapsed().as_millis() as u64 } else { 0 },
        };
        self.episode += 1;
        Ok(record)
    }
}

/// Outcome of a complete training run.
pub struct TrainOutcome<S: Scalar> {
    pub records: Vec<EpisodeRecord>,
    pub model: Box<dyn PolicyModel<S> + Send>,
    pub discarded: usize,
}

pub fn train<S: Scalar>(config: &TrainConfig) -> Result<TrainOutcome<S>> {
    train_with(config, |_| {})
}

/// Like [`train`], calling `on_episode` after every episode.
pub fn train_with<S: Scalar>(config: &TrainConfig, mut on_episode: impl FnMut(&EpisodeRecord)) -> Result<TrainOutcome<S>> {
    let mut trainer = Trainer::<S>::new(config.clone())?;
    let mut records = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        let r = trainer.run_episode()?;
        on_episode(&r);
        records.push(r);
    }
    let discarded = trainer.discarded();
    Ok(TrainOutcome { records, model: trainer.into_model(), discarded })
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_length: f64,
    pub std_length: f64,
    pub median_length: f64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_discounted: f64,
    pub std_discounted: f64,
    /// Percentage of episodes whose action was the bonus configuration (bandit).
    pub optimal_pct: Option<f64>,
}

/// Runs `episodes` evaluation episodes without learning.
pub fn evaluate<S: Scalar>(
    model: &dyn PolicyModel<S>,
    env: &mut dyn Environment,
    episodes: usize,
    discount: f64,
    seed: u64,
    greedy: bool,
) -> Result<EvalReport> {
    if model.action_space() != env.action_space() || model.state_dim() != env.state_dim() {
        return Err(Error::Config(format!(
            "model expects {} actions of arity {} from a {}-dim state; environment has {} of arity {} and a {}-dim state",
            model.action_space().dims(),
            model.action_space().arity(),
            model.state_dim(),
            env.action_space().dims(),
            env.action_space().arity(),
            env.state_dim()
        )));
    }
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(ENV_STREAM);
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
    policy_rng.set_stream(POLICY_STREAM);
    let mut tape = Tape::new();
    let (mut lengths, mut raw, mut disc) = (Vec::new(), Vec::new(), Vec::new());
    let mut optimal = 0usize;
    let mut has_optimal = false;
    for _ in 0..episodes {
        let (traj, reset_reward, opt) = rollout(model, env, &mut tape, &mut env_rng, &mut policy_rng, greedy)?;
        let (r, d) = episode_rewards(&traj, reset_reward, discount);
        lengths.push(traj.len() as f64);
        raw.push(r);
        disc.push(d);
        if let Some(o) = opt {
            has_optimal = true;
            optimal += o as usize;
        }
    }
    let (mean_length, std_length) = mean_std(&lengths);
    let (mean_reward, std_reward) = mean_std(&raw);
    let (mean_discounted, std_discounted) = mean_std(&disc);
    Ok(EvalReport {
        episodes,
        mean_length,
        std_length,
        median_length: median(&lengths),
        mean_reward,
        std_reward,
        mean_discounted,
        std_discounted,
        optimal_pct: has_optimal.then(|| 100.0 * optimal as f64 / episodes as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::BanditConfig;
    use crate::policy::ModelKind;

    #[test]
    fn returns_match_hand_computation() {
        assert_eq!(compute_returns(&[1.0, 0.0, 0.0], 0.8), vec![1.0, 0.0, 0.0]);
        let r = compute_returns(&[0.0, 0.0, 1.0], 0.8);
        for (a, b) in r.iter().zip([0.64, 0.8, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(compute_returns(&[1.0; 5], 1.0), vec![5.0, 4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn discounted_reward_counts_from_episode_start() {
        let traj = Trajectory { states: vec![vec![0.0]; 3], actions: vec![Action::new(vec![0]); 3], rewards: vec![0.0, 0.0, 1.0] };
        let (raw, disc) = episode_rewards(&traj, 1.0, 0.5);
        assert_eq!(raw, 2.0);
        assert_eq!(disc, 1.25);
    }

    #[test]
    fn zero_episodes_gives_empty_curve() {
        let mut cfg = TrainConfig::new(EnvConfig::Bandit(BanditConfig::default()), ModelKind::Lstm, EstimatorKind::Smoothed);
        cfg.episodes = 0;
        let out = train::<f64>(&cfg).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(curve_csv(&out.records), format!("{CURVE_HEADER}\n"));
    }

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}

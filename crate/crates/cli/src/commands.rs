use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use entbonus::io::write_atomic;
use entbonus::policy::{load_checkpoint, save_checkpoint};
use entbonus::trainer::{curve_csv, evaluate as run_eval, mean_std, train_with, EvalReport, TrainConfig};
use entbonus::verify::{rows_csv, run_suite, Suite, VerifyOptions};
use rayon::prelude::*;

use crate::config::{Overrides, RunConfig, DEFAULT_OUTPUT_DIR, OUTPUT_ENV_VAR};
use crate::CliError;

/// Training episodes averaged for the end-of-training statistics.
const FINAL_WINDOW: usize = 500;

pub struct TrainRequest {
    pub config: PathBuf,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub overrides: Overrides,
}

/// What one seed produced, after its files are on disk.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub eval: EvalReport,
    pub final_reward: f64,
    pub final_optimal_pct: Option<f64>,
    pub discarded: usize,
}

/// `--out`, then `$ENTROPY_PG_OUT`, then `[output] dir`, then `runs`.
pub fn output_dir(flag: Option<&Path>, configured: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(v) = std::env::var_os(OUTPUT_ENV_VAR).filter(|v| !v.is_empty()) {
        return PathBuf::from(v);
    }
    configured.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn run_seed(base: &TrainConfig, seed: u64, dir: &Path) -> Result<SeedResult, CliError> {
    let config = TrainConfig { seed, ..base.clone() };
    let every = (config.episodes / 10).max(1);
    let outcome = train_with::<f64>(&config, |r| {
        if (r.episode + 1) % every == 0 {
            log::info!("seed {seed}: episode {}/{} length {} reward {:.3}", r.episode + 1, config.episodes, r.length, r.reward_raw);
        }
    })?;
    write(&dir.join(format!("curve_seed{seed}.csv")), &curve_csv(&outcome.records))?;
    save_checkpoint(&*outcome.model, seed, &dir.join(format!("checkpoint_seed{seed}.ckpt")))?;

    let mut env = config.env.build()?;
    let eval = run_eval(&*outcome.model, env.as_mut(), config.eval_episodes, config.discount, config.eval_seed, config.eval_greedy)?;
    write(&dir.join(format!("eval_seed{seed}.txt")), &eval_text(&eval))?;

    let tail = &outcome.records[outcome.records.len().saturating_sub(FINAL_WINDOW)..];
    let final_reward = mean_std(&tail.iter().map(|r| r.reward_raw).collect::<Vec<_>>()).0;
    let flags: Vec<bool> = tail.iter().filter_map(|r| r.optimal).collect();
    let final_optimal_pct =
        (!flags.is_empty()).then(|| 100.0 * flags.iter().filter(|&&o| o).count() as f64 / flags.len() as f64);
    log::info!("seed {seed}: done, eval mean length {:.2}, mean reward {:.3}", eval.mean_length, eval.mean_reward);
    Ok(SeedResult { seed, eval, final_reward, final_optimal_pct, discarded: outcome.discarded })
}

fn eval_text(e: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "episodes={}", e.episodes);
    let _ = writeln!(s, "mean_length={}", e.mean_length);
    let _ = writeln!(s, "std_length={}", e.std_length);
    let _ = writeln!(s, "median_length={}", e.median_length);
    let _ = writeln!(s, "mean_reward={}", e.mean_reward);
    let _ = writeln!(s, "std_reward={}", e.std_reward);
    let _ = writeln!(s, "mean_discounted={}", e.mean_discounted);
    let _ = writeln!(s, "std_discounted={}", e.std_discounted);
    if let Some(p) = e.optimal_pct {
        let _ = writeln!(s, "optimal_pct={p}");
    }
    s
}

/// Runs every seed, at most `jobs` at a time; results come back in seed order.
pub fn train_seeds(config: &TrainConfig, seeds: &[u64], jobs: usize, dir: &Path) -> Result<Vec<SeedResult>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    let results: Vec<Result<SeedResult, CliError>> =
        pool.install(|| seeds.par_iter().map(|&s| run_seed(config, s, dir)).collect());
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    write(&dir.join("summary.txt"), &summary_text(config, &results))?;
    Ok(results)
}

fn stat(values: impl Iterator<Item = f64>) -> String {
    let v: Vec<f64> = values.collect();
    let (m, s) = mean_std(&v);
    format!("{m} ± {s}")
}

pub fn summary_text(config: &TrainConfig, results: &[SeedResult]) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = results.iter().map(|r| r.seed.to_string()).collect();
    let _ = writeln!(s, "seeds={}", seeds.join(","));
    let _ = writeln!(s, "model={}", config.model);
    let _ = writeln!(s, "hidden={:?}", config.hidden);
    let _ = writeln!(s, "estimator={}", config.estimator);
    let _ = writeln!(s, "entropy_weight={}", config.entropy_weight);
    let _ = writeln!(s, "learning_rate={}", config.learning_rate);
    let _ = writeln!(s, "optimizer={}", config.optimizer);
    let _ = writeln!(s, "baseline={}", config.baseline);
    let _ = writeln!(s, "episodes={}", config.episodes);
    let _ = writeln!(s, "eval_episodes={}", config.eval_episodes);
    let _ = writeln!(s, "eval_mean_length={}", stat(results.iter().map(|r| r.eval.mean_length)));
    let _ = writeln!(s, "eval_median_length={}", stat(results.iter().map(|r| r.eval.median_length)));
    let _ = writeln!(s, "eval_mean_reward={}", stat(results.iter().map(|r| r.eval.mean_reward)));
    let _ = writeln!(s, "eval_mean_discounted={}", stat(results.iter().map(|r| r.eval.mean_discounted)));
    if results.iter().all(|r| r.eval.optimal_pct.is_some()) && !results.is_empty() {
        let _ = writeln!(s, "eval_optimal_pct={}", stat(results.iter().filter_map(|r| r.eval.optimal_pct)));
    }
    let _ = writeln!(s, "final_reward={}", stat(results.iter().map(|r| r.final_reward)));
    if results.iter().all(|r| r.final_optimal_pct.is_some()) && !results.is_empty() {
        let _ = writeln!(s, "final_optimal_pct={}", stat(results.iter().filter_map(|r| r.final_optimal_pct)));
    }
    let _ = writeln!(s, "discarded_updates={}", results.iter().map(|r| r.discarded).sum::<usize>());
    s
}

pub fn train(req: &TrainRequest) -> Result<Vec<SeedResult>, CliError> {
    let resolved = RunConfig::load(&req.config)?.resolve(&req.overrides)?;
    let dir = output_dir(req.out.as_deref(), resolved.output_dir.as_deref());
    log::info!(
        "training {} / {} on {} seed(s) into {}",
        resolved.train.model,
        resolved.train.estimator,
        resolved.seeds.len(),
        dir.display()
    );
    train_seeds(&resolved.train, &resolved.seeds, req.jobs, &dir)
}

pub fn evaluate(checkpoint: &Path, config: &Path, episodes: Option<usize>, greedy: bool, seed: Option<u64>) -> Result<(), CliError> {
    let run = RunConfig::load(config)?;
    let (env_config, discount) = run.env()?;
    let (header, model) = load_checkpoint::<f64>(checkpoint)
        .map_err(|e| CliError::Config(format!("{}: {e}", checkpoint.display())))?;
    let t = run.train_section();
    let episodes = episodes.or(t.eval_episodes).unwrap_or(entbonus::trainer::DEFAULT_EVAL_EPISODES);
    let seed = seed.or(t.eval_seed).unwrap_or(entbonus::trainer::DEFAULT_EVAL_SEED);
    let greedy = greedy || t.eval_greedy.unwrap_or(false);
    let mut env = env_config.build()?;
    let report = run_eval(&*model, env.as_mut(), episodes, discount, seed, greedy)
        .map_err(|e| CliError::Config(format!("{} does not fit {}: {e}", checkpoint.display(), config.display())))?;
    println!("checkpoint  {} ({} {:?}, trained with seed {})", checkpoint.display(), header.kind, header.hidden, header.seed);
    println!("episodes    {} ({})", report.episodes, if greedy { "greedy" } else { "sampled" });
    println!("length      {:.3} ± {:.3} (median {})", report.mean_length, report.std_length, report.median_length);
    println!("reward      {:.4} ± {:.4}", report.mean_reward, report.std_reward);
    println!("discounted  {:.4} ± {:.4}", report.mean_discounted, report.std_discounted);
    if let Some(p) = report.optimal_pct {
        println!("optimal     {p:.2}%");
    }
    Ok(())
}

pub fn verify(suites: &[Suite], seed: u64, trials: Option<usize>, out: Option<&Path>) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &suite in suites {
        log::info!("running {suite}");
        rows.extend(run_suite(suite, VerifyOptions { seed, trials })?);
    }
    let csv = rows_csv(&rows);
    print!("{csv}");
    if let Some(path) = out {
        write(path, &csv)?;
    }
    let failed: Vec<_> = rows.iter().filter(|r| r.failed()).collect();
    eprintln!("{} checks, {} failed", rows.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!("{} of {} checks failed", failed.len(), rows.len())))
    }
}

/// Grid over entropy weights and learning rates; an empty list keeps the configured value.
pub fn sweep(req: &TrainRequest, betas: &[f64], lrs: &[f64]) -> Result<(), CliError> {
    let resolved = RunConfig::load(&req.config)?.resolve(&req.overrides)?;
    let root = output_dir(req.out.as_deref(), resolved.output_dir.as_deref());
    let betas = if betas.is_empty() { vec![resolved.train.entropy_weight] } else { betas.to_vec() };
    let lrs = if lrs.is_empty() { vec![resolved.train.learning_rate] } else { lrs.to_vec() };
    let mut csv = String::from("entropy_weight,learning_rate,dir,eval_mean_length,eval_mean_length_std,eval_mean_reward,eval_mean_reward_std,eval_optimal_pct\n");
    for &beta in &betas {
        for &lr in &lrs {
            let config = TrainConfig { entropy_weight: beta, learning_rate: lr, ..resolved.train.clone() };
            config.validate()?;
            let name = format!("beta{beta}_lr{lr}");
            log::info!("sweep point {name}");
            let results = train_seeds(&config, &resolved.seeds, req.jobs, &root.join(&name))?;
            let (len_m, len_s) = mean_std(&results.iter().map(|r| r.eval.mean_length).collect::<Vec<_>>());
            let (rew_m, rew_s) = mean_std(&results.iter().map(|r| r.eval.mean_reward).collect::<Vec<_>>());
            let opt: Vec<f64> = results.iter().filter_map(|r| r.eval.optimal_pct).collect();
            let opt = if opt.is_empty() { String::new() } else { mean_std(&opt).0.to_string() };
            let _ = writeln!(csv, "{beta},{lr},{name},{len_m},{len_s},{rew_m},{rew_s},{opt}");
        }
    }
    write(&root.join("sweep.csv"), &csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_configured_dir() {
        let d = output_dir(Some(Path::new("a")), Some(Path::new("b")));
        assert_eq!(d, PathBuf::from("a"));
    }
}

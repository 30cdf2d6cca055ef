//! Run configuration files.
//!
//! A run file is TOML with five sections. Only `[env]` is required; every
//! other value falls back to the defaults for the chosen model, estimator and
//! environment (see `entbonus defaults`). Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use entbonus::entropy::{EstimatorKind, DEFAULT_ENUMERATION_CAP};
use entbonus::envs::{BanditConfig, HuntersConfig};
use entbonus::policy::ModelKind;
use entbonus::trainer::{
    default_baseline, default_entropy_weight, default_hidden, default_learning_rate, BaselineKind, EnvConfig, EnvKind,
    OptimizerKind, TrainConfig, DEFAULT_BASELINE_LR, DEFAULT_CLIP, DEFAULT_DISCOUNT, DEFAULT_EVAL_EPISODES,
    DEFAULT_EVAL_SEED, MOVING_AVERAGE_WINDOW, VALUE_NET_HIDDEN,
};
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_OUTPUT_DIR: &str = "runs";
pub const OUTPUT_ENV_VAR: &str = "ENTROPY_PG_OUT";
pub const DEFAULT_MODEL: ModelKind = ModelKind::Lstm;
pub const DEFAULT_ESTIMATOR: EstimatorKind = EstimatorKind::Smoothed;

pub fn default_episodes(env: EnvKind) -> usize {
    match env {
        EnvKind::Hunters => 50_000,
        EnvKind::Bandit => 100_000,
    }
}

pub fn default_seeds(env: EnvKind) -> Vec<u64> {
    match env {
        EnvKind::Hunters => (0..5).collect(),
        EnvKind::Bandit => (0..10).collect(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    pub env: Option<EnvSection>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<String>,
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub kind: Option<String>,
    pub entropy_weight: Option<f64>,
    pub enumeration_cap: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: String,
    pub discount: Option<f64>,
    // hunters
    pub grid_size: Option<usize>,
    pub num_hunters: Option<usize>,
    pub num_rabbits: Option<usize>,
    pub max_steps: Option<usize>,
    // bandit
    pub agents: Option<usize>,
    pub arms: Option<usize>,
    pub arm_rewards: Option<Vec<f64>>,
    pub bonus_amount: Option<f64>,
    pub bonus_prob: Option<f64>,
    pub bonus_config: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<String>,
    pub baseline: Option<String>,
    pub baseline_lr: Option<f64>,
    pub clip: Option<f64>,
    pub seeds: Option<SeedSpec>,
    pub eval_episodes: Option<usize>,
    pub eval_greedy: Option<bool>,
    pub eval_seed: Option<u64>,
    pub record_wallclock: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Seeds as a list (`[0, 3, 7]`) or an inclusive range string (`"0..9"`).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Text(String),
}

impl SeedSpec {
    pub fn resolve(&self) -> Result<Vec<u64>, String> {
        match self {
            SeedSpec::List(v) if v.is_empty() => Err("seed list is empty".into()),
            SeedSpec::List(v) => Ok(v.clone()),
            SeedSpec::Text(s) => parse_seeds(s),
        }
    }
}

/// `"3"`, `"0..9"` (inclusive) or `"1,4,9"`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("bad seed `{}` in `{s}`", t.trim()));
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty seed range `{s}`"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(seeds)
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub model: Option<ModelKind>,
    pub estimator: Option<EstimatorKind>,
    pub entropy_weight: Option<f64>,
    pub learning_rate: Option<f64>,
    pub episodes: Option<usize>,
    pub baseline: Option<BaselineKind>,
    pub optimizer: Option<OptimizerKind>,
    pub seeds: Option<Vec<u64>>,
}

/// A parsed run file together with its text, kept for line-referenced errors.
#[derive(Debug)]
pub struct RunConfig {
    path: PathBuf,
    text: String,
    file: RunFile,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: cannot read: {e}", path.display())))?;
        Self::parse(path, text)
    }

    pub fn parse(path: &Path, text: String) -> Result<Self, CliError> {
        let file: RunFile = toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|r| line_at(&text, r.start));
            CliError::Config(match line {
                Some(l) => format!("{}:{l}: {}", path.display(), e.message()),
                None => format!("{}: {}", path.display(), e.message()),
            })
        })?;
        Ok(Self { path: path.to_path_buf(), text, file })
    }

    fn err(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
        match find_key(&self.text, section, key) {
            Some(l) => CliError::Config(format!("{}:{l}: {msg}", self.path.display())),
            None => CliError::Config(format!("{}: {msg}", self.path.display())),
        }
    }

    fn parse_field<T: std::str::FromStr>(&self, section: &str, key: &str, value: &Option<String>) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        value
            .as_deref()
            .map(|v| v.parse::<T>().map_err(|e| self.err(section, key, format!("[{section}] {key}: {e}"))))
            .transpose()
    }

    pub fn resolve(&self, o: &Overrides) -> Result<Resolved, CliError> {
        let f = &self.file;
        let env_section = f
            .env
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{}: missing required [env] section", self.path.display())))?;
        let env = self.env_config(env_section)?;
        let kind = env.kind();

        let file_model = self.parse_field("model", "kind", &f.model.kind)?.unwrap_or(DEFAULT_MODEL);
        let file_estimator = self.parse_field("estimator", "kind", &f.estimator.kind)?.unwrap_or(DEFAULT_ESTIMATOR);
        // Defaults come from the file's own choices; a command-line estimator
        // only swaps the estimator, a command-line model also needs its own shape.
        let mut t = TrainConfig::new(env, file_model, file_estimator);
        if let Some(e) = o.estimator {
            t.estimator = e;
        }
        if let Some(m) = o.model {
            t.model = m;
            t.hidden = default_hidden(m, kind, t.estimator);
        }
        if let Some(h) = &f.model.hidden {
            t.hidden = h.clone();
        }
        if let Some(b) = o.entropy_weight.or(f.estimator.entropy_weight) {
            t.entropy_weight = b;
        }
        if let Some(c) = f.estimator.enumeration_cap {
            t.enumeration_cap = c;
        }
        if let Some(g) = env_section.discount {
            t.discount = g;
        }
        let tr = &f.train;
        t.episodes = o.episodes.or(tr.episodes).unwrap_or_else(|| default_episodes(kind));
        if let Some(lr) = o.learning_rate.or(tr.learning_rate) {
            t.learning_rate = lr;
        }
        if let Some(opt) = o.optimizer.or(self.parse_field("train", "optimizer", &tr.optimizer)?) {
            t.optimizer = opt;
        }
        if let Some(b) = o.baseline.or(self.parse_field("train", "baseline", &tr.baseline)?) {
            t.baseline = b;
        }
        if let Some(v) = tr.baseline_lr {
            t.baseline_lr = v;
        }
        if let Some(v) = tr.clip {
            t.clip = v;
        }
        if let Some(v) = tr.eval_episodes {
            t.eval_episodes = v;
        }
        if let Some(v) = tr.eval_greedy {
            t.eval_greedy = v;
        }
        if let Some(v) = tr.eval_seed {
            t.eval_seed = v;
        }
        if let Some(v) = tr.record_wallclock {
            t.record_wallclock = v;
        }
        t.validate().map_err(|e| self.err_for_validation(&e.to_string()))?;

        let seeds = match (&o.seeds, &tr.seeds) {
            (Some(s), _) => s.clone(),
            (None, Some(spec)) => spec.resolve().map_err(|m| self.err("train", "seeds", m))?,
            (None, None) => default_seeds(kind),
        };
        Ok(Resolved { train: t, seeds, output_dir: f.output.dir.clone() })
    }

    /// Only the environment; used by `evaluate`, which takes the model from a checkpoint.
    pub fn env(&self) -> Result<(EnvConfig, f64), CliError> {
        let section = self
            .file
            .env
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{}: missing required [env] section", self.path.display())))?;
        let env = self.env_config(section)?;
        env.validate().map_err(|e| self.err_for_validation(&e.to_string()))?;
        Ok((env, section.discount.unwrap_or(DEFAULT_DISCOUNT)))
    }

    pub fn train_section(&self) -> &TrainSection {
        &self.file.train
    }

    fn env_config(&self, s: &EnvSection) -> Result<EnvConfig, CliError> {
        const HUNTER_KEYS: [&str; 4] = ["grid_size", "num_hunters", "num_rabbits", "max_steps"];
        const BANDIT_KEYS: [&str; 6] = ["agents", "arms", "arm_rewards", "bonus_amount", "bonus_prob", "bonus_config"];
        let hunter_set = [s.grid_size.is_some(), s.num_hunters.is_some(), s.num_rabbits.is_some(), s.max_steps.is_some()];
        let bandit_set = [
            s.agents.is_some(),
            s.arms.is_some(),
            s.arm_rewards.is_some(),
            s.bonus_amount.is_some(),
            s.bonus_prob.is_some(),
            s.bonus_config.is_some(),
        ];
        let stray = |keys: &[&str], set: &[bool], kind: &str| -> Result<(), CliError> {
            match keys.iter().zip(set).find(|(_, &on)| on) {
                Some((k, _)) => Err(self.err("env", k, format!("[env] {k} does not apply to kind = \"{kind}\""))),
                None => Ok(()),
            }
        };
        match s.kind.as_str() {
            "hunters" => {
                stray(&BANDIT_KEYS, &bandit_set, "hunters")?;
                let d = HuntersConfig::default();
                Ok(EnvConfig::Hunters(HuntersConfig {
                    grid_size: s.grid_size.unwrap_or(d.grid_size),
                    hunters: s.num_hunters.unwrap_or(d.hunters),
                    rabbits: s.num_rabbits.unwrap_or(d.rabbits),
                    max_steps: s.max_steps.unwrap_or(d.max_steps),
                }))
            }
            "bandit" => {
                stray(&HUNTER_KEYS, &hunter_set, "bandit")?;
                let d = BanditConfig::default();
                let agents = s.agents.unwrap_or(d.agents);
                let arms = s.arms.unwrap_or(d.arms);
                let std = BanditConfig::standard(agents, arms, s.bonus_amount.unwrap_or(d.bonus_amount), s.bonus_prob.unwrap_or(d.bonus_prob));
                Ok(EnvConfig::Bandit(BanditConfig {
                    arm_rewards: s.arm_rewards.clone().unwrap_or(std.arm_rewards.clone()),
                    bonus_config: s.bonus_config.clone().unwrap_or(std.bonus_config.clone()),
                    ..std
                }))
            }
            other => Err(self.err("env", "kind", format!("[env] kind: unknown environment `{other}` (hunters, bandit)"))),
        }
    }

    /// Validation errors name a field; point at the first key they mention.
    fn err_for_validation(&self, msg: &str) -> CliError {
        const KEYS: [(&str, &str); 19] = [
            ("env", "grid_size"),
            ("env", "max_steps"),
            ("env", "num_hunters"),
            ("env", "num_rabbits"),
            ("env", "arm_rewards"),
            ("env", "bonus_config"),
            ("env", "bonus_prob"),
            ("env", "bonus_amount"),
            ("env", "agents"),
            ("env", "arms"),
            ("env", "discount"),
            ("estimator", "entropy_weight"),
            ("estimator", "enumeration_cap"),
            ("model", "hidden"),
            ("train", "baseline_lr"),
            ("train", "learning_rate"),
            ("train", "clip"),
            ("train", "eval_episodes"),
            ("train", "episodes"),
        ];
        for (section, key) in KEYS {
            if msg.contains(key) && find_key(&self.text, section, key).is_some() {
                return self.err(section, key, msg);
            }
        }
        CliError::Config(format!("{}: {msg}", self.path.display()))
    }
}

/// 1-based line containing byte `offset`.
fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// 1-based line on which `key` is assigned inside `[section]`.
fn find_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

/// Human-readable reference of every key and its default.
pub fn defaults_reference() -> String {
    let mut out = String::new();
    let h = HuntersConfig::default();
    let b = BanditConfig::default();
    let _ = writeln!(out, "# Run file reference. Only [env] is required; commented values are the defaults.");
    let _ = writeln!(out, "# Defaults marked (*) depend on model, estimator and environment; see the tables below.\n");
    let _ = writeln!(out, "[model]");
    let _ = writeln!(out, "# kind = \"{DEFAULT_MODEL}\"            # is | mmdp | lstm | table");
    let _ = writeln!(out, "# hidden = (*)                 # lstm: [size]; is/mmdp: layer widths; table: []\n");
    let _ = writeln!(out, "[estimator]");
    let _ = writeln!(out, "# kind = \"{DEFAULT_ESTIMATOR}\"       # none | crude | smoothed | smoothed_mode[:beam] | unbiased_gradient | exact");
    let _ = writeln!(out, "# entropy_weight = (*)");
    let _ = writeln!(out, "# enumeration_cap = {DEFAULT_ENUMERATION_CAP}     # largest action count exact entropy will enumerate\n");
    let _ = writeln!(out, "[env]");
    let _ = writeln!(out, "kind = \"hunters\"                # hunters | bandit (required)");
    let _ = writeln!(out, "# discount = {DEFAULT_DISCOUNT}");
    let _ = writeln!(out, "# hunters only:");
    let _ = writeln!(out, "# grid_size = {}", h.grid_size);
    let _ = writeln!(out, "# num_hunters = {}", h.hunters);
    let _ = writeln!(out, "# num_rabbits = {}", h.rabbits);
    let _ = writeln!(out, "# max_steps = {}", h.max_steps);
    let _ = writeln!(out, "# bandit only:");
    let _ = writeln!(out, "# agents = {}", b.agents);
    let _ = writeln!(out, "# arms = {}", b.arms);
    let _ = writeln!(out, "# arm_rewards = [1, 2, ..., arms]");
    let _ = writeln!(out, "# bonus_amount = {}", b.bonus_amount);
    let _ = writeln!(out, "# bonus_prob = {}", b.bonus_prob);
    let _ = writeln!(out, "# bonus_config = the top `agents` arms, one per agent\n");
    let _ = writeln!(out, "[train]");
    let _ = writeln!(
        out,
        "# episodes = {} (hunters) / {} (bandit)",
        default_episodes(EnvKind::Hunters),
        default_episodes(EnvKind::Bandit)
    );
    let _ = writeln!(out, "# learning_rate = (*)");
    let _ = writeln!(out, "# optimizer = \"rmsprop\"        # sgd | rmsprop | adam");
    let _ = writeln!(
        out,
        "# baseline = \"{}\" (hunters) / \"{}\" (bandit)   # none | moving_average | ffn",
        default_baseline(EnvKind::Hunters),
        default_baseline(EnvKind::Bandit)
    );
    let _ = writeln!(out, "#   moving_average window {MOVING_AVERAGE_WINDOW}; ffn hidden width {VALUE_NET_HIDDEN}");
    let _ = writeln!(out, "# baseline_lr = {DEFAULT_BASELINE_LR}");
    let _ = writeln!(out, "# clip = {DEFAULT_CLIP}                   # elementwise gradient clip");
    let _ = writeln!(out, "# seeds = \"0..4\" (hunters) / \"0..9\" (bandit)   # inclusive range, \"1,5,9\" or [1, 5, 9]");
    let _ = writeln!(out, "# eval_episodes = {DEFAULT_EVAL_EPISODES}");
    let _ = writeln!(out, "# eval_greedy = false");
    let _ = writeln!(out, "# eval_seed = {DEFAULT_EVAL_SEED}");
    let _ = writeln!(out, "# record_wallclock = false\n");
    let _ = writeln!(out, "[output]");
    let _ = writeln!(out, "# dir = \"{DEFAULT_OUTPUT_DIR}\"    # overridden by ${OUTPUT_ENV_VAR}, which --out overrides\n");

    let estimators = [
        EstimatorKind::None,
        EstimatorKind::Crude,
        EstimatorKind::Smoothed,
        EstimatorKind::SmoothedMode { beam: 1 },
        EstimatorKind::UnbiasedGradient,
        EstimatorKind::Exact,
    ];
    for env in [EnvKind::Hunters, EnvKind::Bandit] {
        let name = match env {
            EnvKind::Hunters => "hunters",
            EnvKind::Bandit => "bandit",
        };
        let _ = writeln!(out, "# (*) defaults for env = {name}");
        let _ = writeln!(out, "# {:<6} {:<20} {:<18} {:>14} {:>14}", "model", "estimator", "hidden", "learning_rate", "entropy_weight");
        for model in [ModelKind::Is, ModelKind::Mmdp, ModelKind::Lstm, ModelKind::Table] {
            for est in estimators {
                let _ = writeln!(
                    out,
                    "# {:<6} {:<20} {:<18} {:>14} {:>14}",
                    model.to_string(),
                    est.to_string(),
                    format!("{:?}", default_hidden(model, env, est)),
                    default_learning_rate(model, env, est),
                    default_entropy_weight(model, env, est)
                );
            }
        }
        let _ = writeln!(out);
    }
    out
}

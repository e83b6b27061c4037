//! Run configuration: a flat `key=value` record with two built-in profiles.

use std::fmt::Write as _;
use std::path::Path;

use crate::envs::{FamilyKind, TaskFamily};
use crate::error::{Error, Result};
use crate::nn::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Profile::Desk),
            "paper" => Some(Profile::Paper),
            _ => None,
        }
    }
}

/// Training algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    /// BC warm-up, then adversarial soft-Q training with joint BC.
    Squirl,
    /// Adversarial soft-Q training only: no warm-up, no joint BC.
    SquirlIrlOnly,
    /// Task-conditioned BC with the shared encoder; no environment interaction.
    PearlBc,
    /// One unconditioned BC policy per task.
    StandardBc,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Squirl, Algo::SquirlIrlOnly, Algo::PearlBc, Algo::StandardBc];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Squirl => "squirl",
            Algo::SquirlIrlOnly => "squirl-irl-only",
            Algo::PearlBc => "pearl-bc",
            Algo::StandardBc => "standard-bc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub algo: Algo,
    pub seed: u64,

    pub family: FamilyKind,
    pub n_train_tasks: usize,
    pub horizon: usize,
    pub expert_noise: f64,
    pub grid_size: usize,
    pub n_arms: usize,
    pub expert_alpha: f64,
    pub reward_scale: f64,
    pub gamma: f64,

    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub z_dim: usize,

    pub context_size: usize,
    pub batch_size: usize,
    pub meta_batch: usize,
    pub irl_updates: usize,
    pub policy_updates: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub bc_warmup: bool,
    pub joint_bc: bool,
    pub standard_bc_steps: usize,

    pub lr_policy: f64,
    /// Step size of the policy's soft-RL updates; BC updates use `lr_policy`.
    pub lr_policy_rl: f64,
    pub lr_q: f64,
    pub lr_encoder: f64,
    pub lr_alpha: f64,
    pub alpha_init: f64,
    pub alpha_auto: bool,
    /// `None` means minus the action width.
    pub target_entropy: Option<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Initial log standard deviation of the Gaussian policy head.
    pub log_std_init: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Defaults sized for a laptop.
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            algo: Algo::Squirl,
            seed: 0,
            family: FamilyKind::PointPcd,
            n_train_tasks: 30,
            horizon: 128,
            expert_noise: 0.01,
            grid_size: 3,
            n_arms: 3,
            expert_alpha: 1.0,
            reward_scale: 1.0,
            gamma: 0.99,
            hidden_width: 64,
            hidden_layers: 4,
            activation: Activation::Relu,
            z_dim: 8,
            context_size: 64,
            batch_size: 128,
            meta_batch: 5,
            irl_updates: 50,
            policy_updates: 200,
            epochs: 30,
            warmup_steps: 2000,
            bc_warmup: true,
            joint_bc: true,
            standard_bc_steps: 4000,
            lr_policy: 1e-3,
            lr_policy_rl: 1e-5,
            lr_q: 3e-4,
            lr_encoder: 1e-3,
            lr_alpha: 3e-4,
            alpha_init: 0.01,
            alpha_auto: true,
            target_entropy: None,
            log_std_min: -20.0,
            log_std_max: 2.0,
            log_std_init: -1.0,
        }
    }

    /// Hyperparameters reported for the original non-vision experiments.
    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            z_dim: 32,
            context_size: 64,
            batch_size: 1024,
            meta_batch: 10,
            irl_updates: 400,
            policy_updates: 2000,
            epochs: 9,
            gamma: 0.99,
            lr_policy: 3e-4,
            lr_policy_rl: 3e-4,
            lr_q: 3e-4,
            lr_encoder: 3e-4,
            lr_alpha: 3e-4,
            alpha_init: 1e-5,
            target_entropy: Some(-300.0),
            log_std_init: 0.0,
            ..Self::desk()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Applies the algorithm's implied switches.
    pub fn with_algo(mut self, algo: Algo) -> Self {
        self.algo = algo;
        if algo == Algo::SquirlIrlOnly {
            self.bc_warmup = false;
            self.joint_bc = false;
        }
        self
    }

    pub fn task_family(&self) -> TaskFamily {
        TaskFamily {
            kind: self.family,
            horizon: self.horizon,
            n_train_tasks: self.n_train_tasks,
            expert_noise: self.expert_noise,
            grid_size: self.grid_size,
            n_arms: self.n_arms,
            gamma: self.gamma,
            expert_alpha: self.expert_alpha,
            reward_scale: self.reward_scale,
        }
    }

    pub fn target_entropy(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_train_tasks", self.n_train_tasks),
            ("horizon", self.horizon),
            ("hidden_width", self.hidden_width),
            ("z_dim", self.z_dim),
            ("context_size", self.context_size),
            ("batch_size", self.batch_size),
            ("meta_batch", self.meta_batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.meta_batch > self.n_train_tasks {
            return Err(Error::Config(format!(
                "meta_batch {} exceeds the {} training tasks",
                self.meta_batch, self.n_train_tasks
            )));
        }
        for (name, v) in [
            ("lr_policy", self.lr_policy),
            ("lr_policy_rl", self.lr_policy_rl),
            ("lr_q", self.lr_q),
            ("lr_encoder", self.lr_encoder),
            ("lr_alpha", self.lr_alpha),
            ("alpha_init", self.alpha_init),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a positive real")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if self.expert_noise < 0.0 || self.log_std_min >= self.log_std_max {
            return Err(Error::Config("expert_noise or log_std bounds are invalid".into()));
        }
        self.task_family().validate()
    }

    /// Serializes every field as `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("writing to a string");
        kv("profile", self.profile.name().into());
        kv("algo", self.algo.name().into());
        kv("seed", self.seed.to_string());
        kv("family", self.family.name().into());
        kv("n_train_tasks", self.n_train_tasks.to_string());
        kv("horizon", self.horizon.to_string());
        kv("expert_noise", self.expert_noise.to_string());
        kv("grid_size", self.grid_size.to_string());
        kv("n_arms", self.n_arms.to_string());
        kv("expert_alpha", self.expert_alpha.to_string());
        kv("reward_scale", self.reward_scale.to_string());
        kv("gamma", self.gamma.to_string());
        kv("hidden_width", self.hidden_width.to_string());
        kv("hidden_layers", self.hidden_layers.to_string());
        kv("activation", self.activation.name().into());
        kv("z_dim", self.z_dim.to_string());
        kv("context_size", self.context_size.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("meta_batch", self.meta_batch.to_string());
        kv("irl_updates", self.irl_updates.to_string());
        kv("policy_updates", self.policy_updates.to_string());
        kv("epochs", self.epochs.to_string());
        kv("warmup_steps", self.warmup_steps.to_string());
        kv("bc_warmup", self.bc_warmup.to_string());
        kv("joint_bc", self.joint_bc.to_string());
        kv("standard_bc_steps", self.standard_bc_steps.to_string());
        kv("lr_policy", self.lr_policy.to_string());
        kv("lr_policy_rl", self.lr_policy_rl.to_string());
        kv("lr_q", self.lr_q.to_string());
        kv("lr_encoder", self.lr_encoder.to_string());
        kv("lr_alpha", self.lr_alpha.to_string());
        kv("alpha_init", self.alpha_init.to_string());
        kv("alpha_auto", self.alpha_auto.to_string());
        kv(
            "target_entropy",
            self.target_entropy.map_or_else(|| "auto".into(), |v| v.to_string()),
        );
        kv("log_std_min", self.log_std_min.to_string());
        kv("log_std_max", self.log_std_max.to_string());
        kv("log_std_init", self.log_std_init.to_string());
        s
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        let bad = || Error::Config(format!("bad value `{value}` for `{key}`"));
        match key {
            "profile" => self.profile = Profile::parse(value).ok_or_else(bad)?,
            "algo" => *self = self.clone().with_algo(Algo::parse(value).ok_or_else(bad)?),
            "seed" => self.seed = p(key, value)?,
            "family" => self.family = FamilyKind::parse(value).ok_or_else(bad)?,
            "n_train_tasks" => self.n_train_tasks = p(key, value)?,
            "horizon" => self.horizon = p(key, value)?,
            "expert_noise" => self.expert_noise = p(key, value)?,
            "grid_size" => self.grid_size = p(key, value)?,
            "n_arms" => self.n_arms = p(key, value)?,
            "expert_alpha" => self.expert_alpha = p(key, value)?,
            "reward_scale" => self.reward_scale = p(key, value)?,
            "gamma" => self.gamma = p(key, value)?,
            "hidden_width" => self.hidden_width = p(key, value)?,
            "hidden_layers" => self.hidden_layers = p(key, value)?,
            "activation" => self.activation = Activation::parse(value).ok_or_else(bad)?,
            "z_dim" => self.z_dim = p(key, value)?,
            "context_size" => self.context_size = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "meta_batch" => self.meta_batch = p(key, value)?,
            "irl_updates" => self.irl_updates = p(key, value)?,
            "policy_updates" => self.policy_updates = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "warmup_steps" => self.warmup_steps = p(key, value)?,
            "bc_warmup" => self.bc_warmup = p(key, value)?,
            "joint_bc" => self.joint_bc = p(key, value)?,
            "standard_bc_steps" => self.standard_bc_steps = p(key, value)?,
            "lr_policy" => self.lr_policy = p(key, value)?,
            "lr_policy_rl" => self.lr_policy_rl = p(key, value)?,
            "lr_q" => self.lr_q = p(key, value)?,
            "lr_encoder" => self.lr_encoder = p(key, value)?,
            "lr_alpha" => self.lr_alpha = p(key, value)?,
            "lr" => {
                let lr: f64 = p(key, value)?;
                self.lr_policy = lr;
                self.lr_policy_rl = lr;
                self.lr_q = lr;
                self.lr_encoder = lr;
                self.lr_alpha = lr;
            }
            "alpha_init" => self.alpha_init = p(key, value)?,
            "alpha_auto" => self.alpha_auto = p(key, value)?,
            "target_entropy" => {
                self.target_entropy = if value == "auto" { None } else { Some(p(key, value)?) }
            }
            "log_std_min" => self.log_std_min = p(key, value)?,
            "log_std_max" => self.log_std_max = p(key, value)?,
            "log_std_init" => self.log_std_init = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of the profile named by a `profile=`
    /// line (desk when absent). Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            pairs.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        let profile = pairs
            .iter()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| Profile::parse(v).ok_or_else(|| Error::Config(format!("unknown profile `{v}`"))))
            .transpose()?
            .unwrap_or(Profile::Desk);
        let mut cfg = Self::for_profile(profile);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

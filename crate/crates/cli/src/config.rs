//! Flat `key = value` configuration with `#` comments. Every field has a
//! default; unknown keys are rejected; parse -> serialize -> parse is a
//! fixed point.

use std::fmt::Write as _;

use mm_model::ModelConfig;
use mm_train::{AdamConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // Model dimensions.
    pub depth: usize,
    pub heads: usize,
    pub experts: usize,
    pub top_k: usize,
    pub w_balance: f64,
    pub dropout: f64,
    pub vocab_size: usize,
    pub use_moe: bool,
    pub use_attention: bool,
    // Tasks and schedule.
    pub tasks: Vec<String>,
    pub steps: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub dev_batches: usize,
    pub seed: u64,
    // Optimizer.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    // Paths.
    pub out_dir: String,
    pub ckpt_path: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            depth: 64,
            heads: 8,
            experts: 16,
            top_k: 4,
            w_balance: 0.01,
            dropout: 0.4,
            vocab_size: 512,
            use_moe: true,
            use_attention: true,
            tasks: vec![
                "copy", "rev", "tr-ab", "tr-ba", "tr-ac", "tr-ca", "parse", "img4", "imgcap",
                "audio4",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            steps: 1000,
            batch_size: 16,
            eval_interval: 200,
            dev_batches: 2,
            seed: 1,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            out_dir: "out".into(),
            ckpt_path: "out/model.mmck".into(),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value", ln + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| ConfigError(format!("line {}: {}", ln + 1, e.0)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.parse()
                .map_err(|_| ConfigError(format!("bad value {v:?} for {key}")))
        }
        match key {
            "depth" => self.depth = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "experts" => self.experts = num(key, value)?,
            "top_k" => self.top_k = num(key, value)?,
            "w_balance" => self.w_balance = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "use_moe" => self.use_moe = num(key, value)?,
            "use_attention" => self.use_attention = num(key, value)?,
            "tasks" => {
                self.tasks = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "steps" => self.steps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "dev_batches" => self.dev_batches = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "out_dir" => self.out_dir = value.to_string(),
            "ckpt_path" => self.ckpt_path = value.to_string(),
            other => return Err(ConfigError(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tasks.is_empty() {
            return Err(ConfigError("task list is empty".into()));
        }
        if self.batch_size == 0 || self.steps == 0 || self.eval_interval == 0 {
            return Err(ConfigError(
                "steps, batch_size and eval_interval must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical serialization; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# model");
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "experts = {}", self.experts);
        let _ = writeln!(s, "top_k = {}", self.top_k);
        let _ = writeln!(s, "w_balance = {}", self.w_balance);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "use_moe = {}", self.use_moe);
        let _ = writeln!(s, "use_attention = {}", self.use_attention);
        let _ = writeln!(s, "# schedule");
        let _ = writeln!(s, "tasks = {}", self.tasks.join(","));
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "eval_interval = {}", self.eval_interval);
        let _ = writeln!(s, "dev_batches = {}", self.dev_batches);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "# optimizer");
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "eps = {}", self.eps);
        let _ = writeln!(s, "clip_norm = {}", self.clip_norm);
        let _ = writeln!(s, "# paths");
        let _ = writeln!(s, "out_dir = {}", self.out_dir);
        let _ = writeln!(s, "ckpt_path = {}", self.ckpt_path);
        s
    }

    pub fn model_config(&self, vocab_total: usize, n_tasks: usize) -> ModelConfig {
        ModelConfig {
            depth: self.depth,
            heads: self.heads,
            n_experts: self.experts,
            moe_k: self.top_k,
            w_balance: self.w_balance,
            dropout: self.dropout,
            vocab_size: vocab_total,
            n_tasks,
            n_classes: mm_data::N_CLASSES,
            use_moe: self.use_moe,
            use_attention: self.use_attention,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            eval_interval: self.eval_interval,
            dev_batches: self.dev_batches,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                clip_norm: self.clip_norm,
            },
            gen_slack: 2,
        }
    }
}

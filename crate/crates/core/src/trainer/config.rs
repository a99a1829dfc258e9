use std::fmt;
use std::str::FromStr;

use crate::config::{parse_value, KeyValues};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numcore::AdamConfig;
use crate::objective::Schedules;

/// The full model and the four ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Full,
    NoDropout,
    NoKl,
    NoReconBranch,
    /// Reconstruction + KL only; prediction by logistic regression on μ.
    ReconOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoDropout,
        Variant::NoKl,
        Variant::NoReconBranch,
        Variant::ReconOnly,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDropout => "no_dropout",
            Variant::NoKl => "no_kl",
            Variant::NoReconBranch => "no_recon_branch",
            Variant::ReconOnly => "recon_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.token() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

/// Which parts of the network and loss a training run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Task {
    /// Sample ζ = μ + σ⊙ε; otherwise ζ = μ.
    pub sample: bool,
    pub decoder: bool,
    pub head: bool,
    pub kl: bool,
    pub dropout: bool,
}

impl Task {
    /// Encoder and head trained with cross-entropy alone on a deterministic
    /// bottleneck.
    pub const POINTNET: Task = Task {
        sample: false,
        decoder: false,
        head: true,
        kl: false,
        dropout: true,
    };
}

/// Model config and task for `variant`.
pub fn apply_variant(variant: Variant, model: &ModelConfig) -> (ModelConfig, Task) {
    let mut cfg = model.clone();
    let mut task = Task {
        sample: true,
        decoder: true,
        head: true,
        kl: true,
        dropout: true,
    };
    match variant {
        Variant::Full => {}
        Variant::NoDropout => {
            task.dropout = false;
            cfg.dropout = 0.0;
        }
        Variant::NoKl => task.kl = false,
        Variant::NoReconBranch => task.decoder = false,
        Variant::ReconOnly => task.head = false,
    }
    (cfg, task)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub max_steps: usize,
    /// Validate (and write checkpoints) every this many steps.
    pub val_interval: usize,
    /// Stop after this many steps without relative improvement of 1e-4 in
    /// validation l_total.
    pub patience: usize,
    /// Write a train_log.csv row every this many steps.
    pub log_interval: usize,
    pub lr: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Annealing stages K.
    pub stages: usize,
    /// Steps S the schedules span; 0 means `max_steps`.
    pub schedule_steps: usize,
    pub schedules: Schedules,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 8,
            max_steps: 8000,
            val_interval: 100,
            patience: 1000,
            log_interval: 10,
            lr: AdamConfig::default().lr,
            seed: 0,
            variant: Variant::Full,
            stages: 5,
            schedule_steps: 0,
            schedules: Schedules::standard(8000, 5),
        }
    }
}

impl TrainConfig {
    /// Schedules with their span and stage count filled in.
    pub fn resolved_schedules(&self) -> Schedules {
        let total = if self.schedule_steps == 0 {
            self.max_steps
        } else {
            self.schedule_steps
        };
        let mut s = self.schedules;
        for sch in [&mut s.alpha, &mut s.beta, &mut s.gamma] {
            sch.total_steps = total;
            sch.stages = self.stages;
        }
        s
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if self.max_steps == 0 || self.val_interval == 0 || self.log_interval == 0 {
            return bad("max_steps, val_interval and log_interval must be positive".into());
        }
        if self.patience > self.max_steps {
            return bad(format!("patience {} exceeds max_steps {}", self.patience, self.max_steps));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        self.resolved_schedules().validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "batch" => self.batch = parse_value(key, value)?,
            "max_steps" => self.max_steps = parse_value(key, value)?,
            "val_interval" => self.val_interval = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "log_interval" => self.log_interval = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "variant" => self.variant = value.parse()?,
            "stages" => self.stages = parse_value(key, value)?,
            "schedule_steps" => self.schedule_steps = parse_value(key, value)?,
            _ => return self.schedules.set(key, value),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("batch", self.batch);
        kv.insert("max_steps", self.max_steps);
        kv.insert("val_interval", self.val_interval);
        kv.insert("patience", self.patience);
        kv.insert("log_interval", self.log_interval);
        kv.insert("lr", self.lr);
        kv.insert("seed", self.seed);
        kv.insert("variant", self.variant);
        kv.insert("stages", self.stages);
        kv.insert("schedule_steps", self.schedule_steps);
        let s = &self.schedules;
        for (name, sch) in [("alpha", s.alpha), ("beta", s.beta), ("gamma", s.gamma)] {
            kv.insert(format!("{name}.start"), sch.start);
            kv.insert(format!("{name}.end"), sch.end);
        }
        kv
    }
}

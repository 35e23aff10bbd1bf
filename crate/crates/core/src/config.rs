//! Run configuration: every tunable default in one line-oriented
//! `key=value` file, written next to each run's outputs.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::synth::{Dims, SiteShift};
use crate::data::Site;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::optim::{Decay, StageSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmKind {
    Transfer,
    Scratch,
}

impl fmt::Display for ArmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArmKind::Transfer => "transfer",
            ArmKind::Scratch => "scratch",
        })
    }
}

impl FromStr for ArmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transfer" => Ok(ArmKind::Transfer),
            "scratch" => Ok(ArmKind::Scratch),
            other => Err(Error::RunConfig(format!("unknown arm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Subcommand that produced this file; informational.
    pub command: Option<String>,
    pub variant: Variant,
    pub width: usize,
    pub in_channels: usize,
    pub pretrain: StageSchedule,
    pub refine: StageSchedule,
    pub finetune: StageSchedule,
    pub age_manifest: Option<PathBuf>,
    pub hie_manifest: Option<PathBuf>,
    pub n_age: usize,
    pub n_hie: usize,
    pub dims: usize,
    pub data_seed: u64,
    pub site_mix: f64,
    pub site_gain: f64,
    pub site_offset: f64,
    pub k: usize,
    pub train_site: Site,
    pub test_site: Site,
    pub arm: ArmKind,
    pub pretrained: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub variants: Vec<Variant>,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            variant: Variant::ResNet18,
            width: 64,
            in_channels: 2,
            pretrain: StageSchedule::pretrain(),
            refine: StageSchedule::refine(),
            finetune: StageSchedule::finetune(),
            age_manifest: None,
            hie_manifest: None,
            n_age: 500,
            n_hie: 120,
            dims: 16,
            data_seed: 0,
            site_mix: 0.5,
            site_gain: 1.0,
            site_offset: 0.0,
            k: 5,
            train_site: Site::A,
            test_site: Site::B,
            arm: ArmKind::Transfer,
            pretrained: None,
            checkpoint: None,
            variants: Variant::ALL.to_vec(),
            seed: 0,
            seeds: vec![0, 1, 2],
            jobs: 1,
            out: None,
        }
    }
}

/// Every key, in file order.
pub const KEYS: &[&str] = &[
    "command",
    "variant",
    "width",
    "in_channels",
    "pretrain_epochs",
    "pretrain_lr",
    "pretrain_halve_every",
    "pretrain_batch",
    "refine_epochs",
    "refine_lr",
    "refine_batch",
    "finetune_epochs",
    "finetune_lr",
    "finetune_batch",
    "weight_decay",
    "age_manifest",
    "hie_manifest",
    "n_age",
    "n_hie",
    "dims",
    "data_seed",
    "site_mix",
    "site_gain",
    "site_offset",
    "k",
    "train_site",
    "test_site",
    "arm",
    "pretrained",
    "checkpoint",
    "variants",
    "seed",
    "seeds",
    "jobs",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::RunConfig(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_value(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "command" => self.command.clone().unwrap_or_default(),
            "variant" => self.variant.to_string(),
            "width" => self.width.to_string(),
            "in_channels" => self.in_channels.to_string(),
            "pretrain_epochs" => self.pretrain.epochs.to_string(),
            "pretrain_lr" => self.pretrain.base_lr.to_string(),
            "pretrain_halve_every" => match self.pretrain.decay {
                Decay::HalveEvery(n) => n.to_string(),
                _ => "0".into(),
            },
            "pretrain_batch" => self.pretrain.batch_size.to_string(),
            "refine_epochs" => self.refine.epochs.to_string(),
            "refine_lr" => self.refine.base_lr.to_string(),
            "refine_batch" => self.refine.batch_size.to_string(),
            "finetune_epochs" => self.finetune.epochs.to_string(),
            "finetune_lr" => self.finetune.base_lr.to_string(),
            "finetune_batch" => self.finetune.batch_size.to_string(),
            "weight_decay" => self.pretrain.weight_decay.to_string(),
            "age_manifest" => path_value(&self.age_manifest),
            "hie_manifest" => path_value(&self.hie_manifest),
            "n_age" => self.n_age.to_string(),
            "n_hie" => self.n_hie.to_string(),
            "dims" => self.dims.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "site_mix" => self.site_mix.to_string(),
            "site_gain" => self.site_gain.to_string(),
            "site_offset" => self.site_offset.to_string(),
            "k" => self.k.to_string(),
            "train_site" => self.train_site.to_string(),
            "test_site" => self.test_site.to_string(),
            "arm" => self.arm.to_string(),
            "pretrained" => path_value(&self.pretrained),
            "checkpoint" => path_value(&self.checkpoint),
            "variants" => join(&self.variants),
            "seed" => self.seed.to_string(),
            "seeds" => join(&self.seeds),
            "jobs" => self.jobs.to_string(),
            "out" => path_value(&self.out),
            other => return Err(Error::RunConfig(format!("unknown key {other:?}"))),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "command" => self.command = (!value.is_empty()).then(|| value.to_string()),
            "variant" => self.variant = value.parse()?,
            "width" => self.width = parse(key, value)?,
            "in_channels" => self.in_channels = parse(key, value)?,
            "pretrain_epochs" => self.pretrain.epochs = parse(key, value)?,
            "pretrain_lr" => self.pretrain.base_lr = parse(key, value)?,
            "pretrain_halve_every" => {
                let n: usize = parse(key, value)?;
                self.pretrain.decay = if n == 0 { Decay::Constant } else { Decay::HalveEvery(n) };
            }
            "pretrain_batch" => self.pretrain.batch_size = parse(key, value)?,
            "refine_epochs" => self.refine.epochs = parse(key, value)?,
            "refine_lr" => self.refine.base_lr = parse(key, value)?,
            "refine_batch" => self.refine.batch_size = parse(key, value)?,
            "finetune_epochs" => self.finetune.epochs = parse(key, value)?,
            "finetune_lr" => self.finetune.base_lr = parse(key, value)?,
            "finetune_batch" => self.finetune.batch_size = parse(key, value)?,
            "weight_decay" => {
                let wd: f64 = parse(key, value)?;
                for s in [&mut self.pretrain, &mut self.refine, &mut self.finetune] {
                    s.weight_decay = wd;
                }
            }
            "age_manifest" => self.age_manifest = opt_path(value),
            "hie_manifest" => self.hie_manifest = opt_path(value),
            "n_age" => self.n_age = parse(key, value)?,
            "n_hie" => self.n_hie = parse(key, value)?,
            "dims" => self.dims = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "site_mix" => self.site_mix = parse(key, value)?,
            "site_gain" => self.site_gain = parse(key, value)?,
            "site_offset" => self.site_offset = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "train_site" => self.train_site = value.parse()?,
            "test_site" => self.test_site = value.parse()?,
            "arm" => self.arm = value.parse()?,
            "pretrained" => self.pretrained = opt_path(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "variants" => self.variants = value.split(',').map(|v| v.trim().parse()).collect::<Result<_>>()?,
            "seed" => self.seed = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "out" => self.out = opt_path(value),
            other => return Err(Error::RunConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// All keys as `key=value` lines. Parsing the result yields an equal
    /// config (floats use the shortest round-trip form).
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key}={}", self.get(key).expect("known key")).unwrap();
        }
        out
    }

    /// Report file body: this configuration as `# key=value` comment lines,
    /// then `body`.
    pub fn annotate(&self, body: &str) -> String {
        let mut out = String::new();
        for line in self.render().lines() {
            writeln!(out, "# {line}").unwrap();
        }
        out.push_str(body);
        out
    }

    /// Apply `key=value` lines over `self`. Blank lines and `#` comments are
    /// ignored; unknown or repeated keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::RunConfig(format!("line {}: expected key=value", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::RunConfig(format!("line {}: duplicate key {key}", i + 1)));
            }
            self.set(key, value)
                .map_err(|e| Error::RunConfig(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text).map_err(|e| Error::RunConfig(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::RunConfig(msg));
        for s in [&self.pretrain, &self.refine, &self.finetune] {
            s.validate()?;
        }
        self.model_config(1).validate()?;
        if self.dims < crate::data::synth::MIN_SYNTH_EXTENT {
            return bad(format!("dims must be >= {}", crate::data::synth::MIN_SYNTH_EXTENT));
        }
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.variants.is_empty() {
            return bad("variants must not be empty".into());
        }
        if self.train_site == self.test_site {
            return bad(format!("train_site and test_site are both {}", self.train_site));
        }
        if !(0.0..=1.0).contains(&self.site_mix) {
            return bad(format!("site_mix must be in [0,1], got {}", self.site_mix));
        }
        Ok(())
    }

    pub fn model_config(&self, out_dim: usize) -> ModelConfig {
        ModelConfig::new(self.variant, self.in_channels, out_dim, self.width)
    }

    pub fn scratch_schedule(&self) -> StageSchedule {
        StageSchedule::scratch_matching(&self.refine, &self.finetune)
    }

    pub fn synth_dims(&self) -> Dims {
        Dims::cube(self.dims)
    }

    pub fn site_shift(&self) -> SiteShift {
        SiteShift {
            gain: self.site_gain,
            offset: self.site_offset,
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("config error: ").map(str::to_string).unwrap_or(s)
}

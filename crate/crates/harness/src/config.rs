//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored and
//! unknown keys are an error. [`RunConfig::default`] follows the published 2D
//! hyperparameters; [`RunConfig::desk`] scales widths down for a laptop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pswm_core::{Flavor, PosteriorMode, WorldModelConfig};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    S4wm,
    S5wm,
    Rssm,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::S4wm => "s4wm",
            Family::S5wm => "s5wm",
            Family::Rssm => "rssm",
        }
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "s4wm" => Ok(Family::S4wm),
            "s5wm" => Ok(Family::S5wm),
            "rssm" => Ok(Family::Rssm),
            _ => Err(format!("unknown model family {s:?} (expected s4wm, s5wm or rssm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Linear warmup then cosine decay to zero.
    Cosine,
    /// Linear warmup then constant.
    Constant,
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosine" => Ok(Schedule::Cosine),
            "constant" => Ok(Schedule::Constant),
            _ => Err(format!("unknown schedule {s:?} (expected cosine or constant)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimizer steps; 0 means `epochs` full passes.
    pub max_steps: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub warmup: u64,
    pub schedule: Schedule,
    /// Validate (and maybe checkpoint) every this many steps.
    pub eval_every: u64,
    /// Validation episodes used per check; 0 means the whole split.
    pub val_episodes: usize,
    /// Stop early after this many seconds; 0 disables.
    pub time_budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub tbtt_k: usize,
    pub model: WorldModelConfig,
    pub train: TrainConfig,
    /// Imagination steps at which the generation error is summarized.
    pub eval_horizons: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut model = WorldModelConfig::desk();
        model.groups = 32;
        model.classes = 32;
        model.d_model = 512;
        model.d_ff = 2048;
        model.n_blocks = 6;
        model.frame_height = 40;
        model.frame_width = 40;
        model.cnn_multiplier = 32;
        model.mlp_units = 512;
        model.rssm_hidden = 2048;
        Self {
            family: Family::S4wm,
            seed: 0,
            data: None,
            tbtt_k: 50,
            model,
            train: TrainConfig {
                batch_size: 8,
                epochs: 100,
                max_steps: 0,
                lr: 1e-3,
                weight_decay: 1e-2,
                clip: 1000.0,
                warmup: 1000,
                schedule: Schedule::Cosine,
                eval_every: 500,
                val_episodes: 0,
                time_budget: 0.0,
            },
            eval_horizons: vec![1, 5, 10, 25, 50],
        }
    }
}

const KEYS: &[&str] = &[
    "model",
    "seed",
    "data",
    "tbtt_k",
    "groups",
    "classes",
    "d_model",
    "d_ff",
    "n_blocks",
    "state_size",
    "frame_size",
    "cnn_layers",
    "cnn_multiplier",
    "mlp_units",
    "mlp_layers",
    "alpha",
    "posterior",
    "no_mlp",
    "reward_head",
    "max_horizon",
    "rssm_hidden",
    "batch_size",
    "epochs",
    "max_steps",
    "lr",
    "weight_decay",
    "clip",
    "warmup",
    "schedule",
    "eval_every",
    "val_episodes",
    "time_budget",
    "eval_horizons",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

impl RunConfig {
    /// Laptop preset: d_model 128, d_ff 512, 4 blocks, 16x16 latents, 32x32 frames.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.model = WorldModelConfig::desk();
        c.tbtt_k = 50;
        c.train.eval_every = 250;
        c.eval_horizons = vec![1, 2, 4, 6];
        c
    }

    /// Applies the family's optimizer defaults (learning rate, clipping, batch, schedule).
    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self.model.flavor = match family {
            Family::S5wm => Flavor::DiagonalMimo,
            _ => Flavor::Dplr,
        };
        if family == Family::Rssm {
            self.train.lr = 3e-4;
            self.train.clip = 200.0;
            self.train.schedule = Schedule::Constant;
        } else {
            self.train.lr = 1e-3;
            self.train.clip = 1000.0;
            self.train.schedule = Schedule::Cosine;
        }
        self
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "model" => {
                let family: Family = value.parse()?;
                self.family = family;
                m.flavor = if family == Family::S5wm { Flavor::DiagonalMimo } else { Flavor::Dplr };
            }
            "seed" => self.seed = parse(key, value)?,
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "tbtt_k" => self.tbtt_k = parse(key, value)?,
            "groups" => m.groups = parse(key, value)?,
            "classes" => m.classes = parse(key, value)?,
            "d_model" => m.d_model = parse(key, value)?,
            "d_ff" => m.d_ff = parse(key, value)?,
            "n_blocks" => m.n_blocks = parse(key, value)?,
            "state_size" => m.state_size = parse(key, value)?,
            "frame_size" => {
                let s: usize = parse(key, value)?;
                m.frame_height = s;
                m.frame_width = s;
            }
            "cnn_layers" => m.cnn_layers = parse(key, value)?,
            "cnn_multiplier" => m.cnn_multiplier = parse(key, value)?,
            "mlp_units" => m.mlp_units = parse(key, value)?,
            "mlp_layers" => m.mlp_layers = parse(key, value)?,
            "alpha" => m.alpha = parse(key, value)?,
            "posterior" => {
                m.posterior_mode = match value {
                    "factorized" => PosteriorMode::Factorized,
                    "full" => PosteriorMode::FullHistory,
                    _ => return Err(format!("posterior: expected factorized or full, got {value:?}")),
                }
            }
            "no_mlp" => m.no_mlp = parse_bool(key, value)?,
            "reward_head" => m.reward_head = parse_bool(key, value)?,
            "max_horizon" => m.max_horizon = parse(key, value)?,
            "rssm_hidden" => m.rssm_hidden = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "max_steps" => t.max_steps = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "clip" => t.clip = parse(key, value)?,
            "warmup" => t.warmup = parse(key, value)?,
            "schedule" => t.schedule = value.parse()?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "val_episodes" => t.val_episodes = parse(key, value)?,
            "time_budget" => t.time_budget = parse(key, value)?,
            "eval_horizons" => {
                self.eval_horizons = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies every line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("line {}: expected key = value, got {raw:?}", no + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| HarnessError::Usage(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// `key=value` overrides, as given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), HarnessError> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("--set expects key=value, got {o:?}")))?;
            self.set(key.trim(), value.trim()).map_err(HarnessError::Usage)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, desk: bool) -> Result<Self, HarnessError> {
        let mut c = if desk { Self::desk() } else { Self::default() };
        // family defaults first, so explicit keys in the file win
        if let Some(family) = text
            .lines()
            .filter_map(|l| l.split('#').next())
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == "model")
            .map(|(_, v)| v.trim().parse::<Family>())
        {
            c = c.with_family(family.map_err(HarnessError::Usage)?);
        }
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path, desk: bool) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text, desk)
    }

    /// Every key with its current value; `from_text(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("model", self.family.name().into());
        put("seed", self.seed.to_string());
        put("data", self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("tbtt_k", self.tbtt_k.to_string());
        put("groups", m.groups.to_string());
        put("classes", m.classes.to_string());
        put("d_model", m.d_model.to_string());
        put("d_ff", m.d_ff.to_string());
        put("n_blocks", m.n_blocks.to_string());
        put("state_size", m.state_size.to_string());
        put("frame_size", m.frame_height.to_string());
        put("cnn_layers", m.cnn_layers.to_string());
        put("cnn_multiplier", m.cnn_multiplier.to_string());
        put("mlp_units", m.mlp_units.to_string());
        put("mlp_layers", m.mlp_layers.to_string());
        put("alpha", m.alpha.to_string());
        put(
            "posterior",
            match m.posterior_mode {
                PosteriorMode::Factorized => "factorized".into(),
                PosteriorMode::FullHistory => "full".into(),
            },
        );
        put("no_mlp", m.no_mlp.to_string());
        put("reward_head", m.reward_head.to_string());
        put("max_horizon", m.max_horizon.to_string());
        put("rssm_hidden", m.rssm_hidden.to_string());
        put("batch_size", t.batch_size.to_string());
        put("epochs", t.epochs.to_string());
        put("max_steps", t.max_steps.to_string());
        put("lr", t.lr.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("clip", t.clip.to_string());
        put("warmup", t.warmup.to_string());
        put(
            "schedule",
            match t.schedule {
                Schedule::Cosine => "cosine".into(),
                Schedule::Constant => "constant".into(),
            },
        );
        put("eval_every", t.eval_every.to_string());
        put("val_episodes", t.val_episodes.to_string());
        put("time_budget", t.time_budget.to_string());
        put("eval_horizons", self.eval_horizons.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
        s
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
        if self.model.frame_height != self.model.frame_width {
            return Err(HarnessError::Usage("frames must be square".into()));
        }
        if self.train.batch_size == 0 {
            return Err(HarnessError::Usage("batch_size must be positive".into()));
        }
        if self.tbtt_k == 0 {
            return Err(HarnessError::Usage("tbtt_k must be positive".into()));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(HarnessError::Usage(format!("lr must be positive, got {}", self.train.lr)));
        }
        if self.train.epochs == 0 && self.train.max_steps == 0 {
            return Err(HarnessError::Usage("set epochs or max_steps".into()));
        }
        Ok(())
    }

    /// `PSWM_SEED` when no seed was given explicitly.
    pub fn seed_from_env() -> Option<u64> {
        std::env::var("PSWM_SEED").ok().and_then(|s| s.trim().parse().ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::desk().with_family(Family::Rssm);
        c.seed = 9;
        c.eval_horizons = vec![3, 7];
        c.data = Some("x/y.ds".into());
        let back = RunConfig::from_text(&c.to_text(), false).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_settable_and_emitted() {
        let text = RunConfig::default().to_text();
        let emitted: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap().trim()).collect();
        assert_eq!(emitted, KEYS);
    }

    #[test]
    fn comments_and_unknown_keys() {
        let c = RunConfig::from_text("# hello\nd_model = 64 # narrow\n\nlr=0.5\n", true).unwrap();
        assert_eq!(c.model.d_model, 64);
        assert_eq!(c.train.lr, 0.5);
        assert!(matches!(RunConfig::from_text("dmodel = 3", true), Err(HarnessError::Usage(_))));
        assert!(matches!(RunConfig::from_text("d_model", true), Err(HarnessError::Usage(_))));
        assert!(matches!(RunConfig::from_text("d_model = x", true), Err(HarnessError::Usage(_))));
    }

    #[test]
    fn family_defaults() {
        let c = RunConfig::from_text("model = rssm", true).unwrap();
        assert_eq!((c.train.lr, c.train.clip, c.train.schedule), (3e-4, 200.0, Schedule::Constant));
        let c = RunConfig::from_text("model = rssm\nlr = 0.01", true).unwrap();
        assert_eq!(c.train.lr, 0.01);
        let c = RunConfig::from_text("model = s5wm", true).unwrap();
        assert_eq!(c.model.flavor, Flavor::DiagonalMimo);
    }

    #[test]
    fn presets() {
        let d = RunConfig::default();
        assert_eq!((d.model.d_model, d.model.d_ff, d.model.n_blocks), (512, 2048, 6));
        assert_eq!((d.model.groups, d.model.classes, d.model.frame_height), (32, 32, 40));
        assert_eq!((d.train.batch_size, d.train.epochs, d.train.warmup), (8, 100, 1000));
        assert_eq!((d.train.lr, d.train.weight_decay, d.train.clip), (1e-3, 1e-2, 1000.0));
        let k = RunConfig::desk();
        assert_eq!((k.model.d_model, k.model.d_ff, k.model.n_blocks), (128, 512, 4));
        assert_eq!((k.model.groups, k.model.classes, k.model.frame_height), (16, 16, 32));
    }
}

//! Hyperparameter layering: preset, then config file, then `--set` flags.
//!
//! Config files are `key = value` lines; keys are prefixed `model.` or
//! `train.`, and an optional `preset = toy|paper` line picks the base.

use std::path::Path;

use anyhow::{bail, Context, Result};
use skexcraft_model::config::{from_flat, to_flat};
use skexcraft_model::{ModelConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Toy,
    Paper,
}

impl Preset {
    fn parse(s: &str) -> Result<Self> {
        match s.trim_matches('"') {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            other => bail!("unknown preset {other:?}"),
        }
    }
}

#[derive(Debug, Default)]
struct Overrides {
    preset: Option<Preset>,
    model: String,
    train: String,
}

impl Overrides {
    fn push(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        if key == "preset" {
            self.preset = Some(Preset::parse(value)?);
        } else if let Some(k) = key.strip_prefix("model.") {
            self.model.push_str(&format!("{k} = {value}\n"));
        } else if let Some(k) = key.strip_prefix("train.") {
            self.train.push_str(&format!("{k} = {value}\n"));
        } else {
            bail!("config key {key:?} needs a model. or train. prefix");
        }
        Ok(())
    }
}

/// Resolved configs; `model_overridden` tells whether any `model.` key was set.
pub struct Resolved {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub model_overridden: bool,
}

pub fn resolve(preset: Preset, file: Option<&Path>, sets: &[String], seed: u64) -> Result<Resolved> {
    let mut o = Overrides::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| format!("{} line {}: expected key = value", path.display(), n + 1))?;
            o.push(k, v)?;
        }
    }
    for s in sets {
        let (k, v) = s.split_once('=').with_context(|| format!("--set {s:?}: expected key=value"))?;
        o.push(k, v)?;
    }
    let base = o.preset.unwrap_or(preset);
    let (m, t) = match base {
        Preset::Toy => (ModelConfig::toy(), TrainConfig::toy()),
        Preset::Paper => (ModelConfig::paper(), TrainConfig::paper()),
    };
    let model: ModelConfig = from_flat(&(to_flat(&m) + &o.model))?;
    let mut train: TrainConfig = from_flat(&(to_flat(&t) + &o.train))?;
    train.seed = seed;
    model.check()?;
    Ok(Resolved { model, train, model_overridden: !o.model.is_empty() })
}

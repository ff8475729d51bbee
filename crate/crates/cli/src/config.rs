//! Experiment configuration: preset, then config file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use moralab::corpus::DisagreementRule;
use moralab::synth::SynthConfig;
use moralab::{EvalConfig, SplitRule, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// `null` keeps every scenario.
    pub filter: Option<DisagreementRule>,
    pub rule: SplitRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub split: SplitConfig,
    pub synth: SynthConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (train, rule) = match preset {
            Preset::Paper => (TrainConfig::paper(), SplitRule::PAPER),
            Preset::Toy => (TrainConfig::toy(), SplitRule::PROPORTIONAL),
        };
        ExperimentConfig {
            preset,
            train,
            eval: EvalConfig::default(),
            split: SplitConfig {
                filter: Some(DisagreementRule::NoUnanimousAction),
                rule,
            },
            synth: SynthConfig::default(),
        }
    }

    /// Preset values overlaid with an optional TOML or JSON file.
    pub fn resolve(preset: Preset, file: Option<&Path>) -> Result<Self> {
        let base = Self::preset(preset);
        let Some(path) = file else {
            return Ok(base);
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let overlay: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            let t: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            serde_json::to_value(t)?
        };
        if !overlay.is_object() {
            bail!("config {} must be a table", path.display());
        }
        if overlay.get("preset").is_some() {
            bail!("`preset` is chosen with --preset, not in the config file");
        }
        let mut merged = serde_json::to_value(&base)?;
        merge(&mut merged, overlay, "")?;
        serde_json::from_value(merged).with_context(|| format!("invalid values in {}", path.display()))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.eval.seed = s;
            self.synth.seed = s;
        }
        self
    }
}

fn merge(base: &mut Value, overlay: Value, at: &str) -> Result<()> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => bail!("unknown config key `{here}`"),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Paper,
    Proportional,
}

impl SplitChoice {
    pub fn rule(self) -> SplitRule {
        match self {
            SplitChoice::Paper => SplitRule::PAPER,
            SplitChoice::Proportional => SplitRule::PROPORTIONAL,
        }
    }
}

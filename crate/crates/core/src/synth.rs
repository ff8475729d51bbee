//! Synthetic scenarios with a known linear labeling rule.
//!
//! Each scenario carries a latent vector `z ~ N(0, I_d)`. Framework `f` owns a
//! rule vector `w_f ~ N(0, I_d)` and chooses action A iff `w_f · z > 0`. With
//! probability `noise_rate` that choice is flipped. The description spells
//! the latent vector out as words (`f3pos f3pos f7neg ...`) so the hashing
//! featurizer sees the same signal as latent passthrough.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FrameworkLabelMatrix, Scenario};
use crate::error::{Error, Result};
use crate::framework::{Decision, FrameworkSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub feature_dim: usize,
    pub noise_rate: f64,
    pub seed: u64,
    pub rule_weights_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 200,
            feature_dim: 8,
            noise_rate: 0.0,
            seed: 7,
            rule_weights_seed: 11,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("synthetic corpus needs count > 0".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("synthetic corpus needs feature_dim > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise_rate must lie in [0, 1], got {}",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

/// Per-framework rule vectors, in framework-set order.
pub fn rule_weights(config: &SynthConfig, frameworks: &FrameworkSet) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rule_weights_seed);
    frameworks
        .iter()
        .map(|_| normal_vec(&mut rng, config.feature_dim))
        .collect()
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn describe(index: usize, latent: &[f64]) -> String {
    let mut words = vec![format!("Synthetic situation {index}:")];
    for (j, z) in latent.iter().enumerate() {
        let tag = if *z >= 0.0 { "pos" } else { "neg" };
        let repeats = 1 + (z.abs() * 2.0).floor() as usize;
        for _ in 0..repeats {
            words.push(format!("f{j}{tag}"));
        }
    }
    words.join(" ")
}

/// Generates a deterministic synthetic corpus over the default framework set.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Corpus> {
    generate_synthetic_with(config, &FrameworkSet::default())
}

pub fn generate_synthetic_with(config: &SynthConfig, frameworks: &FrameworkSet) -> Result<Corpus> {
    config.validate()?;
    let rules = rule_weights(config, frameworks);
    let mut latent_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);

    let mut scenarios = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let latent = normal_vec(&mut latent_rng, config.feature_dim);
        let mut labels = FrameworkLabelMatrix::new();
        for (f, w) in frameworks.iter().zip(&rules) {
            let score: f64 = w.iter().zip(&latent).map(|(a, b)| a * b).sum();
            let mut picks_a = score > 0.0;
            if noise_rng.random::<f64>() < config.noise_rate {
                picks_a = !picks_a;
            }
            let decision = if picks_a { Decision::A } else { Decision::B };
            labels.set_from_decision(f.clone(), decision);
        }
        scenarios.push(Scenario {
            id: format!("S_{i:04}"),
            description: describe(i, &latent),
            actions: [
                "I take the first course of action.".into(),
                "I take the second course of action.".into(),
            ],
            labels,
            traces: Default::default(),
            latent: Some(latent),
        });
    }
    Corpus::new(frameworks.clone(), scenarios)
}

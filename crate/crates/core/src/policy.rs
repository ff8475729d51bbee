//! Toy text policy: a feature-conditioned categorical model over a small
//! vocabulary.
//!
//! Given scenario features `x`, every one of the `L` reasoning slots draws a
//! token from `softmax((W_r x + b_r) / T)` and the final decision slot draws
//! from `softmax((W_d x + b_d) / T)` over `{A, B, Abstain}`. Slots are
//! conditionally independent given `x`, so log-probabilities and their
//! gradients are closed form.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Scenario;
use crate::error::{Error, Result};
use crate::framework::DecisionToken;
use crate::reward::{Completion, KeywordConfig, Origin};

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const DEFAULT_FILLERS: usize = 50;
pub const DEFAULT_SLOTS: usize = 12;
const DECISIONS: usize = 3;

/// How a scenario becomes a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeatureMode {
    /// Signed feature hashing of lowercase description words.
    Hashing { seed: u64 },
    /// The synthetic latent vector, as stored.
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub dim: usize,
    #[serde(flatten)]
    pub mode: FeatureMode,
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl Featurizer {
    pub fn hashing(dim: usize, seed: u64) -> Self {
        Featurizer {
            dim,
            mode: FeatureMode::Hashing { seed },
        }
    }

    pub fn latent(dim: usize) -> Self {
        Featurizer {
            dim,
            mode: FeatureMode::Latent,
        }
    }

    /// Bucket and sign of one lowercase word.
    pub fn bucket(&self, word: &str) -> (usize, f64) {
        let seed = match self.mode {
            FeatureMode::Hashing { seed } => seed,
            FeatureMode::Latent => 0,
        };
        let h = fnv1a(seed, word.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    /// Unnormalized signed bucket counts of `text`.
    pub fn hash_counts(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let (i, sign) = self.bucket(&word.to_lowercase());
            v[i] += sign;
        }
        v
    }

    pub fn featurize(&self, scenario: &Scenario) -> Result<Vec<f64>> {
        if self.dim == 0 {
            return Err(Error::Config("featurizer dimension must be positive".into()));
        }
        let mut v = match self.mode {
            FeatureMode::Hashing { .. } => self.hash_counts(&scenario.description),
            FeatureMode::Latent => {
                let latent = scenario.latent.as_ref().ok_or_else(|| {
                    Error::Data(format!("scenario {} has no latent features", scenario.id))
                })?;
                if latent.len() != self.dim {
                    return Err(Error::Data(format!(
                        "scenario {} latent has {} dims, featurizer expects {}",
                        scenario.id,
                        latent.len(),
                        self.dim
                    )));
                }
                latent.clone()
            }
        };
        if v.iter().all(|x| *x == 0.0) {
            log::warn!("scenario {} featurizes to the zero vector", scenario.id);
        }
        l2_normalize(&mut v);
        Ok(v)
    }
}

/// All trainable values. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeights {
    /// Row-major `V × d`.
    pub reasoning_weights: Vec<f64>,
    pub reasoning_bias: Vec<f64>,
    /// Row-major `3 × d`, rows ordered A, B, Abstain.
    pub decision_weights: Vec<f64>,
    pub decision_bias: Vec<f64>,
}

impl PolicyWeights {
    pub fn zeros(vocab: usize, dim: usize) -> Self {
        PolicyWeights {
            reasoning_weights: vec![0.0; vocab * dim],
            reasoning_bias: vec![0.0; vocab],
            decision_weights: vec![0.0; DECISIONS * dim],
            decision_bias: vec![0.0; DECISIONS],
        }
    }

    pub fn zeros_like(&self) -> Self {
        PolicyWeights {
            reasoning_weights: vec![0.0; self.reasoning_weights.len()],
            reasoning_bias: vec![0.0; self.reasoning_bias.len()],
            decision_weights: vec![0.0; self.decision_weights.len()],
            decision_bias: vec![0.0; self.decision_bias.len()],
        }
    }

    fn segments(&self) -> [&Vec<f64>; 4] {
        [
            &self.reasoning_weights,
            &self.reasoning_bias,
            &self.decision_weights,
            &self.decision_bias,
        ]
    }

    fn segments_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.reasoning_weights,
            &mut self.reasoning_bias,
            &mut self.decision_weights,
            &mut self.decision_bias,
        ]
    }

    pub fn len(&self) -> usize {
        self.segments().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.reasoning_weights
            .iter()
            .chain(&self.reasoning_bias)
            .chain(&self.decision_weights)
            .chain(&self.decision_bias)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.reasoning_weights
            .iter_mut()
            .chain(self.reasoning_bias.iter_mut())
            .chain(self.decision_weights.iter_mut())
            .chain(self.decision_bias.iter_mut())
    }

    /// Flat-index access across all four blocks.
    pub fn get(&self, mut i: usize) -> f64 {
        for seg in self.segments() {
            if i < seg.len() {
                return seg[i];
            }
            i -= seg.len();
        }
        panic!("flat index out of range")
    }

    pub fn set(&mut self, mut i: usize, value: f64) {
        for seg in self.segments_mut() {
            if i < seg.len() {
                seg[i] = value;
                return;
            }
            i -= seg.len();
        }
        panic!("flat index out of range")
    }

    /// True for entries of the weight matrices (as opposed to biases).
    pub fn is_matrix_entry(&self, i: usize) -> bool {
        let r = self.reasoning_weights.len();
        let rb = r + self.reasoning_bias.len();
        let d = rb + self.decision_weights.len();
        i < r || (rb..d).contains(&i)
    }

    pub fn add_scaled(&mut self, other: &PolicyWeights, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Policy parameters θ together with the vocabulary and featurizer they
/// were trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub format_version: u32,
    /// Reasoning-slot vocabulary (keywords, then fillers).
    pub vocab: Vec<String>,
    pub slots: usize,
    pub featurizer: Featurizer,
    pub weights: PolicyWeights,
    /// Free-form provenance (run id, corpus fingerprint, step).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl PolicyParams {
    /// Zero-initialized policy whose vocabulary is every configured keyword
    /// followed by `fillers` neutral tokens.
    pub fn new(keywords: &KeywordConfig, fillers: usize, slots: usize, featurizer: Featurizer) -> Result<Self> {
        let mut vocab = keywords.all_keywords();
        vocab.extend((0..fillers).map(|i| format!("filler{i:02}")));
        Self::with_vocab(vocab, slots, featurizer)
    }

    pub fn with_vocab(vocab: Vec<String>, slots: usize, featurizer: Featurizer) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Config("policy vocabulary must not be empty".into()));
        }
        if featurizer.dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        let weights = PolicyWeights::zeros(vocab.len(), featurizer.dim);
        Ok(PolicyParams {
            format_version: CHECKPOINT_FORMAT,
            vocab,
            slots,
            featurizer,
            weights,
            tags: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.featurizer.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Checks that every keyword of `keywords` is a single vocabulary token.
    pub fn covers_keywords(&self, keywords: &KeywordConfig) -> Result<()> {
        for k in keywords.all_keywords() {
            if !self.vocab.contains(&k) {
                return Err(Error::Config(format!("keyword `{k}` missing from policy vocabulary")));
            }
        }
        Ok(())
    }

    pub fn token_index(&self, token: &str) -> Result<usize> {
        self.vocab
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    fn logits(&self, rows: &[f64], bias: &[f64], x: &[f64], temperature: f64) -> Vec<f64> {
        let d = self.dim();
        bias.iter()
            .enumerate()
            .map(|(v, b)| {
                let row = &rows[v * d..(v + 1) * d];
                (b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()) / temperature
            })
            .collect()
    }

    /// Slot distributions at temperature `temperature`.
    pub fn distributions(&self, features: &[f64], temperature: f64) -> Result<SlotDistributions> {
        check_temperature(temperature)?;
        if features.len() != self.dim() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: self.dim(),
            });
        }
        let w = &self.weights;
        let reasoning = log_softmax(&self.logits(&w.reasoning_weights, &w.reasoning_bias, features, temperature));
        let decision = log_softmax(&self.logits(&w.decision_weights, &w.decision_bias, features, temperature));
        Ok(SlotDistributions::new(reasoning, decision, self.slots, temperature))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: PolicyParams = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT})",
                self.format_version
            )));
        }
        let (v, d) = (self.vocab_size(), self.dim());
        let w = &self.weights;
        if w.reasoning_weights.len() != v * d
            || w.reasoning_bias.len() != v
            || w.decision_weights.len() != DECISIONS * d
            || w.decision_bias.len() != DECISIONS
        {
            return Err(Error::Checkpoint("weight shapes do not match vocab and dimension".into()));
        }
        if !w.all_finite() {
            return Err(Error::Checkpoint("checkpoint contains non-finite weights".into()));
        }
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Temperature(t))
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn cdf(log_probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    log_probs
        .iter()
        .map(|lp| {
            acc += lp.exp();
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    let u = u * cdf.last().copied().unwrap_or(1.0);
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Log-probabilities of every slot for one (params, features, temperature).
#[derive(Debug, Clone)]
pub struct SlotDistributions {
    pub reasoning_log_probs: Vec<f64>,
    pub decision_log_probs: Vec<f64>,
    slots: usize,
    temperature: f64,
    reasoning_cdf: Vec<f64>,
    decision_cdf: Vec<f64>,
}

impl SlotDistributions {
    fn new(reasoning: Vec<f64>, decision: Vec<f64>, slots: usize, temperature: f64) -> Self {
        SlotDistributions {
            reasoning_cdf: cdf(&reasoning),
            decision_cdf: cdf(&decision),
            reasoning_log_probs: reasoning,
            decision_log_probs: decision,
            slots,
            temperature,
        }
    }

    pub fn decision_probs(&self) -> [f64; 3] {
        let p = &self.decision_log_probs;
        [p[0].exp(), p[1].exp(), p[2].exp()]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledCompletion {
        let mut reasoning = Vec::with_capacity(self.slots);
        let mut log_probs = Vec::with_capacity(self.slots + 1);
        for _ in 0..self.slots {
            let t = draw(&self.reasoning_cdf, rng.random::<f64>());
            reasoning.push(t);
            log_probs.push(self.reasoning_log_probs[t]);
        }
        let d = draw(&self.decision_cdf, rng.random::<f64>());
        log_probs.push(self.decision_log_probs[d]);
        SampledCompletion {
            reasoning,
            decision: DecisionToken::from_index(d).expect("three decision tokens"),
            log_probs,
            temperature: self.temperature,
        }
    }

    /// Decision token alone, for backends that only need the extractor.
    pub fn sample_decision<R: Rng + ?Sized>(&self, rng: &mut R) -> DecisionToken {
        DecisionToken::from_index(draw(&self.decision_cdf, rng.random::<f64>())).expect("three decision tokens")
    }
}

/// `L` reasoning token indices plus one decision token, with the
/// per-token log-probabilities recorded when it was drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCompletion {
    pub reasoning: Vec<usize>,
    pub decision: DecisionToken,
    /// Reasoning slots in order, then the decision slot.
    pub log_probs: Vec<f64>,
    pub temperature: f64,
}

impl SampledCompletion {
    /// Builds a completion from token strings (log-probs left empty).
    pub fn from_tokens(params: &PolicyParams, reasoning: &[&str], decision: &str) -> Result<Self> {
        let reasoning = reasoning
            .iter()
            .map(|t| params.token_index(t))
            .collect::<Result<Vec<_>>>()?;
        let decision = DecisionToken::from_text(decision).ok_or_else(|| Error::UnknownToken(decision.to_string()))?;
        Ok(SampledCompletion {
            reasoning,
            decision,
            log_probs: Vec::new(),
            temperature: 1.0,
        })
    }

    pub fn token_count(&self) -> usize {
        self.reasoning.len() + 1
    }

    pub fn reasoning_text(&self, params: &PolicyParams) -> String {
        self.reasoning
            .iter()
            .map(|&i| params.vocab[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The form the reward module scores.
    pub fn to_completion(&self, params: &PolicyParams) -> Completion {
        Completion {
            reasoning: self.reasoning_text(params),
            origin: Origin::ToyPolicy(self.decision),
        }
    }

    fn check(&self, params: &PolicyParams) -> Result<()> {
        match self.reasoning.iter().find(|&&t| t >= params.vocab_size()) {
            Some(t) => Err(Error::UnknownToken(format!("#{t}"))),
            None => Ok(()),
        }
    }
}

pub fn featurize(featurizer: &Featurizer, scenario: &Scenario) -> Result<Vec<f64>> {
    featurizer.featurize(scenario)
}

pub fn sample<R: Rng + ?Sized>(
    params: &PolicyParams,
    features: &[f64],
    temperature: f64,
    rng: &mut R,
) -> Result<SampledCompletion> {
    Ok(params.distributions(features, temperature)?.sample(rng))
}

/// Per-token log-probabilities, reasoning slots first.
pub fn token_logprobs(
    params: &PolicyParams,
    features: &[f64],
    completion: &SampledCompletion,
    temperature: f64,
) -> Result<Vec<f64>> {
    completion.check(params)?;
    let dist = params.distributions(features, temperature)?;
    let mut out: Vec<f64> = completion
        .reasoning
        .iter()
        .map(|&t| dist.reasoning_log_probs[t])
        .collect();
    out.push(dist.decision_log_probs[completion.decision.index()]);
    Ok(out)
}

pub fn logprob(params: &PolicyParams, features: &[f64], completion: &SampledCompletion, temperature: f64) -> Result<f64> {
    Ok(token_logprobs(params, features, completion, temperature)?.iter().sum())
}

/// Exact `P(A), P(B), P(Abstain)`.
pub fn decision_marginal(params: &PolicyParams, features: &[f64], temperature: f64) -> Result<[f64; 3]> {
    Ok(params.distributions(features, temperature)?.decision_probs())
}

/// Adds `Σ_t coef_t · ∇ log p(token_t)` into `grad`. `coefs` has one entry
/// per reasoning slot followed by the decision slot.
pub fn accumulate_logprob_grad(
    params: &PolicyParams,
    features: &[f64],
    completion: &SampledCompletion,
    dist: &SlotDistributions,
    coefs: &[f64],
    grad: &mut PolicyWeights,
) {
    let d = params.dim();
    let inv_t = 1.0 / dist.temperature;
    let (reasoning_coefs, decision_coef) = coefs.split_at(completion.reasoning.len());
    let decision_coef = decision_coef[0];

    // reasoning slots share one distribution: Σ_t c_t (e_{tok_t} − p)
    let total: f64 = reasoning_coefs.iter().sum();
    let mut logit_grad: Vec<f64> = dist
        .reasoning_log_probs
        .iter()
        .map(|lp| -total * lp.exp())
        .collect();
    for (&tok, &c) in completion.reasoning.iter().zip(reasoning_coefs) {
        logit_grad[tok] += c;
    }
    for (v, g) in logit_grad.iter().enumerate() {
        let g = g * inv_t;
        if g == 0.0 {
            continue;
        }
        grad.reasoning_bias[v] += g;
        for (w, x) in grad.reasoning_weights[v * d..(v + 1) * d].iter_mut().zip(features) {
            *w += g * x;
        }
    }

    let chosen = completion.decision.index();
    for (v, lp) in dist.decision_log_probs.iter().enumerate() {
        let onehot = if v == chosen { 1.0 } else { 0.0 };
        let g = decision_coef * (onehot - lp.exp()) * inv_t;
        grad.decision_bias[v] += g;
        for (w, x) in grad.decision_weights[v * d..(v + 1) * d].iter_mut().zip(features) {
            *w += g * x;
        }
    }
}

/// Exact gradient of [`logprob`] with respect to every weight and bias.
pub fn grad_logprob(
    params: &PolicyParams,
    features: &[f64],
    completion: &SampledCompletion,
    temperature: f64,
) -> Result<PolicyWeights> {
    completion.check(params)?;
    let dist = params.distributions(features, temperature)?;
    let mut grad = params.weights.zeros_like();
    let coefs = vec![1.0; completion.token_count()];
    accumulate_logprob_grad(params, features, completion, &dist, &coefs, &mut grad);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FrameworkLabelMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn tiny(vocab: usize, dim: usize, slots: usize) -> PolicyParams {
        let v = (0..vocab).map(|i| format!("t{i}")).collect();
        PolicyParams::with_vocab(v, slots, Featurizer::hashing(dim, 0)).unwrap()
    }

    fn randomize(p: &mut PolicyParams, rng: &mut ChaCha8Rng, scale: f64) {
        for w in p.weights.iter_mut() {
            *w = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }

    fn unit_features(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        l2_normalize(&mut x);
        x
    }

    fn scenario(desc: &str) -> Scenario {
        Scenario {
            id: "s".into(),
            description: desc.into(),
            actions: ["a".into(), "b".into()],
            labels: FrameworkLabelMatrix::new(),
            traces: Default::default(),
            latent: None,
        }
    }

    #[test]
    fn featurize_deterministic_and_normalized() {
        let f = Featurizer::hashing(32, 9);
        let a = f.featurize(&scenario("You find a wallet on the street.")).unwrap();
        let b = f.featurize(&scenario("You find a wallet on the street.")).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(f.featurize(&scenario("")).unwrap().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn one_word_change_touches_at_most_two_buckets() {
        let f = Featurizer::hashing(64, 3);
        let a = f.hash_counts("you see a stranger drop a wallet");
        let b = f.hash_counts("you see a child drop a wallet");
        let changed: Vec<usize> = (0..64).filter(|&i| a[i] != b[i]).collect();
        let (ia, sa) = f.bucket("stranger");
        let (ib, sb) = f.bucket("child");
        assert!(changed.len() <= 2);
        for i in &changed {
            assert!(*i == ia || *i == ib);
        }
        let mut expected = a.clone();
        expected[ia] -= sa;
        expected[ib] += sb;
        assert_eq!(expected, b);
    }

    #[test]
    fn latent_passthrough() {
        let mut s = scenario("x");
        s.latent = Some(vec![3.0, 4.0]);
        let v = Featurizer::latent(2).featurize(&s).unwrap();
        assert_eq!(v, vec![0.6, 0.8]);
        assert!(Featurizer::latent(3).featurize(&s).is_err());
        assert!(Featurizer::latent(2).featurize(&scenario("x")).is_err());
    }

    #[test]
    fn uniform_policy() {
        let p = tiny(10, 4, 2);
        let x = vec![0.5; 4];
        let m = decision_marginal(&p, &x, 1.0).unwrap();
        for v in m {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = SampledCompletion::from_tokens(&p, &["t1", "t7"], "<B>").unwrap();
        let lp = logprob(&p, &x, &c, 1.0).unwrap();
        assert!((lp - (2.0 * (0.1f64).ln() + (1.0f64 / 3.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = tiny(5, 3, 2);
        let x = vec![0.0; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample(&p, &x, 0.0, &mut rng), Err(Error::Temperature(_))));
        assert!(matches!(sample(&p, &x, -1.0, &mut rng), Err(Error::Temperature(_))));
        assert!(matches!(
            SampledCompletion::from_tokens(&p, &["nope"], "<A>"),
            Err(Error::UnknownToken(_))
        ));
        let bad = SampledCompletion {
            reasoning: vec![99],
            decision: DecisionToken::A,
            log_probs: vec![],
            temperature: 1.0,
        };
        assert!(logprob(&p, &x, &bad, 1.0).is_err());
        assert!(grad_logprob(&p, &x, &bad, 1.0).is_err());
    }

    #[test]
    fn sampled_logprobs_self_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = tiny(12, 6, 5);
        randomize(&mut p, &mut rng, 0.7);
        let x = unit_features(&mut rng, 6);
        for t in [1.0, 0.3] {
            let c = sample(&p, &x, t, &mut rng).unwrap();
            assert_eq!(c.token_count(), 6);
            assert!(c.log_probs.iter().all(|lp| lp.is_finite() && *lp <= 0.0));
            let recorded: f64 = c.log_probs.iter().sum();
            assert!((logprob(&p, &x, &c, t).unwrap() - recorded).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_seed_same_completion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = tiny(8, 4, 6);
        randomize(&mut p, &mut rng, 1.0);
        let x = unit_features(&mut rng, 4);
        let a = sample(&p, &x, 1.0, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample(&p, &x, 1.0, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn low_temperature_picks_argmax() {
        let mut p = tiny(4, 2, 1);
        p.weights.decision_bias = vec![0.3, 0.2, 0.1];
        let x = vec![0.0, 0.0];
        // softmax([30, 20, 10]) puts 1 − 4.5e-5 on A
        let exact = decision_marginal(&p, &x, 0.01).unwrap()[0];
        assert!(exact > 0.9999);
        let dist = p.distributions(&x, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hits = (0..10_000)
            .filter(|_| dist.sample_decision(&mut rng) == DecisionToken::A)
            .count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn marginals_normalized_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let mut p = tiny(6, 5, 2);
            randomize(&mut p, &mut rng, 2.0);
            let x = unit_features(&mut rng, 5);
            let m = decision_marginal(&p, &x, 0.7).unwrap();
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut q = p.clone();
            q.weights.decision_bias.iter_mut().for_each(|b| *b += 1.7);
            let m2 = decision_marginal(&q, &x, 0.7).unwrap();
            for (a, b) in m.iter().zip(m2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut p = tiny(7, 3, 1);
        randomize(&mut p, &mut rng, 1.0);
        let x = unit_features(&mut rng, 3);
        let dist = p.distributions(&x, 1.0).unwrap();
        let n = 50_000;
        let mut counts = [0usize; 7];
        let mut dcounts = [0usize; 3];
        for _ in 0..n {
            let c = dist.sample(&mut rng);
            counts[c.reasoning[0]] += 1;
            dcounts[c.decision.index()] += 1;
        }
        let check = |count: usize, lp: f64| {
            let p = lp.exp();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((count as f64 / n as f64 - p).abs() < 4.0 * se, "{count} vs {p}");
        };
        for (c, lp) in counts.iter().zip(&dist.reasoning_log_probs) {
            check(*c, *lp);
        }
        for (c, lp) in dcounts.iter().zip(&dist.decision_log_probs) {
            check(*c, *lp);
        }
    }

    #[test]
    fn saturated_token_has_tiny_gradient() {
        let mut p = tiny(3, 2, 1);
        p.weights.decision_bias = vec![40.0, 0.0, 0.0];
        p.weights.reasoning_bias = vec![40.0, 0.0, 0.0];
        let c = SampledCompletion::from_tokens(&p, &["t0"], "<A>").unwrap();
        let g = grad_logprob(&p, &[0.6, 0.8], &c, 1.0).unwrap();
        assert!(g.max_abs() < 1e-15);
    }

    #[test]
    fn decision_gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut p = tiny(5, 4, 3);
        randomize(&mut p, &mut rng, 1.0);
        let x = unit_features(&mut rng, 4);
        let c = sample(&p, &x, 1.0, &mut rng).unwrap();
        let g = grad_logprob(&p, &x, &c, 1.0).unwrap();
        for j in 0..4 {
            let s: f64 = (0..3).map(|v| g.decision_weights[v * 4 + j]).sum();
            assert!(s.abs() < 1e-12);
        }
        assert!(g.decision_bias.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-5;
        for _ in 0..10 {
            let mut p = tiny(6, 3, 4);
            randomize(&mut p, &mut rng, 0.8);
            let x = unit_features(&mut rng, 3);
            let t = 0.5 + rng.random::<f64>();
            let c = sample(&p, &x, t, &mut rng).unwrap();
            let g = grad_logprob(&p, &x, &c, t).unwrap();
            for i in 0..p.weights.len() {
                let orig = p.weights.get(i);
                p.weights.set(i, orig + h);
                let up = logprob(&p, &x, &c, t).unwrap();
                p.weights.set(i, orig - h);
                let down = logprob(&p, &x, &c, t).unwrap();
                p.weights.set(i, orig);
                let fd = (up - down) / (2.0 * h);
                let a = g.get(i);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "coord {i}: analytic {a} fd {fd}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = PolicyParams::new(&KeywordConfig::default(), DEFAULT_FILLERS, DEFAULT_SLOTS, Featurizer::hashing(16, 1)).unwrap();
        randomize(&mut p, &mut rng, 1.0);
        p.covers_keywords(&KeywordConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        p.save(&path).unwrap();
        assert_eq!(PolicyParams::load(&path).unwrap(), p);

        let mut old = p.clone();
        old.format_version = 0;
        old.save(&path).unwrap();
        assert!(matches!(PolicyParams::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn default_vocabulary_layout() {
        let kw = KeywordConfig::default();
        let p = PolicyParams::new(&kw, DEFAULT_FILLERS, DEFAULT_SLOTS, Featurizer::latent(8)).unwrap();
        assert_eq!(p.vocab_size(), kw.all_keywords().len() + 50);
        assert!(p.vocab.contains(&"greatest good".to_string()));
        assert_eq!(p.slots, 12);
    }
}

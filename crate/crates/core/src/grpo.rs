//! Group relative policy optimization for the toy policy.
//!
//! Each step takes the next training scenario, draws a group of `G`
//! completions at the generation temperature, scores them with the composite
//! reward for the target framework and normalizes the rewards within the
//! group. One AdamW update is made on the clipped surrogate with a KL
//! penalty toward the frozen initial policy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Scenario};
use crate::error::{Error, Result};
use crate::eval::{ood_evaluate, AlignmentReport, CurvePoint, EvalConfig};
use crate::framework::{Decision, FrameworkId, UTILITARIAN};
use crate::policy::{
    accumulate_logprob_grad, Featurizer, PolicyParams, PolicyWeights, SampledCompletion, DEFAULT_FILLERS,
    DEFAULT_SLOTS,
};
use crate::reward::{total_reward, KeywordConfig};

/// Shape of the policy a run starts from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub slots: usize,
    pub fillers: usize,
    pub featurizer: Featurizer,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            slots: DEFAULT_SLOTS,
            fillers: DEFAULT_FILLERS,
            featurizer: Featurizer::hashing(64, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub max_steps: usize,
    pub lr: f64,
    pub gen_temperature: f64,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub std_floor: f64,
    pub seed: u64,
    pub target_framework: FrameworkId,
    /// OOD evaluation and checkpoint interval in steps (0 disables).
    pub eval_every: usize,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    /// Desk-scale constants.
    pub fn toy() -> Self {
        TrainConfig {
            lr: 1e-2,
            ..Self::paper()
        }
    }

    /// Published hyperparameters, including the learning rate sized for a
    /// multi-billion-parameter model.
    pub fn paper() -> Self {
        TrainConfig {
            group_size: 4,
            max_steps: 150,
            lr: 5e-6,
            gen_temperature: 1.0,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            std_floor: 1e-8,
            seed: 0,
            target_framework: FrameworkId::new(UTILITARIAN),
            eval_every: 25,
            policy: PolicyConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip_epsilon must lie in (0, 1), got {}", self.clip_epsilon));
        }
        if !(self.kl_beta >= 0.0) {
            return bad(format!("kl_beta must be non-negative, got {}", self.kl_beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.gen_temperature > 0.0) {
            return Err(Error::Temperature(self.gen_temperature));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.weight_decay < 0.0 || self.adam_eps <= 0.0 || self.std_floor < 0.0 {
            return bad("weight_decay, adam_eps and std_floor must be non-negative (eps positive)".into());
        }
        Ok(())
    }

    /// Learning rate after `step` completed updates.
    pub fn lr_at(&self, step: usize) -> f64 {
        let frac = step.min(self.max_steps) as f64 / self.max_steps as f64;
        self.lr * (1.0 - frac)
    }
}

/// `(r − mean) / (sample std + floor)`; a zero-variance group gives zeros.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::Config(format!("a group needs at least 2 rewards, got {g}")));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (g - 1) as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / (std + std_floor)).collect())
}

/// Per-token KL estimate `exp(δ) − δ − 1` with `δ = log_ref − log_cur`.
pub fn kl_estimator(log_ref: f64, log_cur: f64) -> f64 {
    let d = log_ref - log_cur;
    d.exp_m1() - d
}

/// One completion with its features and sequence advantage.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub features: Vec<f64>,
    pub completion: SampledCompletion,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: PolicyWeights,
    pub mean_kl: f64,
    pub clipped_fraction: f64,
}

fn divergence(detail: impl Into<String>) -> Error {
    Error::Divergence {
        step: 0,
        detail: detail.into(),
    }
}

/// Clipped surrogate with KL penalty, averaged over every token of the
/// batch, and its exact gradient.
pub fn grpo_loss(
    params: &PolicyParams,
    reference: &PolicyParams,
    batch: &[BatchItem],
    config: &TrainConfig,
) -> Result<LossOutput> {
    let t = config.gen_temperature;
    let eps = config.clip_epsilon;
    let beta = config.kl_beta;
    let tokens: usize = batch.iter().map(|b| b.completion.token_count()).sum();
    if tokens == 0 {
        return Err(Error::Data("empty GRPO batch".into()));
    }
    let n = tokens as f64;

    let mut grad = params.weights.zeros_like();
    let mut objective = 0.0;
    let mut kl_total = 0.0;
    let mut clipped = 0usize;
    for item in batch {
        let c = &item.completion;
        if c.log_probs.len() != c.token_count() {
            return Err(Error::Data("completion lacks behavior log-probs".into()));
        }
        let cur = params.distributions(&item.features, t)?;
        let refd = reference.distributions(&item.features, t)?;
        let lp = |d: &crate::policy::SlotDistributions, slot: usize| {
            if slot < c.reasoning.len() {
                d.reasoning_log_probs[c.reasoning[slot]]
            } else {
                d.decision_log_probs[c.decision.index()]
            }
        };
        let a = item.advantage;
        let mut coefs = Vec::with_capacity(c.token_count());
        for slot in 0..c.token_count() {
            let lp_cur = lp(&cur, slot);
            let lp_ref = lp(&refd, slot);
            let ratio = (lp_cur - c.log_probs[slot]).exp();
            let clipped_ratio = ratio.clamp(1.0 - eps, 1.0 + eps);
            let surrogate = (ratio * a).min(clipped_ratio * a);
            let kl = kl_estimator(lp_ref, lp_cur);
            objective += surrogate - beta * kl;
            kl_total += kl;

            let clip_active = (a > 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps);
            if clip_active {
                clipped += 1;
            }
            let d_surrogate = if clip_active { 0.0 } else { a * ratio };
            let d_kl = 1.0 - (lp_ref - lp_cur).exp();
            coefs.push(-(d_surrogate - beta * d_kl) / n);
        }
        accumulate_logprob_grad(params, &item.features, c, &cur, &coefs, &mut grad);
    }
    let loss = -objective / n;
    if !loss.is_finite() {
        return Err(divergence(format!("loss is {loss}")));
    }
    if !grad.all_finite() {
        return Err(divergence("gradient has non-finite entries"));
    }
    Ok(LossOutput {
        loss,
        grad,
        mean_kl: kl_total / n,
        clipped_fraction: clipped as f64 / n,
    })
}

/// AdamW with decoupled weight decay on matrix entries only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub m: PolicyWeights,
    pub v: PolicyWeights,
    pub t: u64,
}

impl AdamW {
    pub fn new(like: &PolicyWeights) -> Self {
        AdamW {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, weights: &mut PolicyWeights, grad: &PolicyWeights, lr: f64, config: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (config.adam_beta1, config.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = 1.0 - lr * config.weight_decay;
        for i in 0..weights.len() {
            let mut w = weights.get(i);
            if weights.is_matrix_entry(i) {
                w *= decay;
            }
            let g = grad.get(i);
            let m = b1 * self.m.get(i) + (1.0 - b1) * g;
            let v = b2 * self.v.get(i) + (1.0 - b2) * g * g;
            self.m.set(i, m);
            self.v.set(i, v);
            w -= lr * (m / c1) / ((v / c2).sqrt() + config.adam_eps);
            weights.set(i, w);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub mean_reward: f64,
    pub mean_r_align: f64,
    pub mean_r_keyword: f64,
    pub mean_kl: f64,
    pub loss: f64,
    pub unclear_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub optimizer: AdamW,
    pub metrics: Vec<StepMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub params: PolicyParams,
    pub report: Option<AlignmentReport>,
}

impl Checkpoint {
    pub fn name(&self) -> String {
        format!("ckpt_step{}", self.step)
    }
}

/// Progress callbacks. Returning an error aborts the run.
pub enum TrainEvent<'a> {
    Step(&'a StepMetrics),
    Checkpoint(&'a Checkpoint),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<StepMetrics>,
    pub checkpoints: Vec<Checkpoint>,
    pub ood_curve: Vec<CurvePoint>,
}

impl TrainOutcome {
    pub fn metrics_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.metrics {
            out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
            out.push('\n');
        }
        out
    }
}

pub fn train(
    split: &CorpusSplit,
    keywords: &KeywordConfig,
    config: &TrainConfig,
    eval_config: &EvalConfig,
) -> Result<TrainOutcome> {
    train_with(split, keywords, config, eval_config, |_| Ok(()))
}

fn make_checkpoint(state: &TrainState, split: &CorpusSplit, eval_config: &EvalConfig) -> Result<Checkpoint> {
    let report = if split.eval.is_empty() {
        None
    } else {
        let mut r = ood_evaluate(&state.params, split, eval_config)?;
        r.checkpoint = Some(format!("ckpt_step{}", state.step));
        Some(r)
    };
    Ok(Checkpoint {
        step: state.step,
        params: state.params.clone(),
        report,
    })
}

fn sample_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Training loop with an observer that sees every step and checkpoint as
/// it happens, so a caller can persist progress before a later failure.
pub fn train_with(
    split: &CorpusSplit,
    keywords: &KeywordConfig,
    config: &TrainConfig,
    eval_config: &EvalConfig,
    mut observer: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    eval_config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let target = split.frameworks.resolve(config.target_framework.as_str())?;
    if let Some(s) = split.train.iter().find(|s| !s.labels.contains(&target)) {
        return Err(Error::Data(format!("scenario {} has no label for {target}", s.id)));
    }
    split.verify_disjoint()?;
    let keyset = keywords.set_for(&target)?;

    let pc = config.policy;
    let params = PolicyParams::new(keywords, pc.fillers, pc.slots, pc.featurizer)?;
    let features = split
        .train
        .iter()
        .map(|s| params.featurizer.featurize(s))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    order.shuffle(&mut sample_stream(config.seed, 0));

    let mut state = TrainState {
        step: 0,
        reference: params.clone(),
        optimizer: AdamW::new(&params.weights),
        params,
        metrics: Vec::with_capacity(config.max_steps),
    };
    let mut checkpoints = Vec::new();

    if config.eval_every > 0 {
        let ck = make_checkpoint(&state, split, eval_config)?;
        observer(TrainEvent::Checkpoint(&ck))?;
        checkpoints.push(ck);
    }

    let g = config.group_size;
    for step in 1..=config.max_steps {
        let idx = order[(step - 1) % order.len()];
        let scenario: &Scenario = &split.train[idx];
        let x = &features[idx];
        let dist = state.params.distributions(x, config.gen_temperature)?;

        let mut completions = Vec::with_capacity(g);
        let mut rewards = Vec::with_capacity(g);
        let (mut sum_align, mut sum_kw, mut unclear) = (0.0, 0.0, 0usize);
        for j in 0..g {
            let stream = 1 + ((step - 1) * g + j) as u64;
            let c = dist.sample(&mut sample_stream(config.seed, stream));
            let r = total_reward(&c.to_completion(&state.params), scenario, &target, &keyset);
            sum_align += r.r_align;
            sum_kw += r.r_keyword;
            if r.extracted_decision == Decision::Unclear {
                unclear += 1;
            }
            rewards.push(r.r_total);
            completions.push(c);
        }
        let advantages = group_advantages(&rewards, config.std_floor)?;
        let batch: Vec<BatchItem> = completions
            .into_iter()
            .zip(&advantages)
            .map(|(completion, &advantage)| BatchItem {
                features: x.clone(),
                completion,
                advantage,
            })
            .collect();

        let out = grpo_loss(&state.params, &state.reference, &batch, config).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { step, detail },
            other => other,
        })?;
        let lr = config.lr_at(step - 1);
        let mut next = state.params.weights.clone();
        state.optimizer.step(&mut next, &out.grad, lr, config);
        if !next.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: "parameters became non-finite".into(),
            });
        }
        state.params.weights = next;
        state.step = step;

        let gf = g as f64;
        let m = StepMetrics {
            step,
            lr,
            mean_reward: rewards.iter().sum::<f64>() / gf,
            mean_r_align: sum_align / gf,
            mean_r_keyword: sum_kw / gf,
            mean_kl: out.mean_kl,
            loss: out.loss,
            unclear_rate: unclear as f64 / gf,
        };
        observer(TrainEvent::Step(&m))?;
        state.metrics.push(m);

        if config.eval_every > 0 && (step % config.eval_every == 0 || step == config.max_steps) {
            let ck = make_checkpoint(&state, split, eval_config)?;
            observer(TrainEvent::Checkpoint(&ck))?;
            checkpoints.push(ck);
        }
    }

    let ood_curve = checkpoints
        .iter()
        .filter_map(|c| {
            c.report.as_ref().map(|r| CurvePoint {
                step: c.step,
                report: r.clone(),
            })
        })
        .collect();
    Ok(TrainOutcome {
        params: state.params,
        metrics: state.metrics,
        checkpoints,
        ood_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{prepare_split, DisagreementRule, SplitRule};
    use crate::policy::sample;
    use crate::synth::{generate_synthetic, SynthConfig};
    use proptest::prelude::*;
    use rand::Rng;
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

    fn features(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()).collect()
    }

    fn oracle_advantages(r: &[f64]) -> Vec<f64> {
        let n = r.len() as f64;
        let mut mean = 0.0;
        for x in r {
            mean += x;
        }
        mean /= n;
        let mut ss = 0.0;
        for x in r {
            ss += (x - mean) * (x - mean);
        }
        let sd = (ss / (n - 1.0)).sqrt();
        r.iter().map(|x| (x - mean) / (sd + 1e-8)).collect()
    }

    #[test]
    fn advantages_of_one_to_four() {
        let a = group_advantages(&[1.0, 2.0, 3.0, 4.0], 1e-8).unwrap();
        let o = oracle_advantages(&[1.0, 2.0, 3.0, 4.0]);
        for (x, y) in a.iter().zip(&o) {
            assert!((x - y).abs() < 1e-15);
        }
        // sd = sqrt(5/3)
        assert!((a[0] + 1.5 / (5.0f64 / 3.0).sqrt()).abs() < 1e-7);
        assert_eq!(group_advantages(&[5.0; 4], 1e-8).unwrap(), vec![0.0; 4]);
        assert!(group_advantages(&[1.0], 1e-8).is_err());
    }

    #[test]
    fn lr_schedule_endpoints() {
        let c = TrainConfig::toy();
        assert_eq!(c.lr_at(0), 1e-2);
        assert_eq!(c.lr_at(150), 0.0);
        assert!((c.lr_at(75) - 5e-3).abs() < 1e-18);
        assert_eq!(TrainConfig::paper().lr, 5e-6);
    }

    #[test]
    fn config_invariants() {
        for c in [
            TrainConfig { group_size: 1, ..TrainConfig::toy() },
            TrainConfig { clip_epsilon: 1.0, ..TrainConfig::toy() },
            TrainConfig { kl_beta: -0.1, ..TrainConfig::toy() },
            TrainConfig { lr: 0.0, ..TrainConfig::toy() },
        ] {
            assert!(c.validate().is_err());
        }
        TrainConfig::paper().validate().unwrap();
    }

    fn random_batch(rng: &mut ChaCha8Rng, behavior: &PolicyParams, n: usize, t: f64) -> Vec<BatchItem> {
        (0..n)
            .map(|_| {
                let x = features(rng, behavior.dim());
                let completion = sample(behavior, &x, t, rng).unwrap();
                BatchItem {
                    features: x,
                    completion,
                    advantage: rng.sample(StandardNormal),
                }
            })
            .collect()
    }

    #[test]
    fn on_policy_loss_is_negative_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = tiny(6, 4, 3);
        randomize(&mut p, &mut rng, 0.5);
        let cfg = TrainConfig::toy();
        let batch = random_batch(&mut rng, &p, 4, cfg.gen_temperature);
        let out = grpo_loss(&p, &p, &batch, &cfg).unwrap();
        let tokens: Vec<f64> = batch
            .iter()
            .flat_map(|b| std::iter::repeat_n(b.advantage, b.completion.token_count()))
            .collect();
        let mean_a = tokens.iter().sum::<f64>() / tokens.len() as f64;
        assert!((out.loss + mean_a).abs() < 1e-12);
        assert_eq!(out.mean_kl, 0.0);
        assert_eq!(out.clipped_fraction, 0.0);

        let mut expected = p.weights.zeros_like();
        let n = tokens.len() as f64;
        for b in &batch {
            let g = crate::policy::grad_logprob(&p, &b.features, &b.completion, cfg.gen_temperature).unwrap();
            expected.add_scaled(&g, -b.advantage / n);
        }
        for i in 0..expected.len() {
            assert!((out.grad.get(i) - expected.get(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_advantage_without_kl_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = tiny(5, 3, 2);
        randomize(&mut p, &mut rng, 0.5);
        let mut reference = p.clone();
        randomize(&mut reference, &mut rng, 0.5);
        let cfg = TrainConfig { kl_beta: 0.0, ..TrainConfig::toy() };
        let mut batch = random_batch(&mut rng, &reference, 3, 1.0);
        batch.iter_mut().for_each(|b| b.advantage = 0.0);
        let out = grpo_loss(&p, &reference, &batch, &cfg).unwrap();
        assert_eq!(out.grad.max_abs(), 0.0);
    }

    pub(crate) fn full_loss_fd_check(rng: &mut ChaCha8Rng) -> f64 {
        let mut behavior = tiny(5, 3, 3);
        randomize(&mut behavior, rng, 0.6);
        let mut reference = behavior.clone();
        randomize(&mut reference, rng, 0.6);
        let mut p = behavior.clone();
        for w in p.weights.iter_mut() {
            *w += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        let cfg = TrainConfig {
            gen_temperature: 0.8,
            ..TrainConfig::toy()
        };
        let batch = random_batch(rng, &behavior, 4, cfg.gen_temperature);
        let g = grpo_loss(&p, &reference, &batch, &cfg).unwrap().grad;
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.weights.len() {
            let orig = p.weights.get(i);
            p.weights.set(i, orig + h);
            let up = grpo_loss(&p, &reference, &batch, &cfg).unwrap().loss;
            p.weights.set(i, orig - h);
            let down = grpo_loss(&p, &reference, &batch, &cfg).unwrap().loss;
            p.weights.set(i, orig);
            let fd = (up - down) / (2.0 * h);
            let a = g.get(i);
            // a coordinate sitting on a clip boundary has no derivative
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let worst = full_loss_fd_check(&mut rng);
            assert!(worst < 1e-3, "relative error {worst}");
        }
    }

    #[test]
    fn clipped_tokens_carry_no_surrogate_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let behavior = tiny(4, 2, 1);
        let mut p = behavior.clone();
        let cfg = TrainConfig { kl_beta: 0.0, ..TrainConfig::toy() };
        let mut batch = random_batch(&mut rng, &behavior, 1, 1.0);
        batch[0].advantage = 1.0;
        let d = batch[0].completion.decision.index();
        p.weights.decision_bias[d] = 5.0;
        let out = grpo_loss(&p, &behavior, &batch, &cfg).unwrap();
        // decision ratio ≫ 1 + ε with positive advantage: clipped
        assert!(out.clipped_fraction > 0.0);
        assert!(out.grad.decision_bias.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = tiny(3, 2, 1);
        p.weights.iter_mut().for_each(|w| *w = 1.0);
        let cfg = TrainConfig::toy();
        let mut opt = AdamW::new(&p.weights);
        let zero = p.weights.zeros_like();
        let mut w = p.weights.clone();
        opt.step(&mut w, &zero, 0.1, &cfg);
        assert!(w.reasoning_weights.iter().all(|v| (*v - (1.0 - 0.1 * 0.01)).abs() < 1e-15));
        assert!(w.decision_weights.iter().all(|v| (*v - 0.999).abs() < 1e-15));
        assert!(w.reasoning_bias.iter().chain(&w.decision_bias).all(|v| *v == 1.0));
    }

    fn toy_split(seed: u64) -> CorpusSplit {
        let corpus = generate_synthetic(&SynthConfig {
            seed,
            noise_rate: 0.05,
            ..SynthConfig::default()
        })
        .unwrap();
        prepare_split(&corpus, Some(DisagreementRule::NoUnanimousAction), SplitRule::PROPORTIONAL).unwrap()
    }

    #[test]
    fn seeded_runs_are_identical() {
        let split = toy_split(7);
        let cfg = TrainConfig {
            max_steps: 20,
            eval_every: 10,
            seed: 7,
            ..TrainConfig::toy()
        };
        let a = train(&split, &KeywordConfig::default(), &cfg, &EvalConfig::default()).unwrap();
        let b = train(&split, &KeywordConfig::default(), &cfg, &EvalConfig::default()).unwrap();
        assert_eq!(a.metrics_jsonl(), b.metrics_jsonl());
        assert_eq!(a.params, b.params);
        assert_eq!(a.checkpoints.iter().map(|c| c.step).collect::<Vec<_>>(), vec![0, 10, 20]);
        assert_eq!(a.checkpoints[1].name(), "ckpt_step10");
        let c = train(&split, &KeywordConfig::default(), &TrainConfig { seed: 8, ..cfg }, &EvalConfig::default()).unwrap();
        assert_ne!(a.metrics_jsonl(), c.metrics_jsonl());
    }

    #[test]
    fn baseline_checkpoint_is_uniform() {
        let split = toy_split(3);
        let cfg = TrainConfig {
            max_steps: 1,
            eval_every: 1,
            ..TrainConfig::toy()
        };
        let out = train(&split, &KeywordConfig::default(), &cfg, &EvalConfig::default()).unwrap();
        let base = &out.ood_curve[0].report;
        for s in &base.softmax {
            assert!((s - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(out.metrics[0].lr, 1e-2);
    }

    #[test]
    fn unknown_target_rejected() {
        let split = toy_split(3);
        let cfg = TrainConfig {
            target_framework: FrameworkId::new("care"),
            ..TrainConfig::toy()
        };
        let err = train(&split, &KeywordConfig::default(), &cfg, &EvalConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownFramework { .. }));
    }

    proptest! {
        #[test]
        fn advantages_centered_and_unit_std(r in prop::collection::vec(-3.0f64..5.0, 2..16)) {
            let a = group_advantages(&r, 1e-8).unwrap();
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let spread = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - r.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-6 {
                let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                prop_assert!((sd - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn kl_estimator_non_negative(a in -30.0f64..0.0, b in -30.0f64..0.0) {
            prop_assert!(kl_estimator(a, b) >= 0.0);
        }
    }
}

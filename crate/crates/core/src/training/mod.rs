//! Losses, the policy-gradient estimator, captioner training and classifier
//! pretraining.

mod classifier;
mod schedule;
pub mod toy;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use classifier::{
    classifier_accuracy, cross_entropy, labeled_captions, pretrain_classifier, ClassifierEpoch,
    ClassifierRun, ClassifierTrainConfig,
};
pub use schedule::{
    evaluate_split, joint, lr_schedule, train, warmup, EpochLog, Phase, SplitEval, TrainOutcome,
    WarmStart, BEST_CHECKPOINT, METRICS_FILE, METRICS_HEADER, WARMUP_CHECKPOINT,
};

use crate::dataset::{AttributeVocab, FeatureGrid, Item};
use crate::error::{Error, Result};
use crate::metrics::phrase_ids;
use crate::models::{AttributeOutput, Captioner, Encoded, TextClassifier};
use crate::rewards::{als_reward, combined_reward, sls_rewards, AttributeMatcher, RewardConfig};
use crate::tensor::{Tape, Var};
use crate::text::{Vocab, EOS};

/// Probability clipping of the attribute loss.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the policy-gradient loss.
    pub rl_weight: f64,
    /// Weight of the attribute loss.
    pub attr_weight: f64,
    pub rewards: RewardConfig,
    /// Sampled captions per item for the policy gradient.
    pub samples: usize,
    pub lr: f64,
    pub anneal_factor: f64,
    pub anneal_every: usize,
    /// Warm-up stops after this many epochs without a better validation NLL.
    pub patience: usize,
    pub max_warmup_epochs: usize,
    pub joint_epochs: usize,
    /// Learning rate at the start of joint training; `None` continues the
    /// warm-up schedule.
    pub joint_lr: Option<f64>,
    pub batch_size: usize,
    pub max_len: usize,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rl_weight: 1.0,
            attr_weight: 1.0,
            rewards: RewardConfig::default(),
            samples: 5,
            lr: 1e-4,
            anneal_factor: 0.9,
            anneal_every: 2,
            patience: 3,
            max_warmup_epochs: 100,
            joint_epochs: 20,
            joint_lr: None,
            batch_size: 32,
            max_len: 25,
            grad_clip: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.samples < 2 {
            return bad("samples per item must be at least 2");
        }
        if self.rl_weight < 0.0 || self.attr_weight < 0.0 {
            return bad("loss weights must be nonnegative");
        }
        if self.lr <= 0.0 || self.joint_lr.is_some_and(|l| l <= 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) || self.anneal_every == 0 {
            return bad("anneal factor must be in (0, 1] and anneal_every at least 1");
        }
        if self.batch_size == 0 || self.max_len == 0 || self.max_warmup_epochs == 0 {
            return bad("batch_size, max_len and max_warmup_epochs must be positive");
        }
        if self.grad_clip < 0.0 {
            return bad("grad_clip must be nonnegative");
        }
        self.rewards.validate()
    }
}

/// One item ready for training: features, caption ids and label vector.
#[derive(Clone, Debug)]
pub struct Example<'a> {
    pub item: &'a Item,
    pub grid: &'a FeatureGrid,
    /// Caption word ids without `BOS`/`EOS`.
    pub words: Vec<usize>,
    /// Decoder targets: the words followed by `EOS`.
    pub targets: Vec<usize>,
    pub labels: Vec<f64>,
}

pub fn prepare<'a>(
    items: &[&'a Item],
    vocab: &Vocab,
    n_attributes: usize,
) -> Result<Vec<Example<'a>>> {
    items
        .iter()
        .map(|&item| {
            let ids = vocab.encode(&item.caption);
            let words = ids[1..ids.len() - 1].to_vec();
            let mut targets = words.clone();
            targets.push(EOS);
            if let Some(&a) = item.attributes.iter().find(|&&a| a >= n_attributes) {
                return Err(Error::Config(format!(
                    "item `{}` has attribute {a} but the model predicts {n_attributes}",
                    item.id
                )));
            }
            Ok(Example {
                item,
                grid: item.features()?,
                words,
                targets,
                labels: item.attribute_labels(n_attributes),
            })
        })
        .collect()
}

/// Everything needed to score generated captions.
#[derive(Clone, Debug)]
pub struct RewardContext<'a> {
    pub classifier: &'a TextClassifier,
    pub matcher: AttributeMatcher<usize>,
    /// Attribute phrases as word ids, for mAP.
    pub phrases: Vec<Vec<usize>>,
    pub config: RewardConfig,
}

impl<'a> RewardContext<'a> {
    pub fn new(
        classifier: &'a TextClassifier,
        attributes: &AttributeVocab,
        vocab: &Vocab,
        config: RewardConfig,
    ) -> Self {
        Self {
            classifier,
            matcher: AttributeMatcher::from_vocab_ids(attributes, vocab),
            phrases: phrase_ids(attributes, vocab),
            config,
        }
    }
}

/// Reward of one caption and its two components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardParts {
    pub als: f64,
    pub sls: f64,
    pub total: f64,
}

/// Rewards captions against their references and target categories. An
/// empty caption gets no attribute reward.
pub fn score_captions(
    ctx: &RewardContext,
    captions: &[&[usize]],
    references: &[&[usize]],
    categories: &[usize],
) -> Result<Vec<RewardParts>> {
    if captions.len() != references.len() {
        return Err(Error::Config(format!(
            "{} captions for {} references",
            captions.len(),
            references.len()
        )));
    }
    let sls = if ctx.config.sls_weight > 0.0 {
        sls_rewards(ctx.classifier, captions, categories)?
    } else {
        vec![0.0; captions.len()]
    };
    captions
        .iter()
        .zip(references)
        .zip(sls)
        .map(|((c, r), sls)| {
            let als = if c.is_empty() || ctx.config.als_weight == 0.0 {
                0.0
            } else {
                als_reward(c, r, &ctx.matcher)?.reward
            };
            Ok(RewardParts {
                als,
                sls,
                total: combined_reward(als, sls, &ctx.config),
            })
        })
        .collect()
}

/// Encoder output and attribute prediction for a batch.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub enc: Encoded,
    pub attrs: AttributeOutput,
}

pub fn forward(tape: &mut Tape, model: &Captioner, batch: &[&Example]) -> Result<Forward> {
    let grids: Vec<&FeatureGrid> = batch.iter().map(|e| e.grid).collect();
    let enc = model.encode(tape, &grids)?;
    let attrs = model.predict_attributes(tape, &enc)?;
    Ok(Forward { enc, attrs })
}

/// Teacher-forced negative log-likelihood, summed over each caption's
/// tokens (including `EOS`) and averaged over the batch.
pub fn mle_loss(
    tape: &mut Tape,
    model: &Captioner,
    fwd: &Forward,
    batch: &[&Example],
) -> Result<Var> {
    let targets: Vec<&[usize]> = batch.iter().map(|e| e.targets.as_slice()).collect();
    let nll = model.nll(tape, &fwd.enc, fwd.attrs.z, &targets)?;
    Ok(tape.scale(nll, 1.0 / batch.len() as f64))
}

/// Mean per-attribute binary cross-entropy.
pub fn attribute_loss(tape: &mut Tape, probs: Var, labels: &[f64]) -> Result<Var> {
    tape.binary_cross_entropy(probs, labels, BCE_EPS)
}

/// Per-item baselines (mean of that item's `samples` rewards) and
/// per-sample advantages. Groups whose rewards are all equal get exactly
/// zero advantage.
pub fn advantages(rewards: &[f64], samples: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples < 2 || !rewards.len().is_multiple_of(samples) {
        return Err(Error::Config(format!(
            "{} rewards cannot be grouped by {samples} samples",
            rewards.len()
        )));
    }
    let mut baselines = Vec::with_capacity(rewards.len() / samples);
    let mut adv = Vec::with_capacity(rewards.len());
    for group in rewards.chunks(samples) {
        let b = group.iter().sum::<f64>() / samples as f64;
        baselines.push(b);
        if group.iter().all(|&r| r == group[0]) {
            adv.extend(std::iter::repeat_n(0.0, samples));
        } else {
            adv.extend(group.iter().map(|r| r - b));
        }
    }
    Ok((baselines, adv))
}

/// Policy-gradient surrogate for `items` items with `samples` captions
/// each: `-sum_j adv_j * log p(caption_j) / ((samples - 1) * items)`.
///
/// `log_probs` is `[items * samples, steps]` and `mask` marks emitted tokens.
/// With the baseline averaged over all of an item's samples, the
/// `samples - 1` divisor makes the gradient an unbiased estimate of
/// `-grad E[r]`; the advantages act as constants.
pub fn reinforce_surrogate(
    tape: &mut Tape,
    log_probs: Var,
    mask: &[f64],
    advantages: &[f64],
    samples: usize,
) -> Result<Var> {
    let rows = advantages.len();
    if samples < 2 || rows == 0 || !rows.is_multiple_of(samples) || !mask.len().is_multiple_of(rows)
    {
        return Err(Error::Config(format!(
            "surrogate over {rows} rows, {samples} samples per item and {} mask entries",
            mask.len()
        )));
    }
    let steps = mask.len() / rows;
    let items = rows / samples;
    let scale = -1.0 / ((samples - 1) * items) as f64;
    let weights: Vec<f64> = mask
        .iter()
        .enumerate()
        .map(|(i, m)| m * advantages[i / steps] * scale)
        .collect();
    tape.dot_const(log_probs, &weights)
}

/// Rewards and baselines of one policy-gradient step.
#[derive(Clone, Debug, Default)]
pub struct ReinforceStats {
    pub rewards: Vec<RewardParts>,
    pub baselines: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl ReinforceStats {
    pub fn mean(&self, f: impl Fn(&RewardParts) -> f64) -> f64 {
        if self.rewards.is_empty() {
            return 0.0;
        }
        self.rewards.iter().map(f).sum::<f64>() / self.rewards.len() as f64
    }
}

/// Samples `cfg.samples` captions per item, scores them, and returns the
/// surrogate loss.
pub fn reinforce_loss<R: Rng>(
    tape: &mut Tape,
    model: &Captioner,
    fwd: &Forward,
    batch: &[&Example],
    ctx: &RewardContext,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(Var, ReinforceStats)> {
    let samples = cfg.samples;
    let enc = model.repeat_encoded(tape, &fwd.enc, samples)?;
    let z = tape.repeat_rows(fwd.attrs.z, samples)?;
    let drawn = model.sample(tape, &enc, z, cfg.max_len, rng)?;
    let captions: Vec<&[usize]> = drawn.sequences.iter().map(|s| s.words()).collect();
    let refs: Vec<&[usize]> = batch
        .iter()
        .flat_map(|e| std::iter::repeat_n(e.words.as_slice(), samples))
        .collect();
    let cats: Vec<usize> = batch
        .iter()
        .flat_map(|e| std::iter::repeat_n(e.item.category, samples))
        .collect();
    let rewards = score_captions(ctx, &captions, &refs, &cats)?;
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    let (baselines, adv) = advantages(&totals, samples)?;
    let loss = reinforce_surrogate(tape, drawn.log_probs, &drawn.mask, &adv, samples)?;
    Ok((
        loss,
        ReinforceStats {
            rewards,
            baselines,
            advantages: adv,
        },
    ))
}

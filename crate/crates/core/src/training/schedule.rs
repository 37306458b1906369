use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    attribute_loss, forward, mle_loss, reinforce_loss, score_captions, Example, RewardContext,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::models::Captioner;
use crate::tensor::{save_checkpoint, Adam, AdamConfig, ParamStore, Tape};

const EVAL_CHUNK: usize = 64;

/// RNG streams derived from the run seed.
const SHUFFLE_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `lr * factor^(epoch / every)`.
pub fn lr_schedule(lr: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    lr * factor.powi((epoch / every.max(1)) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Joint => "joint",
        }
    }
}

/// Greedy-decoding results on one split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    /// Mean teacher-forced NLL per item.
    pub mle: f64,
    /// Mean combined reward of the greedy captions.
    pub reward: f64,
    pub als: f64,
    pub sls: f64,
    pub report: EvalReport,
    #[serde(skip)]
    pub captions: Vec<Vec<usize>>,
}

pub fn evaluate_split(
    model: &Captioner,
    examples: &[Example],
    ctx: &RewardContext,
    max_len: usize,
) -> Result<SplitEval> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut nll = 0.0;
    let mut captions = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_CHUNK) {
        let batch: Vec<&Example> = chunk.iter().collect();
        let mut tape = Tape::with_params(model.store());
        let fwd = forward(&mut tape, model, &batch)?;
        let targets: Vec<&[usize]> = batch.iter().map(|e| e.targets.as_slice()).collect();
        let l = model.nll(&mut tape, &fwd.enc, fwd.attrs.z, &targets)?;
        nll += tape.value(l).item();
        let out = model.greedy(&mut tape, &fwd.enc, fwd.attrs.z, max_len)?;
        captions.extend(out.sequences.iter().map(|s| s.words().to_vec()));
    }
    let refs: Vec<Vec<usize>> = examples.iter().map(|e| e.words.clone()).collect();
    let cats: Vec<usize> = examples.iter().map(|e| e.item.category).collect();
    let truth: Vec<Vec<usize>> = examples.iter().map(|e| e.item.attributes.clone()).collect();
    let cap_refs: Vec<&[usize]> = captions.iter().map(Vec::as_slice).collect();
    let ref_refs: Vec<&[usize]> = refs.iter().map(Vec::as_slice).collect();
    let parts = score_captions(ctx, &cap_refs, &ref_refs, &cats)?;
    let n = examples.len() as f64;
    let report = evaluate(
        &captions,
        &refs,
        &truth,
        &cats,
        &ctx.phrases,
        ctx.classifier,
    )?;
    Ok(SplitEval {
        mle: nll / n,
        reward: parts.iter().map(|p| p.total).sum::<f64>() / n,
        als: parts.iter().map(|p| p.als).sum::<f64>() / n,
        sls: parts.iter().map(|p| p.sls).sum::<f64>() / n,
        report,
        captions,
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub train_mle: f64,
    pub train_attr: f64,
    pub train_rl: f64,
    pub train_als: f64,
    pub train_sls: f64,
    pub val: SplitEval,
}

pub const METRICS_HEADER: &str =
    "epoch,phase,lr,train_mle,train_attr,train_rl,train_als,train_sls,\
val_mle,val_reward,val_als,val_sls,val_bleu4,val_rouge_l,val_cider,val_map,val_acc";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let r = &self.val.report;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.phase.as_str(),
            self.lr,
            self.train_mle,
            self.train_attr,
            self.train_rl,
            self.train_als,
            self.train_sls,
            self.val.mle,
            self.val.reward,
            self.val.als,
            self.val.sls,
            r.bleu4,
            r.rouge_l,
            r.cider,
            r.map,
            r.acc
        )
    }
}

pub struct TrainOutcome {
    /// Best warm-up model (lowest validation NLL).
    pub warmup: Captioner,
    pub warmup_eval: SplitEval,
    /// Best joint model (highest validation reward); the warm-up model when
    /// there are no joint epochs.
    pub model: Captioner,
    pub eval: SplitEval,
    pub log: Vec<EpochLog>,
}

#[derive(Default)]
struct Totals {
    mle: f64,
    attr: f64,
    rl: f64,
    als: f64,
    sls: f64,
    batches: usize,
    samples: usize,
}

/// Everything that evolves during training: parameters, optimizer moments,
/// RNG streams and the log so far.
#[derive(Clone, Debug)]
struct RunState {
    model: Captioner,
    adam: Adam,
    shuffle_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    log: Vec<EpochLog>,
    csv: String,
    next_epoch: usize,
}

/// The end of the warm-up phase, from which any number of joint runs can
/// continue.
#[derive(Clone, Debug)]
pub struct WarmStart {
    state: RunState,
    /// Validation results of the restored (best) warm-up epoch.
    pub eval: SplitEval,
}

impl WarmStart {
    pub fn model(&self) -> &Captioner {
        &self.state.model
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.state.log
    }
}

struct Trainer<'c, 'd> {
    cfg: &'c TrainConfig,
    ctx: &'c RewardContext<'d>,
    out: Option<&'c Path>,
}

impl Trainer<'_, '_> {
    fn step(
        &self,
        st: &mut RunState,
        batch: &[&Example],
        phase: Phase,
        t: &mut Totals,
    ) -> Result<()> {
        let model = &st.model;
        let mut grads = {
            let mut tape = Tape::with_params(model.store());
            let fwd = forward(&mut tape, model, batch)?;
            let mle = mle_loss(&mut tape, model, &fwd, batch)?;
            let labels: Vec<f64> = batch
                .iter()
                .flat_map(|e| e.labels.iter().copied())
                .collect();
            let la = attribute_loss(&mut tape, fwd.attrs.probs, &labels)?;
            t.mle += tape.value(mle).item();
            t.attr += tape.value(la).item();
            let weighted = tape.scale(la, self.cfg.attr_weight);
            let mut total = tape.add(mle, weighted)?;
            if phase == Phase::Joint && self.cfg.rl_weight > 0.0 {
                let (lr, stats) = reinforce_loss(
                    &mut tape,
                    model,
                    &fwd,
                    batch,
                    self.ctx,
                    self.cfg,
                    &mut st.sample_rng,
                )?;
                t.rl += tape.value(lr).item();
                t.als += stats.rewards.iter().map(|r| r.als).sum::<f64>();
                t.sls += stats.rewards.iter().map(|r| r.sls).sum::<f64>();
                t.samples += stats.rewards.len();
                let weighted = tape.scale(lr, self.cfg.rl_weight);
                total = tape.add(total, weighted)?;
            }
            tape.backward(total)?.into_params()
        };
        if self.cfg.grad_clip > 0.0 {
            grads.clip_global_norm(self.cfg.grad_clip);
        }
        st.adam.step(st.model.store_mut(), &grads);
        t.batches += 1;
        Ok(())
    }

    fn epoch(
        &self,
        st: &mut RunState,
        train: &[Example],
        val: &[Example],
        phase: Phase,
        lr: f64,
    ) -> Result<SplitEval> {
        let epoch = st.next_epoch;
        st.adam.set_lr(lr);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut st.shuffle_rng);
        let mut t = Totals::default();
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            self.step(st, &batch, phase, &mut t)?;
        }
        let val = evaluate_split(&st.model, val, self.ctx, self.cfg.max_len)?;
        let nb = t.batches.max(1) as f64;
        let ns = t.samples.max(1) as f64;
        let entry = EpochLog {
            epoch,
            phase,
            lr,
            train_mle: t.mle / nb,
            train_attr: t.attr / nb,
            train_rl: t.rl / nb,
            train_als: t.als / ns,
            train_sls: t.sls / ns,
            val: val.clone(),
        };
        let _ = writeln!(st.csv, "{}", entry.csv_row());
        if let Some(dir) = self.out {
            save_checkpoint(
                &dir.join(format!("epoch_{epoch:03}.ckpt")),
                st.model.store(),
                checkpoint_meta(&st.model, epoch, phase),
            )?;
            fs::write(dir.join(METRICS_FILE), &st.csv)?;
        }
        st.log.push(entry);
        st.next_epoch += 1;
        Ok(val)
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const WARMUP_CHECKPOINT: &str = "warmup.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

pub(crate) fn checkpoint_meta(model: &Captioner, epoch: usize, phase: Phase) -> serde_json::Value {
    json!({
        "kind": "captioner",
        "config": model.config(),
        "epoch": epoch,
        "phase": phase,
    })
}

fn check_inputs(
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val.len() < 2 {
        return Err(Error::Config(
            "validation split needs at least two items".into(),
        ));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Trains on NLL plus the weighted attribute loss until validation NLL has
/// not improved for `patience` epochs, then restores the best epoch.
pub fn warmup(
    model: Captioner,
    train: &[Example],
    val: &[Example],
    ctx: &RewardContext,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<WarmStart> {
    check_inputs(train, val, cfg, out)?;
    let tr = Trainer { cfg, ctx, out };
    let mut st = RunState {
        model,
        adam: Adam::new(AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        }),
        shuffle_rng: rng_stream(cfg.seed, SHUFFLE_STREAM),
        sample_rng: rng_stream(cfg.seed, SAMPLE_STREAM),
        log: Vec::new(),
        csv: format!("{METRICS_HEADER}\n"),
        next_epoch: 0,
    };
    let mut best: Option<(ParamStore, SplitEval)> = None;
    let mut stale = 0;
    while st.next_epoch < cfg.max_warmup_epochs && stale < cfg.patience.max(1) {
        let lr = lr_schedule(cfg.lr, cfg.anneal_factor, cfg.anneal_every, st.next_epoch);
        let v = tr.epoch(&mut st, train, val, Phase::Warmup, lr)?;
        if best.as_ref().is_none_or(|b| v.mle < b.1.mle) {
            best = Some((st.model.store().clone(), v));
            stale = 0;
        } else {
            stale += 1;
        }
    }
    let (store, eval) = best.expect("at least one warm-up epoch");
    st.model.store_mut().load_from(&store)?;
    if let Some(dir) = out {
        save_checkpoint(
            &dir.join(WARMUP_CHECKPOINT),
            st.model.store(),
            checkpoint_meta(&st.model, st.next_epoch, Phase::Warmup),
        )?;
    }
    Ok(WarmStart { state: st, eval })
}

/// Continues from a warm start with the full objective for
/// `cfg.joint_epochs` epochs and keeps the epoch with the best validation
/// reward. Only the joint-phase fields of `cfg` are read.
pub fn joint(
    start: WarmStart,
    train: &[Example],
    val: &[Example],
    ctx: &RewardContext,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    check_inputs(train, val, cfg, out)?;
    let tr = Trainer { cfg, ctx, out };
    let warmup_eval = start.eval;
    let mut st = start.state;
    let warmup = st.model.clone();
    let first = st.next_epoch;
    let mut best: Option<(ParamStore, SplitEval)> = None;
    for k in 0..cfg.joint_epochs {
        let lr = match cfg.joint_lr {
            Some(l) => lr_schedule(l, cfg.anneal_factor, cfg.anneal_every, k),
            None => lr_schedule(cfg.lr, cfg.anneal_factor, cfg.anneal_every, first + k),
        };
        let v = tr.epoch(&mut st, train, val, Phase::Joint, lr)?;
        if best.as_ref().is_none_or(|b| v.reward > b.1.reward) {
            best = Some((st.model.store().clone(), v));
        }
    }
    let eval = match best {
        Some((store, v)) => {
            st.model.store_mut().load_from(&store)?;
            v
        }
        None => warmup_eval.clone(),
    };
    if let Some(dir) = out {
        save_checkpoint(
            &dir.join(BEST_CHECKPOINT),
            st.model.store(),
            checkpoint_meta(&st.model, st.next_epoch, Phase::Joint),
        )?;
    }
    Ok(TrainOutcome {
        warmup,
        warmup_eval,
        model: st.model,
        eval,
        log: st.log,
    })
}

/// [`warmup`] followed by [`joint`]. Checkpoints and the metrics log go to
/// `out` when given.
pub fn train(
    model: Captioner,
    train: &[Example],
    val: &[Example],
    ctx: &RewardContext,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let start = warmup(model, train, val, ctx, cfg, out)?;
    joint(start, train, val, ctx, cfg, out)
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::schedule::rng_stream;
use crate::dataset::Item;
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::models::{ClassifierConfig, TextClassifier};
use crate::tensor::{Adam, AdamConfig, ParamStore, Tape, Var};
use crate::text::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 15,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct ClassifierRun {
    /// Parameters of the epoch with the best validation accuracy.
    pub classifier: TextClassifier,
    pub epochs: Vec<ClassifierEpoch>,
    /// Loss of the very first minibatch, before any update.
    pub first_batch_loss: f64,
}

/// Caption word ids of labeled items, paired with their category, as the
/// classifier consumes them.
pub fn labeled_captions(items: &[&Item], vocab: &Vocab) -> Vec<(Vec<usize>, usize)> {
    items
        .iter()
        .map(|i| (vocab.encode_words(&i.caption), i.category))
        .collect()
}

/// Mean cross-entropy of `logits` `[N, C]` against class ids.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, targets)?;
    let m = tape.mean(picked)?;
    Ok(tape.scale(m, -1.0))
}

/// Accuracy of `classifier` on labeled word-id sequences.
pub fn classifier_accuracy(classifier: &TextClassifier, data: &[(&[usize], usize)]) -> Result<f64> {
    let mut predicted = Vec::with_capacity(data.len());
    for chunk in data.chunks(256) {
        let seqs: Vec<&[usize]> = chunk.iter().map(|(s, _)| *s).collect();
        predicted.extend(classifier.predict(&seqs)?);
    }
    let targets: Vec<usize> = data.iter().map(|(_, c)| *c).collect();
    accuracy(&predicted, &targets)
}

/// Trains a category classifier on `(caption ids, category)` pairs with
/// Adam and keeps the epoch with the best validation accuracy.
pub fn pretrain_classifier(
    config: ClassifierConfig,
    train: &[(&[usize], usize)],
    val: &[(&[usize], usize)],
    cfg: &ClassifierTrainConfig,
) -> Result<ClassifierRun> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("classifier training data"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(Error::Config(format!(
            "bad classifier training config: {cfg:?}"
        )));
    }
    let mut seen: Vec<usize> = train.iter().map(|(_, c)| *c).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::Config(
            "classifier training needs at least two categories".into(),
        ));
    }
    if let Some(&c) = seen.last().filter(|&&c| c >= config.n_categories) {
        return Err(Error::UnknownCategory {
            id: c,
            count: config.n_categories,
        });
    }

    let mut model = TextClassifier::new(config, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut shuffle = rng_stream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut first_batch_loss = None;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[usize]> = chunk.iter().map(|&i| train[i].0).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| train[i].1).collect();
            let grads = {
                let mut tape = Tape::with_params(model.store());
                let logits = model.logits(
                    &mut tape,
                    &seqs,
                    true,
                    cfg.seed ^ step.wrapping_mul(0x9e37_79b9),
                )?;
                let loss = cross_entropy(&mut tape, logits, &targets)?;
                let v = tape.value(loss).item();
                first_batch_loss.get_or_insert(v);
                total += v;
                tape.backward(loss)?.into_params()
            };
            adam.step(model.store_mut(), &grads);
            batches += 1;
            step += 1;
        }
        let val_acc = classifier_accuracy(&model, val)?;
        epochs.push(ClassifierEpoch {
            epoch,
            train_loss: total / batches as f64,
            val_acc,
        });
        if best.as_ref().is_none_or(|b| val_acc > b.0) {
            best = Some((val_acc, model.store().clone()));
        }
    }
    let (_, store) = best.expect("at least one epoch");
    model.store_mut().load_from(&store)?;
    Ok(ClassifierRun {
        classifier: model,
        epochs,
        first_batch_loss: first_batch_loss.expect("at least one batch"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_category_is_rejected() {
        let a: &[usize] = &[4, 5];
        let data = [(a, 0), (a, 0)];
        let cfg = ClassifierConfig::new(8, 2);
        assert!(pretrain_classifier(cfg, &data, &data, &ClassifierTrainConfig::default()).is_err());
    }

    #[test]
    fn separable_toy_task_is_learned() {
        let seqs: Vec<Vec<usize>> = (0..40).map(|i| vec![4 + i % 2, 6, 7 + i % 3]).collect();
        let data: Vec<(&[usize], usize)> = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_slice(), i % 2))
            .collect();
        let mut cfg = ClassifierConfig::new(10, 2);
        cfg.embed_dim = 8;
        cfg.filters = 4;
        let tc = ClassifierTrainConfig {
            epochs: 15,
            batch_size: 8,
            ..Default::default()
        };
        let run = pretrain_classifier(cfg, &data, &data, &tc).unwrap();
        assert!((run.first_batch_loss - 2f64.ln()).abs() < 0.2);
        assert_eq!(classifier_accuracy(&run.classifier, &data).unwrap(), 1.0);
    }
}

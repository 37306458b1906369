//! Corpus caption metrics, attribute mAP and category accuracy.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::dataset::AttributeVocab;
use crate::error::{Error, Result};
use crate::models::TextClassifier;
use crate::text::Vocab;

/// Recall weight of the ROUGE-L F-measure.
pub const ROUGE_BETA: f64 = 1.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub map: f64,
    pub acc: f64,
}

fn check_pairs<A, B>(hyps: &[A], refs: &[B]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Config(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU-4 against one reference per hypothesis, without smoothing.
pub fn bleu4<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += (h.len() + 1).saturating_sub(n);
        }
    }
    if (0..4).any(|i| matched[i] == 0) {
        return Ok(0.0);
    }
    let log_mean = (0..4)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / 4.0;
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * log_mean.exp())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence ROUGE-L F-measure.
pub fn rouge_l_sentence<T: PartialEq>(hyp: &[T], reference: &[T]) -> f64 {
    let l = lcs_len(hyp, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / hyp.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean sentence ROUGE-L over the corpus.
pub fn rouge_l<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let sum: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| rouge_l_sentence(h, r))
        .sum();
    Ok(sum / hyps.len() as f64)
}

/// Distinct n-grams with counts, in order of first occurrence.
fn ordered_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> Vec<(&[T], usize)> {
    let mut index: HashMap<&[T], usize> = HashMap::new();
    let mut out: Vec<(&[T], usize)> = Vec::new();
    for g in tokens.windows(n) {
        match index.get(g) {
            Some(&i) => out[i].1 += 1,
            None => {
                index.insert(g, out.len());
                out.push((g, 1));
            }
        }
    }
    out
}

/// TF-IDF vector of one sentence for n-gram order `n` (first-occurrence
/// order, so sums are reproducible), plus its norm.
fn tfidf<'a, T: Eq + Hash>(
    tokens: &'a [T],
    n: usize,
    df: &HashMap<&[T], usize>,
    log_docs: f64,
) -> (Vec<(&'a [T], f64)>, f64) {
    let counts = ordered_counts(tokens, n);
    let total: usize = counts.iter().map(|c| c.1).sum();
    let mut norm = 0.0;
    let vec: Vec<(&[T], f64)> = counts
        .into_iter()
        .map(|(g, c)| {
            let idf = log_docs - (df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
            let v = c as f64 / total as f64 * idf;
            norm += v * v;
            (g, v)
        })
        .collect();
    (vec, norm.sqrt())
}

/// CIDEr with one reference per item: cosine similarity of TF-IDF n-gram
/// vectors averaged over n = 1..4, then over items. Document frequencies
/// come from the references.
pub fn cider<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    if refs.len() < 2 {
        return Err(Error::Config("CIDEr needs at least two items".into()));
    }
    let log_docs = (refs.len() as f64).ln();
    let mut total = 0.0;
    for n in 1..=4 {
        let mut df: HashMap<&[T], usize> = HashMap::new();
        for r in refs {
            for g in ngram_counts(r, n).into_keys() {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (h, r) in hyps.iter().zip(refs) {
            let (hv, hn) = tfidf(h, n, &df, log_docs);
            let (rv, rn) = tfidf(r, n, &df, log_docs);
            if hn == 0.0 || rn == 0.0 {
                continue;
            }
            let rv: HashMap<&[T], f64> = rv.into_iter().collect();
            let dot: f64 = hv
                .iter()
                .map(|(g, v)| v * rv.get(g).copied().unwrap_or(0.0))
                .sum();
            total += dot / (hn * rn);
        }
    }
    Ok(total / (4.0 * hyps.len() as f64))
}

fn contains_phrase<T: PartialEq>(caption: &[T], phrase: &[T]) -> bool {
    !phrase.is_empty() && caption.windows(phrase.len()).any(|w| w == phrase)
}

/// Mean average precision of attribute mentions. An attribute is detected in
/// an item when its phrase occurs in the caption; detected items rank first,
/// in item order. AP sums precision at each detected relevant item and
/// divides by the number of relevant items. Attributes absent from every
/// ground-truth set are skipped. An empty phrase is never detected.
pub fn attribute_map<T: PartialEq>(
    captions: &[Vec<T>],
    truth: &[Vec<usize>],
    phrases: &[Vec<T>],
) -> Result<f64> {
    if captions.len() != truth.len() {
        return Err(Error::Config(format!(
            "{} captions for {} attribute sets",
            captions.len(),
            truth.len()
        )));
    }
    if let Some(&id) = truth.iter().flatten().find(|&&a| a >= phrases.len()) {
        return Err(Error::Config(format!(
            "attribute id {id} outside vocabulary of {}",
            phrases.len()
        )));
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for (a, phrase) in phrases.iter().enumerate() {
        let relevant = truth.iter().filter(|t| t.contains(&a)).count();
        if relevant == 0 {
            continue;
        }
        present += 1;
        let (mut hits, mut rank, mut ap) = (0usize, 0usize, 0.0);
        for (cap, t) in captions.iter().zip(truth) {
            if !contains_phrase(cap, phrase) {
                continue;
            }
            rank += 1;
            if t.contains(&a) {
                hits += 1;
                ap += hits as f64 / rank as f64;
            }
        }
        sum += ap / relevant as f64;
    }
    Ok(if present == 0 {
        0.0
    } else {
        sum / present as f64
    })
}

/// Attribute phrases as word ids; a phrase with an out-of-vocabulary word
/// maps to an empty (never detected) pattern.
pub fn phrase_ids(attrs: &AttributeVocab, vocab: &Vocab) -> Vec<Vec<usize>> {
    attrs
        .iter()
        .map(|(_, p)| {
            p.iter()
                .map(|w| vocab.id(w))
                .collect::<Option<Vec<_>>>()
                .unwrap_or_default()
        })
        .collect()
}

/// Fraction of predictions equal to their targets.
pub fn accuracy(predicted: &[usize], targets: &[usize]) -> Result<f64> {
    check_pairs(predicted, targets)?;
    let hits = predicted
        .iter()
        .zip(targets)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Share of captions the classifier assigns to their target category.
pub fn category_acc(
    captions: &[Vec<usize>],
    targets: &[usize],
    classifier: &TextClassifier,
) -> Result<f64> {
    check_pairs(captions, targets)?;
    let refs: Vec<&[usize]> = captions.iter().map(Vec::as_slice).collect();
    let mut predicted = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(256) {
        predicted.extend(classifier.predict(chunk)?);
    }
    accuracy(&predicted, targets)
}

/// Every metric for word-id hypotheses against word-id references.
pub fn evaluate(
    hyps: &[Vec<usize>],
    refs: &[Vec<usize>],
    truth: &[Vec<usize>],
    categories: &[usize],
    phrases: &[Vec<usize>],
    classifier: &TextClassifier,
) -> Result<EvalReport> {
    Ok(EvalReport {
        bleu4: bleu4(hyps, refs)?,
        rouge_l: rouge_l(hyps, refs)?,
        cider: cider(hyps, refs)?,
        map: attribute_map(hyps, truth, phrases)?,
        acc: category_acc(hyps, categories, classifier)?,
    })
}

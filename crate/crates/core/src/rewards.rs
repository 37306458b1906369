//! Attribute-level and sentence-level semantic rewards.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::dataset::AttributeVocab;
use crate::error::{Error, Result};
use crate::models::TextClassifier;
use crate::text::Vocab;

/// Longest attribute n-gram the reward considers.
pub const MAX_NGRAM: usize = 2;

/// Single-token attributes and two-token attribute phrases over some token
/// type (words or vocabulary ids).
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeMatcher<T: Eq + Hash> {
    unigrams: HashSet<T>,
    bigrams: HashSet<(T, T)>,
}

impl<T: Eq + Hash + Clone> AttributeMatcher<T> {
    pub fn new(unigrams: HashSet<T>, bigrams: HashSet<(T, T)>) -> Self {
        Self { unigrams, bigrams }
    }

    /// Whether `gram` (length 1 or 2) counts as an attribute tuple: it holds
    /// a single-token attribute, or is itself a two-token phrase.
    pub fn qualifies(&self, gram: &[T]) -> bool {
        if gram.iter().any(|t| self.unigrams.contains(t)) {
            return true;
        }
        match gram {
            [a, b] => self.bigrams.contains(&(a.clone(), b.clone())),
            _ => false,
        }
    }
}

impl AttributeMatcher<String> {
    pub fn from_vocab(attrs: &AttributeVocab) -> Self {
        let mut uni = HashSet::new();
        let mut bi = HashSet::new();
        for (_, p) in attrs.iter() {
            match p {
                [a] => {
                    uni.insert(a.clone());
                }
                [a, b] => {
                    bi.insert((a.clone(), b.clone()));
                }
                _ => {}
            }
        }
        Self::new(uni, bi)
    }
}

impl AttributeMatcher<usize> {
    /// The same attributes as vocabulary ids. Phrases with a word outside the
    /// vocabulary can never be generated and are left out.
    pub fn from_vocab_ids(attrs: &AttributeVocab, vocab: &Vocab) -> Self {
        let mut uni = HashSet::new();
        let mut bi = HashSet::new();
        for (_, p) in attrs.iter() {
            let ids: Option<Vec<usize>> = p.iter().map(|w| vocab.id(w)).collect();
            match ids.as_deref() {
                Some(&[a]) => {
                    uni.insert(a);
                }
                Some(&[a, b]) => {
                    bi.insert((a, b));
                }
                _ => {}
            }
        }
        Self::new(uni, bi)
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Clipped count of generated attribute n-grams found in the reference.
pub fn match_count<T: Eq + Hash + Clone>(
    generated: &[T],
    reference: &[T],
    attrs: &AttributeMatcher<T>,
    n: usize,
) -> Result<usize> {
    if !(1..=MAX_NGRAM).contains(&n) {
        return Err(Error::Config(format!(
            "attribute n-gram order {n} not in 1..={MAX_NGRAM}"
        )));
    }
    let gen = ngram_counts(generated, n);
    let refc = ngram_counts(reference, n);
    Ok(gen
        .iter()
        .filter(|(g, _)| attrs.qualifies(g))
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum())
}

/// `exp(min(0, (l - L) / l))`.
pub fn brevity_penalty(generated_len: usize, reference_len: usize) -> Result<f64> {
    if generated_len == 0 {
        return Err(Error::Empty("generated sentence"));
    }
    if reference_len == 0 {
        return Err(Error::Empty("reference sentence"));
    }
    let (l, r) = (generated_len as f64, reference_len as f64);
    Ok(((l - r) / l).min(0.0).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramMatch {
    pub n: usize,
    /// Number of n-grams in the generated sentence.
    pub total: usize,
    pub matched: usize,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeMatchReport {
    pub ngrams: Vec<NgramMatch>,
    pub brevity: f64,
    pub generated_len: usize,
    pub reference_len: usize,
    pub reward: f64,
}

/// Brevity-penalized geometric mean of the clipped attribute unigram and
/// bigram precisions. Zero when the sentence has no bigram or either
/// precision is zero.
pub fn als_reward<T: Eq + Hash + Clone>(
    generated: &[T],
    reference: &[T],
    attrs: &AttributeMatcher<T>,
) -> Result<AttributeMatchReport> {
    let brevity = brevity_penalty(generated.len(), reference.len())?;
    let mut ngrams = Vec::with_capacity(MAX_NGRAM);
    for n in 1..=MAX_NGRAM {
        let total = (generated.len() + 1).saturating_sub(n);
        let matched = match_count(generated, reference, attrs, n)?;
        let precision = if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        };
        ngrams.push(NgramMatch {
            n,
            total,
            matched,
            precision,
        });
    }
    let product: f64 = ngrams.iter().map(|g| g.precision).product();
    let reward = if product == 0.0 {
        0.0
    } else {
        brevity * product.powf(1.0 / MAX_NGRAM as f64)
    };
    Ok(AttributeMatchReport {
        ngrams,
        brevity,
        generated_len: generated.len(),
        reference_len: reference.len(),
        reward,
    })
}

/// Probability the classifier assigns to `category` for a caption of word ids.
pub fn sls_reward(classifier: &TextClassifier, words: &[usize], category: usize) -> Result<f64> {
    Ok(sls_rewards(classifier, &[words], &[category])?[0])
}

/// Batched [`sls_reward`].
pub fn sls_rewards(
    classifier: &TextClassifier,
    captions: &[&[usize]],
    categories: &[usize],
) -> Result<Vec<f64>> {
    if captions.len() != categories.len() {
        return Err(Error::Config(format!(
            "{} captions for {} categories",
            captions.len(),
            categories.len()
        )));
    }
    let count = classifier.n_categories();
    if let Some(&id) = categories.iter().find(|&&c| c >= count) {
        return Err(Error::UnknownCategory { id, count });
    }
    let probs = classifier.predict_proba(captions)?;
    Ok(probs.iter().zip(categories).map(|(p, &c)| p[c]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub als_weight: f64,
    pub sls_weight: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            als_weight: 1.0,
            sls_weight: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.als_weight < 0.0 || self.sls_weight < 0.0 {
            return Err(Error::Config("reward weights must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn combined_reward(als: f64, sls: f64, cfg: &RewardConfig) -> f64 {
    cfg.als_weight * als + cfg.sls_weight * sls
}

//! Shared inputs for the benchmarks.

use semcap::dataset::{generate_synthetic_corpus, Dataset, SynthConfig};
use semcap::models::{Captioner, CaptionerConfig, ClassifierConfig, TextClassifier};

/// A seeded synthetic dataset with untrained models sized to it.
pub struct Workload {
    pub dataset: Dataset,
    pub captioner: Captioner,
    pub classifier: TextClassifier,
}

impl Workload {
    /// `items` synthetic items and a captioner of the given width.
    pub fn new(items: usize, width: usize) -> Self {
        let cfg = SynthConfig {
            n_items: items,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic_corpus(&cfg, 1).expect("valid synthetic config");
        let dataset = Dataset::build(
            corpus.items,
            corpus.attributes,
            corpus.categories,
            [0.8, 0.1, 0.1],
            1,
            1,
        )
        .expect("splittable corpus");
        let captioner = Captioner::new(
            CaptionerConfig::with_width(
                dataset.vocab.len(),
                cfg.feature_dim,
                dataset.attributes.len(),
                width,
            ),
            1,
        )
        .expect("valid captioner config");
        let classifier = TextClassifier::new(
            ClassifierConfig::new(dataset.vocab.len(), dataset.categories.len()),
            1,
        )
        .expect("valid classifier config");
        Self {
            dataset,
            captioner,
            classifier,
        }
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, dense, EMBED_INIT};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};
use crate::text::PAD;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub vocab_size: usize,
    pub n_categories: usize,
    pub embed_dim: usize,
    /// Convolution window widths, one parallel conv layer each.
    pub windows: Vec<usize>,
    pub filters: usize,
    pub dropout: f64,
}

impl ClassifierConfig {
    pub fn new(vocab_size: usize, n_categories: usize) -> Self {
        Self {
            vocab_size,
            n_categories,
            embed_dim: 64,
            windows: vec![3, 4, 5],
            filters: 64,
            dropout: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.n_categories == 0
            || self.embed_dim == 0
            || self.filters == 0
        {
            return Err(Error::Config(format!(
                "classifier dimensions must be positive: {self:?}"
            )));
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return Err(Error::Config(
                "classifier needs positive window widths".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Shortest sequence the convolutions accept.
    pub fn min_len(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(1)
    }
}

/// Convolutional sentence classifier over category labels.
#[derive(Clone, Debug)]
pub struct TextClassifier {
    config: ClassifierConfig,
    store: ParamStore,
    embed: ParamId,
    convs: Vec<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
}

impl TextClassifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = config.embed_dim;
        let embed = store.uniform(
            "classifier.embed",
            &[config.vocab_size, e],
            EMBED_INIT,
            &mut rng,
        )?;
        let convs = config
            .windows
            .iter()
            .map(|&w| {
                dense(
                    &mut store,
                    &format!("classifier.conv{w}"),
                    w * e,
                    config.filters,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let out = dense(
            &mut store,
            "classifier.out",
            config.filters * config.windows.len(),
            config.n_categories,
            &mut rng,
        )?;
        Ok(Self {
            config,
            store,
            embed,
            convs,
            out,
        })
    }

    pub fn from_store(config: ClassifierConfig, store: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.store.load_from(store)?;
        Ok(m)
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn n_categories(&self) -> usize {
        self.config.n_categories
    }

    /// Pads with `PAD` up to the widest window.
    pub fn pad(&self, ids: &[usize]) -> Vec<usize> {
        let mut v = ids.to_vec();
        if v.len() < self.config.min_len() {
            v.resize(self.config.min_len(), PAD);
        }
        v
    }

    /// Category logits `[N, C]`. Dropout on the pooled features is applied
    /// only when `train` is set.
    pub fn logits(
        &self,
        tape: &mut Tape,
        seqs: &[&[usize]],
        train: bool,
        seed: u64,
    ) -> Result<Var> {
        if seqs.is_empty() {
            return Err(Error::Empty("classifier batch"));
        }
        let table = tape.param(self.embed);
        let mut rows = Vec::with_capacity(seqs.len());
        for s in seqs {
            let ids = self.pad(s);
            let x = tape.embedding(table, &ids)?;
            let mut pooled = Vec::with_capacity(self.convs.len());
            for (&width, &(w, b)) in self.config.windows.iter().zip(&self.convs) {
                let (w, b) = (tape.param(w), tape.param(b));
                let c = tape.conv1d(x, w, b, width)?;
                let c = tape.relu(c);
                pooled.push(tape.max_over_time(c)?);
            }
            rows.push(tape.concat(&pooled, 1)?);
        }
        let feats = tape.concat(&rows, 0)?;
        let feats = tape.dropout(feats, self.config.dropout, train, seed);
        let (w, b) = (tape.param(self.out.0), tape.param(self.out.1));
        let y = tape.matmul(feats, w)?;
        tape.add(y, b)
    }

    /// Category distributions for word-id sequences, without dropout.
    pub fn predict_proba(&self, seqs: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::with_params(&self.store);
        let logits = self.logits(&mut tape, seqs, false, 0)?;
        let probs = tape.softmax(logits, 1)?;
        let c = self.config.n_categories;
        Ok(tape
            .value(probs)
            .data()
            .chunks(c)
            .map(<[f64]>::to_vec)
            .collect())
    }

    pub fn predict(&self, seqs: &[&[usize]]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(seqs)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }
}

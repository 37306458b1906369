use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, dense, stack_grids, EMBED_INIT};
use crate::dataset::FeatureGrid;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};
use crate::text::{BOS, EOS, PAD};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionerConfig {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub n_attributes: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of the attribute embedding fed to every decoder step.
    pub attr_hidden_dim: usize,
    pub attention_dim: usize,
}

impl CaptionerConfig {
    /// Full-size dimensions (512 everywhere).
    pub fn new(vocab_size: usize, feature_dim: usize, n_attributes: usize) -> Self {
        Self::with_width(vocab_size, feature_dim, n_attributes, 512)
    }

    /// Every inner dimension set to `width`.
    pub fn with_width(
        vocab_size: usize,
        feature_dim: usize,
        n_attributes: usize,
        width: usize,
    ) -> Self {
        Self {
            vocab_size,
            feature_dim,
            n_attributes,
            embed_dim: width,
            hidden_dim: width,
            attr_hidden_dim: width,
            attention_dim: width,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.feature_dim,
            self.n_attributes,
            self.embed_dim,
            self.hidden_dim,
            self.attr_hidden_dim,
            self.attention_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "captioner dimensions must be positive: {self:?}"
            )));
        }
        if self.vocab_size <= EOS {
            return Err(Error::Config(
                "vocabulary must include the reserved tokens".into(),
            ));
        }
        Ok(())
    }

    fn lstm_input(&self) -> usize {
        self.embed_dim + self.hidden_dim + self.attr_hidden_dim
    }
}

#[derive(Clone, Debug)]
struct Ids {
    proj: (ParamId, ParamId),
    init_h: (ParamId, ParamId),
    init_c: (ParamId, ParamId),
    att_h: (ParamId, ParamId),
    att_x: ParamId,
    att_v: ParamId,
    embed: ParamId,
    lstm: (ParamId, ParamId),
    out: (ParamId, ParamId),
    attr_hidden: (ParamId, ParamId),
    attr_out: (ParamId, ParamId),
}

/// LSTM hidden and cell state, one row per sequence.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

/// Encoder output for a batch of `rows` feature grids of `cells` cells each.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub rows: usize,
    pub cells: usize,
    /// Mean feature vector per row, `[rows, D]`.
    pub pooled: Var,
    /// Projected grid, `[rows * cells, hidden]`.
    pub projected: Var,
    /// Attention keys, `[rows * cells, attention]`.
    keys: Var,
    pub init: DecoderState,
}

#[derive(Clone, Copy, Debug)]
pub struct AttributeOutput {
    /// Attribute embedding: the predictor's hidden activation.
    pub z: Var,
    pub logits: Var,
    pub probs: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    /// Row-wise log-distribution over the vocabulary.
    pub log_probs: Var,
    /// Attention weights, `[rows, cells]`.
    pub attention: Var,
}

/// One sampled caption.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSequence {
    /// Emitted ids, ending in `EOS` unless truncated.
    pub tokens: Vec<usize>,
    /// `log p(token)` for every emitted id.
    pub log_probs: Vec<f64>,
}

impl SampledSequence {
    /// The caption words, without the final `EOS`.
    pub fn words(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Sampled captions plus their per-step log-probabilities on the tape.
#[derive(Clone, Debug)]
pub struct SampledBatch {
    pub sequences: Vec<SampledSequence>,
    /// `[rows, steps]`; entries past a row's end are filler.
    pub log_probs: Var,
    /// `1.0` where the entry of `log_probs` belongs to an emitted token.
    pub mask: Vec<f64>,
    pub steps: usize,
}

/// Attention encoder, LSTM decoder conditioned on an attribute embedding,
/// and the attribute predictor.
#[derive(Clone, Debug)]
pub struct Captioner {
    config: CaptionerConfig,
    store: ParamStore,
    ids: Ids,
}

impl Captioner {
    pub fn new(config: CaptionerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (d, hd, e, ah, at) = (
            c.feature_dim,
            c.hidden_dim,
            c.embed_dim,
            c.attr_hidden_dim,
            c.attention_dim,
        );
        let ids = Ids {
            proj: dense(&mut s, "encoder.proj", d, hd, &mut rng)?,
            init_h: dense(&mut s, "encoder.init_h", d, hd, &mut rng)?,
            init_c: dense(&mut s, "encoder.init_c", d, hd, &mut rng)?,
            att_h: dense(&mut s, "attention.query", hd, at, &mut rng)?,
            att_x: s.glorot("attention.key.w", hd, at, &mut rng)?,
            att_v: s.glorot("attention.score.w", at, 1, &mut rng)?,
            embed: s.uniform("decoder.embed", &[c.vocab_size, e], EMBED_INIT, &mut rng)?,
            lstm: dense(
                &mut s,
                "decoder.lstm",
                c.lstm_input() + hd,
                4 * hd,
                &mut rng,
            )?,
            out: dense(&mut s, "decoder.out", hd, c.vocab_size, &mut rng)?,
            attr_hidden: dense(&mut s, "attributes.hidden", d, ah, &mut rng)?,
            attr_out: dense(&mut s, "attributes.out", ah, c.n_attributes, &mut rng)?,
        };
        Ok(Self {
            config,
            store: s,
            ids,
        })
    }

    /// Model with the parameter values of `store` (matched by name).
    pub fn from_store(config: CaptionerConfig, store: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.store.load_from(store)?;
        Ok(m)
    }

    pub fn config(&self) -> &CaptionerConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn linear(&self, tape: &mut Tape, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let (w, b) = (tape.param(w), tape.param(b));
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    /// Projects the grids and derives the initial decoder state from the
    /// mean feature vector.
    pub fn encode(&self, tape: &mut Tape, grids: &[&FeatureGrid]) -> Result<Encoded> {
        let feats = stack_grids(grids)?;
        let cells = grids[0].cells();
        if grids[0].dim() != self.config.feature_dim {
            return Err(Error::Shape {
                op: "encode",
                detail: format!(
                    "features have dimension {}, model expects {}",
                    grids[0].dim(),
                    self.config.feature_dim
                ),
            });
        }
        let feats = tape.constant(feats);
        self.encode_var(tape, feats, grids.len(), cells)
    }

    fn encode_var(
        &self,
        tape: &mut Tape,
        feats: Var,
        rows: usize,
        cells: usize,
    ) -> Result<Encoded> {
        let pooled = tape.segment_mean(feats, cells)?;
        let projected = self.linear(tape, feats, self.ids.proj)?;
        let kw = tape.param(self.ids.att_x);
        let keys = tape.matmul(projected, kw)?;
        let h = self.linear(tape, pooled, self.ids.init_h)?;
        let c = self.linear(tape, pooled, self.ids.init_c)?;
        let init = DecoderState {
            h: tape.tanh(h),
            c: tape.tanh(c),
        };
        Ok(Encoded {
            rows,
            cells,
            pooled,
            projected,
            keys,
            init,
        })
    }

    /// Repeats every row of an encoding `times` times consecutively.
    pub fn repeat_encoded(&self, tape: &mut Tape, enc: &Encoded, times: usize) -> Result<Encoded> {
        let block = |tape: &mut Tape, v: Var| -> Result<Var> {
            let cols = tape.shape(v)[1];
            let flat = tape.reshape(v, &[enc.rows, enc.cells * cols])?;
            let rep = tape.repeat_rows(flat, times)?;
            tape.reshape(rep, &[enc.rows * times * enc.cells, cols])
        };
        Ok(Encoded {
            rows: enc.rows * times,
            cells: enc.cells,
            pooled: tape.repeat_rows(enc.pooled, times)?,
            projected: block(tape, enc.projected)?,
            keys: block(tape, enc.keys)?,
            init: DecoderState {
                h: tape.repeat_rows(enc.init.h, times)?,
                c: tape.repeat_rows(enc.init.c, times)?,
            },
        })
    }

    /// Attribute embedding and per-attribute probabilities from pooled features.
    pub fn predict_attributes(&self, tape: &mut Tape, enc: &Encoded) -> Result<AttributeOutput> {
        let hidden = self.linear(tape, enc.pooled, self.ids.attr_hidden)?;
        let z = tape.tanh(hidden);
        let logits = self.linear(tape, z, self.ids.attr_out)?;
        let probs = tape.sigmoid(logits);
        Ok(AttributeOutput { z, logits, probs })
    }

    /// Additive attention of the hidden state over the grid cells. Returns the
    /// context `[rows, hidden]` and weights `[rows, cells]`.
    pub fn attend(&self, tape: &mut Tape, enc: &Encoded, h: Var) -> Result<(Var, Var)> {
        let query = self.linear(tape, h, self.ids.att_h)?;
        let query = tape.repeat_rows(query, enc.cells)?;
        let pre = tape.add(enc.keys, query)?;
        let act = tape.tanh(pre);
        let v = tape.param(self.ids.att_v);
        let scores = tape.matmul(act, v)?;
        let scores = tape.reshape(scores, &[enc.rows, enc.cells])?;
        let weights = tape.softmax(scores, 1)?;
        let context = tape.segment_weighted_sum(weights, enc.projected)?;
        Ok((context, weights))
    }

    /// One LSTM step over `[embed(prev); context; z]`, then the output
    /// log-distribution.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        prev: &[usize],
        context: Var,
        z: Var,
        state: DecoderState,
    ) -> Result<(DecoderState, Var)> {
        let hd = self.config.hidden_dim;
        let table = tape.param(self.ids.embed);
        let emb = tape.embedding(table, prev)?;
        let input = tape.concat(&[emb, context, z, state.h], 1)?;
        let gates = self.linear(tape, input, self.ids.lstm)?;
        let i = tape.slice_cols(gates, 0, hd)?;
        let f = tape.slice_cols(gates, hd, hd)?;
        let g = tape.slice_cols(gates, 2 * hd, hd)?;
        let o = tape.slice_cols(gates, 3 * hd, hd)?;
        let (i, f, g, o) = (
            tape.sigmoid(i),
            tape.sigmoid(f),
            tape.tanh(g),
            tape.sigmoid(o),
        );
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        let logits = self.linear(tape, h, self.ids.out)?;
        let log_probs = tape.log_softmax(logits)?;
        Ok((DecoderState { h, c }, log_probs))
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        z: Var,
        state: DecoderState,
        prev: &[usize],
    ) -> Result<StepOutput> {
        let (context, attention) = self.attend(tape, enc, state.h)?;
        let (state, log_probs) = self.decode_step(tape, prev, context, z, state)?;
        Ok(StepOutput {
            state,
            log_probs,
            attention,
        })
    }

    /// Teacher-forced log-probabilities of `targets` (each row fed `BOS`
    /// then its own previous targets). Returns `[rows, steps]` and a mask
    /// marking real entries.
    pub fn target_log_probs(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        z: Var,
        targets: &[&[usize]],
    ) -> Result<(Var, Vec<f64>)> {
        if targets.len() != enc.rows {
            return Err(Error::Shape {
                op: "target_log_probs",
                detail: format!("{} targets for {} encoded rows", targets.len(), enc.rows),
            });
        }
        let steps = targets.iter().map(|t| t.len()).max().unwrap_or(0);
        if steps == 0 {
            return Err(Error::Empty("target sequences"));
        }
        let mut state = enc.init;
        let mut picked = Vec::with_capacity(steps);
        let mut mask = vec![0.0; enc.rows * steps];
        for t in 0..steps {
            let prev: Vec<usize> = targets
                .iter()
                .map(|s| match t {
                    0 => BOS,
                    _ => s.get(t - 1).copied().unwrap_or(PAD),
                })
                .collect();
            let out = self.step(tape, enc, z, state, &prev)?;
            state = out.state;
            let want: Vec<usize> = targets
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(PAD))
                .collect();
            picked.push(tape.pick(out.log_probs, &want)?);
            for (r, s) in targets.iter().enumerate() {
                if t < s.len() {
                    mask[r * steps + t] = 1.0;
                }
            }
        }
        Ok((tape.concat(&picked, 1)?, mask))
    }

    /// Summed negative log-likelihood of `targets` over all rows.
    pub fn nll(&self, tape: &mut Tape, enc: &Encoded, z: Var, targets: &[&[usize]]) -> Result<Var> {
        let (lp, mask) = self.target_log_probs(tape, enc, z, targets)?;
        let neg: Vec<f64> = mask.iter().map(|m| -m).collect();
        tape.dot_const(lp, &neg)
    }

    /// Runs the decoder from `BOS`, choosing each token with `choose`, until
    /// every row has emitted `EOS` or `max_len` tokens.
    fn unroll<F>(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        z: Var,
        max_len: usize,
        mut choose: F,
    ) -> Result<SampledBatch>
    where
        F: FnMut(&[f64]) -> usize,
    {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        let rows = enc.rows;
        let k = self.config.vocab_size;
        let mut seqs = vec![
            SampledSequence {
                tokens: Vec::new(),
                log_probs: Vec::new(),
            };
            rows
        ];
        let mut done = vec![false; rows];
        let mut prev = vec![BOS; rows];
        let mut state = enc.init;
        let mut picked = Vec::new();
        let mut live: Vec<Vec<bool>> = Vec::new();
        for _ in 0..max_len {
            let out = self.step(tape, enc, z, state, &prev)?;
            state = out.state;
            let lp = tape.value(out.log_probs).data();
            let mut chosen = vec![PAD; rows];
            let mut active = vec![false; rows];
            for r in 0..rows {
                if done[r] {
                    continue;
                }
                let row = &lp[r * k..(r + 1) * k];
                let tok = choose(row);
                chosen[r] = tok;
                active[r] = true;
                seqs[r].tokens.push(tok);
                seqs[r].log_probs.push(row[tok]);
                if tok == EOS {
                    done[r] = true;
                }
            }
            picked.push(tape.pick(out.log_probs, &chosen)?);
            live.push(active);
            prev = chosen;
            if done.iter().all(|&d| d) {
                break;
            }
        }
        let steps = picked.len();
        let mut mask = vec![0.0; rows * steps];
        for (t, active) in live.iter().enumerate() {
            for (r, &a) in active.iter().enumerate() {
                if a {
                    mask[r * steps + t] = 1.0;
                }
            }
        }
        Ok(SampledBatch {
            sequences: seqs,
            log_probs: tape.concat(&picked, 1)?,
            mask,
            steps,
        })
    }

    /// Draws one caption per encoded row from the model distribution.
    pub fn sample<R: Rng>(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        z: Var,
        max_len: usize,
        rng: &mut R,
    ) -> Result<SampledBatch> {
        self.unroll(tape, enc, z, max_len, |row| sample_log_probs(row, rng))
    }

    /// Most likely token at every step, one caption per encoded row.
    pub fn greedy(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        z: Var,
        max_len: usize,
    ) -> Result<SampledBatch> {
        self.unroll(tape, enc, z, max_len, argmax)
    }

    /// Greedy captions (word ids, no `EOS`) for a batch of grids.
    pub fn greedy_decode(&self, grids: &[&FeatureGrid], max_len: usize) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::with_params(&self.store);
        let enc = self.encode(&mut tape, grids)?;
        let attrs = self.predict_attributes(&mut tape, &enc)?;
        let batch = self.greedy(&mut tape, &enc, attrs.z, max_len)?;
        Ok(batch.sequences.iter().map(|s| s.words().to_vec()).collect())
    }

    /// One sampled caption for `grid`, reproducible from `seed`.
    pub fn sample_decode(
        &self,
        grid: &FeatureGrid,
        max_len: usize,
        seed: u64,
    ) -> Result<SampledSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::with_params(&self.store);
        let enc = self.encode(&mut tape, &[grid])?;
        let attrs = self.predict_attributes(&mut tape, &enc)?;
        let mut batch = self.sample(&mut tape, &enc, attrs.z, max_len, &mut rng)?;
        Ok(batch.sequences.remove(0))
    }

    /// `log p(tokens | grid)` by teacher forcing.
    pub fn sequence_log_prob(&self, grid: &FeatureGrid, tokens: &[usize]) -> Result<f64> {
        let mut tape = Tape::with_params(&self.store);
        let enc = self.encode(&mut tape, &[grid])?;
        let attrs = self.predict_attributes(&mut tape, &enc)?;
        let nll = self.nll(&mut tape, &enc, attrs.z, &[tokens])?;
        Ok(-tape.value(nll).item())
    }

    /// Per-attribute probabilities for a batch of grids.
    pub fn attribute_probs(&self, grids: &[&FeatureGrid]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::with_params(&self.store);
        let enc = self.encode(&mut tape, grids)?;
        let attrs = self.predict_attributes(&mut tape, &enc)?;
        let a = self.config.n_attributes;
        Ok(tape
            .value(attrs.probs)
            .data()
            .chunks(a)
            .map(<[f64]>::to_vec)
            .collect())
    }
}

/// Inverse-CDF draw from a row of log-probabilities.
pub(crate) fn sample_log_probs<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &lp) in row.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

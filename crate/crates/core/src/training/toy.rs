//! A tabular sequence policy over a three-token vocabulary, small enough
//! that every sequence can be enumerated. Used to check the policy-gradient
//! estimator against the exact gradient.

use rand::Rng;

use super::{advantages, reinforce_surrogate};
use crate::error::{Error, Result};
use crate::models::sample_log_probs;
use crate::tensor::{ParamStore, Tape, Tensor};

pub const TOKENS: usize = 3;
/// The stop token of the toy vocabulary.
pub const STOP: usize = 1;
pub const MAX_LEN: usize = 2;

/// Context rows of the logits table: the start state, then one row per
/// non-stop token that can precede the second step.
const CONTEXTS: usize = 3;

fn context(prev: Option<usize>) -> usize {
    match prev {
        None => 0,
        Some(0) => 1,
        Some(_) => 2,
    }
}

/// `logits[context][token]`, shape `[3, 3]`, 9 parameters.
#[derive(Clone, Debug)]
pub struct TabularPolicy {
    store: ParamStore,
}

impl TabularPolicy {
    pub fn new(logits: &[f64]) -> Result<Self> {
        if logits.len() != CONTEXTS * TOKENS {
            return Err(Error::Config(format!(
                "expected {} logits",
                CONTEXTS * TOKENS
            )));
        }
        let mut store = ParamStore::new();
        store.add("logits", Tensor::matrix(CONTEXTS, TOKENS, logits.to_vec())?)?;
        Ok(Self { store })
    }

    pub fn logits(&self) -> &[f64] {
        self.store
            .get(self.store.id("logits").expect("registered"))
            .data()
    }

    /// Log-distribution of the next token after `prev` (`None` at the start).
    pub fn step_log_probs(&self, prev: Option<usize>) -> Vec<f64> {
        let row = &self.logits()[context(prev) * TOKENS..][..TOKENS];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.iter().map(|x| x - lse).collect()
    }

    /// Draws tokens until `STOP` or `MAX_LEN`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let mut seq = Vec::with_capacity(MAX_LEN);
        while seq.len() < MAX_LEN {
            let t = sample_log_probs(&self.step_log_probs(seq.last().copied()), rng);
            seq.push(t);
            if t == STOP {
                break;
            }
        }
        seq
    }

    /// Gradient of the policy-gradient surrogate for `groups` independent
    /// groups of `samples` draws, using the training code path: per-group
    /// mean baseline, `reinforce_surrogate`, and backpropagation through
    /// the logits table. Returns the 9 coordinates.
    pub fn estimate_gradient<R: Rng>(
        &self,
        reward: impl Fn(&[usize]) -> f64,
        samples: usize,
        groups: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let rows = samples * groups;
        let seqs: Vec<Vec<usize>> = (0..rows).map(|_| self.sample(rng)).collect();
        let rewards: Vec<f64> = seqs.iter().map(|s| reward(s)).collect();
        let (_, adv) = advantages(&rewards, samples)?;
        let mut ctx = Vec::with_capacity(rows * MAX_LEN);
        let mut tokens = Vec::with_capacity(rows * MAX_LEN);
        let mut mask = Vec::with_capacity(rows * MAX_LEN);
        for s in &seqs {
            for t in 0..MAX_LEN {
                match s.get(t) {
                    Some(&tok) => {
                        ctx.push(context(t.checked_sub(1).map(|p| s[p])));
                        tokens.push(tok);
                        mask.push(1.0);
                    }
                    None => {
                        ctx.push(0);
                        tokens.push(0);
                        mask.push(0.0);
                    }
                }
            }
        }
        let id = self.store.id("logits").expect("registered");
        let mut tape = Tape::with_params(&self.store);
        let table = tape.param(id);
        let x = tape.embedding(table, &ctx)?;
        let lp = tape.log_softmax(x)?;
        let picked = tape.pick(lp, &tokens)?;
        let lp = tape.reshape(picked, &[rows, MAX_LEN])?;
        let loss = reinforce_surrogate(&mut tape, lp, &mask, &adv, samples)?;
        let grads = tape.backward(loss)?;
        // The surrogate averages over groups already.
        Ok(grads
            .params()
            .get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; CONTEXTS * TOKENS]))
    }
}

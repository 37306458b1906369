//! Central finite-difference gradient checks.
//!
//! The numeric side only evaluates forward values, so it stays independent of
//! the backward rules it is checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Denominator floor for relative error, so coordinates whose true gradient
/// is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input or parameter index, flat coordinate)` of the worst mismatch.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, which: usize, coord: usize, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        self.coords_checked += 1;
        if rel > self.max_rel_err || self.coords_checked == 1 {
            self.max_rel_err = rel;
            self.worst = (which, coord);
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Checks d f / d inputs for a graph built by `f` from leaf inputs.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(<[f64]>::to_vec);
        for c in 0..inputs[i].len() {
            let orig = work[i].data()[c];
            work[i].data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g[c]);
            report.record(i, c, a, numeric);
        }
    }
    Ok(report)
}

/// Checks parameter gradients of a loss built by `f` on a tape over `store`.
/// At most `max_coords_per_param` randomly chosen coordinates are probed in
/// each parameter tensor.
pub fn check_params<F>(
    store: &ParamStore,
    h: f64,
    max_coords_per_param: usize,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::with_params(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?.into_params()
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::with_params(s);
        let l = f(&mut t)?;
        Ok(t.value(l).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for id in store.ids() {
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= max_coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, max_coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let orig = work.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grads.get(id).map_or(0.0, |g| g[c]);
            report.record(id.index(), c, a, numeric);
        }
    }
    Ok(report)
}

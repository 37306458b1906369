//! Finite-difference checks of every tape op and of the composed losses.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcap::dataset::FeatureGrid;
use semcap::models::{Captioner, CaptionerConfig, ClassifierConfig, TextClassifier};
use semcap::tensor::gradcheck::{check_inputs, check_params, GradCheckReport};
use semcap::tensor::{Tape, Tensor, Var};
use semcap::text::EOS;
use semcap::training::{advantages, attribute_loss, cross_entropy, reinforce_surrogate, BCE_EPS};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Worst relative error seen, with the check that produced it.
#[derive(Default)]
pub struct Worst {
    pub checks: usize,
    pub rel: f64,
    pub name: String,
}

impl Worst {
    fn add(&mut self, name: &str, rep: GradCheckReport) {
        self.checks += 1;
        if rep.max_rel_err >= self.rel {
            self.rel = rep.max_rel_err;
            self.name = name.to_string();
        }
    }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Scalar projection with fixed random weights, so each output coordinate
/// gets its own upstream gradient.
fn project(t: &mut Tape, v: Var, seed: u64) -> semcap::Result<Var> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..t.value(v).len())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    t.dot_const(v, &w)
}

type Op<'a> = (
    &'a str,
    Vec<Tensor>,
    Box<dyn Fn(&mut Tape, &[Var]) -> semcap::Result<Var> + 'a>,
);

fn case<'a>(
    name: &'a str,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Tape, &[Var]) -> semcap::Result<Var> + 'a,
) -> Op<'a> {
    (name, inputs, Box::new(f))
}

fn ops(seed: u64, worst: &mut Worst) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rand_t(&mut rng, &[3, 4]);
    let b = rand_t(&mut rng, &[4, 2]);
    let c = rand_t(&mut rng, &[3, 4]);
    let bias = rand_t(&mut rng, &[4]);
    let side = rand_t(&mut rng, &[3, 2]);
    let table = rand_t(&mut rng, &[5, 3]);
    let seq = rand_t(&mut rng, &[6, 3]);
    let kernel = rand_t(&mut rng, &[9, 4]);
    let kbias = rand_t(&mut rng, &[4]);
    let steps = rand_t(&mut rng, &[5, 4]);
    let segs = rand_t(&mut rng, &[6, 2]);
    let attn = rand_t(&mut rng, &[2, 3]);
    let values = rand_t(&mut rng, &[6, 4]);
    let kinkless = Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .map(|x| if x.abs() < 0.05 { x + 0.1 } else { *x })
            .collect(),
    )?;
    let probs = Tensor::new(
        vec![2, 3],
        (0..6).map(|_| rng.random_range(0.05..0.95)).collect(),
    )?;
    let labels: Vec<f64> = (0..6)
        .map(|_| f64::from(rng.random_range(0..2u8)))
        .collect();

    let cases = vec![
        case("matmul", vec![a.clone(), b], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, 1)
        }),
        case("add", vec![a.clone(), c.clone()], |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 2)
        }),
        case("add (row broadcast)", vec![a.clone(), bias], |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 3)
        }),
        case("mul", vec![a.clone(), c.clone()], |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 4)
        }),
        case("scale", vec![a.clone()], |t, v| {
            let y = t.scale(v[0], -2.5);
            project(t, y, 5)
        }),
        case("concat rows", vec![a.clone(), c], |t, v| {
            let y = t.concat(&[v[0], v[1]], 0)?;
            project(t, y, 6)
        }),
        case("concat cols", vec![a.clone(), side], |t, v| {
            let y = t.concat(&[v[0], v[1], v[0]], 1)?;
            project(t, y, 7)
        }),
        case("mean", vec![a.clone()], |t, v| {
            let y = t.mul(v[0], v[0])?;
            t.mean(y)
        }),
        case("sum", vec![a.clone()], |t, v| {
            let y = t.tanh(v[0]);
            Ok(t.sum(y))
        }),
        case("embedding", vec![table], |t, v| {
            let y = t.embedding(v[0], &[4, 0, 4, 2])?;
            project(t, y, 8)
        }),
        case("sigmoid", vec![a.clone()], |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, 9)
        }),
        case("tanh", vec![a.clone()], |t, v| {
            let y = t.tanh(v[0]);
            project(t, y, 10)
        }),
        case("relu", vec![kinkless], |t, v| {
            let y = t.relu(v[0]);
            project(t, y, 11)
        }),
        case("softmax rows", vec![a.clone()], |t, v| {
            let y = t.softmax(v[0], 1)?;
            project(t, y, 12)
        }),
        case("softmax cols", vec![a.clone()], |t, v| {
            let y = t.softmax(v[0], 0)?;
            project(t, y, 13)
        }),
        case("log_softmax", vec![a.clone()], |t, v| {
            let y = t.log_softmax(v[0])?;
            project(t, y, 14)
        }),
        case("conv1d", vec![seq, kernel, kbias], |t, v| {
            let y = t.conv1d(v[0], v[1], v[2], 3)?;
            project(t, y, 15)
        }),
        case("max_over_time", vec![steps], |t, v| {
            let y = t.max_over_time(v[0])?;
            project(t, y, 16)
        }),
        case("dropout", vec![a.clone()], |t, v| {
            let y = t.dropout(v[0], 0.3, true, 77);
            project(t, y, 17)
        }),
        case("slice_cols", vec![a.clone()], |t, v| {
            let y = t.slice_cols(v[0], 1, 2)?;
            project(t, y, 18)
        }),
        case("pick", vec![a.clone()], |t, v| {
            let y = t.pick(v[0], &[3, 0, 3])?;
            project(t, y, 19)
        }),
        case("repeat_rows", vec![a.clone()], |t, v| {
            let y = t.repeat_rows(v[0], 3)?;
            project(t, y, 20)
        }),
        case("segment_mean", vec![segs], |t, v| {
            let y = t.segment_mean(v[0], 3)?;
            project(t, y, 21)
        }),
        case("segment_weighted_sum", vec![attn, values], |t, v| {
            let y = t.segment_weighted_sum(v[0], v[1])?;
            project(t, y, 22)
        }),
        case("reshape", vec![a.clone()], |t, v| {
            let y = t.reshape(v[0], &[2, 6])?;
            let y = t.softmax(y, 1)?;
            project(t, y, 23)
        }),
        case("dot_const", vec![a], |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, 24)
        }),
        case("binary_cross_entropy", vec![probs], move |t, v| {
            t.binary_cross_entropy(v[0], &labels, BCE_EPS)
        }),
    ];
    for (name, inputs, f) in cases {
        worst.add(name, check_inputs(&inputs, H, f)?);
    }
    Ok(())
}

fn grid(rng: &mut ChaCha8Rng, cells: usize, dim: usize) -> FeatureGrid {
    FeatureGrid::new(
        cells,
        dim,
        (0..cells * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn losses(seed: u64, worst: &mut Worst) -> Result<()> {
    let cfg = CaptionerConfig {
        vocab_size: 8,
        feature_dim: 4,
        n_attributes: 3,
        embed_dim: 3,
        hidden_dim: 4,
        attr_hidden_dim: 3,
        attention_dim: 3,
    };
    let m = Captioner::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids = [grid(&mut rng, 3, 4), grid(&mut rng, 3, 4)];
    let gref: Vec<&FeatureGrid> = grids.iter().collect();
    let caps: [&[usize]; 2] = [&[4, 5, 7, EOS], &[6, EOS]];
    let labels: Vec<f64> = (0..6)
        .map(|_| f64::from(rng.random_range(0..2u8)))
        .collect();
    let sampled: [&[usize]; 6] = [
        &[4, EOS],
        &[5, 6, 4],
        &[EOS],
        &[6, 6, EOS],
        &[7, 5],
        &[4, 4, 4, EOS],
    ];
    let rewards: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
    let (_, adv) = advantages(&rewards, 3)?;

    let mle = check_params(m.store(), H, 6, seed, |t| {
        let enc = m.encode(t, &gref)?;
        let a = m.predict_attributes(t, &enc)?;
        let nll = m.nll(t, &enc, a.z, &caps)?;
        Ok(t.scale(nll, 0.5))
    })?;
    worst.add("L_MLE", mle);

    let attr = check_params(m.store(), H, 6, seed, |t| {
        let enc = m.encode(t, &gref)?;
        let a = m.predict_attributes(t, &enc)?;
        attribute_loss(t, a.probs, &labels)
    })?;
    worst.add("L_a", attr);

    let surrogate = check_params(m.store(), H, 6, seed, |t| {
        let enc = m.encode(t, &gref)?;
        let a = m.predict_attributes(t, &enc)?;
        let rep = m.repeat_encoded(t, &enc, 3)?;
        let z = t.repeat_rows(a.z, 3)?;
        let (lp, mask) = m.target_log_probs(t, &rep, z, &sampled)?;
        reinforce_surrogate(t, lp, &mask, &adv, 3)
    })?;
    worst.add("REINFORCE surrogate", surrogate);

    let ccfg = ClassifierConfig {
        embed_dim: 4,
        filters: 3,
        dropout: 0.0,
        ..ClassifierConfig::new(12, 3)
    };
    let clf = TextClassifier::new(ccfg, seed)?;
    let seqs: [&[usize]; 2] = [&[4, 5, 6, 7, 8, 9], &[10, 11, 4, 5, 6]];
    let ce = check_params(clf.store(), H, 6, seed, |t| {
        let logits = clf.logits(t, &seqs, false, 0)?;
        cross_entropy(t, logits, &[1, 2])
    })?;
    worst.add("classifier cross-entropy", ce);
    Ok(())
}

pub fn check_all(seeds: std::ops::Range<u64>) -> Result<Worst> {
    let mut worst = Worst::default();
    for s in seeds {
        ops(s, &mut worst)?;
        losses(s, &mut worst)?;
    }
    Ok(worst)
}

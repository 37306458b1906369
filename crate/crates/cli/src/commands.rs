use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use semcap::dataset::{
    common_grid_shape, generate_synthetic_corpus, ingest as label_records, load_dataset_dir,
    read_raw_records, write_dataset_dir, write_raw_records, AliasMap, AttributeVocab, Dataset,
    IngestConfig, PosLexicon, SplitName,
};
use semcap::metrics::{attribute_map, bleu4, category_acc, cider, rouge_l, EvalReport};
use semcap::models::{Captioner, ClassifierConfig};
use semcap::rewards::{
    als_reward, combined_reward, sls_rewards, AttributeMatchReport, AttributeMatcher, RewardConfig,
};
use semcap::training::{
    self, classifier_accuracy, evaluate_split, labeled_captions, prepare, RewardContext,
    METRICS_FILE,
};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{
    align, load_captioner, read_captions, write_captions, write_json, CaptionRecord,
    ClassifierBundle,
};
use crate::config::{self, ClassifierRunConfig, ModelDims, RunConfig, SynthRunConfig};
use crate::manifest::Recorder;
use crate::{
    plot, ClassifierArgs, EvalArgs, GenerateArgs, IngestArgs, ScoreArgs, SynthArgs, TrainArgs,
    DATA_DIR_ENV,
};

pub const RAW_FILE: &str = "raw.jsonl";
pub const LEXICON_FILE: &str = "lexicon.txt";
pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const CLASSIFIER_LOG: &str = "classifier_log.csv";
pub const CLASSIFIER_REPORT: &str = "classifier_report.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const TEST_REPORT_FILE: &str = "test_eval.json";
pub const REWARD_PLOT: &str = "reward_curve.svg";

fn data_root(flag: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => bail!("no data directory given and {DATA_DIR_ENV} is not set"),
    }
}

fn load_data(dir: &Path) -> Result<Dataset> {
    load_dataset_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn borrowed(pairs: &[(Vec<usize>, usize)]) -> Vec<(&[usize], usize)> {
    pairs.iter().map(|(w, c)| (w.as_slice(), *c)).collect()
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let out = data_root(a.out)?;
    let settings = json!({
        "min_attr_items": a.min_attr_items,
        "min_cat_items": a.min_cat_items,
        "min_count": a.min_count,
        "split": a.split,
    });
    let mut rec = Recorder::start("ingest", &config::canonical_bytes(&settings)?, Some(a.seed));
    let ds = (|| -> Result<Dataset> {
        let records =
            read_raw_records(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        let lexicon = PosLexicon::load(&a.lexicon)
            .with_context(|| format!("reading {}", a.lexicon.display()))?;
        let aliases = match &a.aliases {
            Some(p) => AliasMap::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => AliasMap::default(),
        };
        let cfg = IngestConfig {
            min_attr_items: a.min_attr_items,
            min_cat_items: a.min_cat_items,
            aliases,
        };
        let (items, attributes, categories) = label_records(&records, &lexicon, &cfg)?;
        Ok(Dataset::build(
            items,
            attributes,
            categories,
            a.split,
            a.min_count,
            a.seed,
        )?)
    })()
    .context("ingest")?;
    rec.input(&a.input);
    rec.input(&a.lexicon);
    if let Some(p) = &a.aliases {
        rec.input(p);
    }
    write_dataset_dir(&out, &ds).with_context(|| format!("ingest: writing {}", out.display()))?;
    rec.artifacts_in(&out)?;
    rec.finish(&out)?;
    eprintln!(
        "ingest: {} items, {} categories, {} attributes, vocabulary {}",
        ds.items.len(),
        ds.categories.len(),
        ds.attributes.len(),
        ds.vocab.len()
    );
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let out = data_root(a.out)?;
    let mut cfg: SynthRunConfig = config::load(a.config.as_deref()).context("synth")?;
    if let Some(v) = a.items {
        cfg.corpus.n_items = v;
    }
    if let Some(v) = a.categories {
        cfg.corpus.n_categories = v;
    }
    if let Some(v) = a.attributes {
        cfg.corpus.n_attributes = v;
    }
    if let Some(v) = a.noise {
        cfg.corpus.noise = v;
    }
    if let Some(v) = a.min_count {
        cfg.min_count = v;
    }
    if let Some(v) = a.split {
        cfg.split = v;
    }
    let mut rec = Recorder::start("synth", &config::canonical_bytes(&cfg)?, Some(a.seed));
    if let Some(p) = &a.config {
        rec.input(p);
    }
    let corpus =
        generate_synthetic_corpus(&cfg.corpus, a.seed).context("synth: generating corpus")?;
    let (raw, lexicon) = (corpus.raw, corpus.lexicon);
    let ds = Dataset::build(
        corpus.items,
        corpus.attributes,
        corpus.categories,
        cfg.split,
        cfg.min_count,
        a.seed,
    )
    .context("synth: splitting corpus")?;
    (|| -> Result<()> {
        write_dataset_dir(&out, &ds)?;
        write_raw_records(&out.join(RAW_FILE), &raw)?;
        fs::write(out.join(LEXICON_FILE), lexicon.to_text())?;
        Ok(())
    })()
    .with_context(|| format!("synth: writing {}", out.display()))?;
    rec.artifacts_in(&out)?;
    rec.finish(&out)?;
    eprintln!(
        "synth: {} items written to {}",
        ds.items.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ClassifierSummary {
    first_batch_loss: f64,
    best_val_acc: f64,
    test_acc: f64,
}

pub fn pretrain_classifier(a: ClassifierArgs) -> Result<()> {
    let data = data_root(a.data)?;
    let mut cfg: ClassifierRunConfig =
        config::load(a.config.as_deref()).context("pretrain-classifier")?;
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    let mut rec = Recorder::start(
        "pretrain-classifier",
        &config::canonical_bytes(&cfg)?,
        Some(cfg.train.seed),
    );
    rec.input(&data);
    if let Some(p) = &a.config {
        rec.input(p);
    }
    let ds = load_data(&data).context("pretrain-classifier")?;
    let split = |w| {
        ds.select(w)
            .map(|items| labeled_captions(&items, &ds.vocab))
    };
    let (train, val, test) = (
        split(SplitName::Train)?,
        split(SplitName::Val)?,
        split(SplitName::Test)?,
    );
    let model_cfg = ClassifierConfig {
        embed_dim: cfg.embed_dim,
        filters: cfg.filters,
        dropout: cfg.dropout,
        ..ClassifierConfig::new(ds.vocab.len(), ds.categories.len())
    };
    let run =
        training::pretrain_classifier(model_cfg, &borrowed(&train), &borrowed(&val), &cfg.train)
            .context("pretrain-classifier: training")?;
    let test_acc = classifier_accuracy(&run.classifier, &borrowed(&test))
        .context("pretrain-classifier: testing")?;

    fs::create_dir_all(&a.out)?;
    let bundle = ClassifierBundle {
        classifier: run.classifier,
        vocab: ds.vocab.clone(),
        categories: ds.categories.names().to_vec(),
    };
    bundle
        .save(&a.out.join(CLASSIFIER_FILE))
        .context("pretrain-classifier")?;
    let mut log = String::from("epoch,train_loss,val_acc\n");
    for e in &run.epochs {
        log.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_acc));
    }
    fs::write(a.out.join(CLASSIFIER_LOG), log)?;
    let summary = ClassifierSummary {
        first_batch_loss: run.first_batch_loss,
        best_val_acc: run.epochs.iter().map(|e| e.val_acc).fold(0.0, f64::max),
        test_acc,
    };
    write_json(&a.out.join(CLASSIFIER_REPORT), &summary)?;
    rec.artifacts_in(&a.out)?;
    rec.finish(&a.out)?;
    eprintln!("pretrain-classifier: test accuracy {test_acc:.4}");
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg: RunConfig = config::load(a.config.as_deref())?;
    if let Some(w) = a.width {
        cfg.model = ModelDims::uniform(w);
    }
    let t = &mut cfg.train;
    macro_rules! apply {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = a.$flag { $field = v; })*
        };
    }
    apply! {
        seed => t.seed,
        lr => t.lr,
        rl_weight => t.rl_weight,
        attr_weight => t.attr_weight,
        als_weight => t.rewards.als_weight,
        sls_weight => t.rewards.sls_weight,
        samples => t.samples,
        patience => t.patience,
        max_warmup_epochs => t.max_warmup_epochs,
        joint_epochs => t.joint_epochs,
        batch_size => t.batch_size,
        max_len => t.max_len,
        grad_clip => t.grad_clip,
    }
    if a.joint_lr.is_some() {
        t.joint_lr = a.joint_lr;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let data = data_root(a.data.clone())?;
    let cfg = resolve_train_config(&a).context("train: config")?;
    let cfg_bytes = config::canonical_bytes(&cfg)?;
    let mut rec = Recorder::start("train", &cfg_bytes, Some(cfg.train.seed));
    rec.input(&data);
    rec.input(&a.classifier);
    if let Some(p) = &a.config {
        rec.input(p);
    }

    let ds = load_data(&data).context("train")?;
    let bundle = ClassifierBundle::load(&a.classifier).context("train: classifier")?;
    bundle
        .check_matches(&ds.vocab, &ds.categories)
        .context("train: classifier")?;
    let n_attr = ds.attributes.len();
    let shape = common_grid_shape(&ds.items).context("train: features")?;
    let (tr, va, te) = (
        ds.select(SplitName::Train)?,
        ds.select(SplitName::Val)?,
        ds.select(SplitName::Test)?,
    );
    let (trx, vax, tex) = (
        prepare(&tr, &ds.vocab, n_attr)?,
        prepare(&va, &ds.vocab, n_attr)?,
        prepare(&te, &ds.vocab, n_attr)?,
    );
    let model = Captioner::new(
        cfg.model.captioner(ds.vocab.len(), shape.dim, n_attr),
        cfg.train.seed,
    )
    .context("train: model")?;
    let ctx = RewardContext::new(
        &bundle.classifier,
        &ds.attributes,
        &ds.vocab,
        cfg.train.rewards,
    );

    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(RUN_CONFIG_FILE), &cfg_bytes)?;
    let outcome = training::train(model, &trx, &vax, &ctx, &cfg.train, Some(&a.out))
        .context("train: optimisation")?;
    let test = evaluate_split(&outcome.model, &tex, &ctx, cfg.train.max_len)
        .context("train: test evaluation")?;
    write_json(&a.out.join(TEST_REPORT_FILE), &test)?;

    let x: Vec<f64> = outcome.log.iter().map(|e| e.epoch as f64).collect();
    let series = [
        (
            "val reward",
            outcome.log.iter().map(|e| e.val.reward).collect(),
        ),
        ("val ALS", outcome.log.iter().map(|e| e.val.als).collect()),
        ("val SLS", outcome.log.iter().map(|e| e.val.sls).collect()),
    ];
    fs::write(
        a.out.join(REWARD_PLOT),
        plot::line_chart("validation reward", &x, &series),
    )?;
    rec.artifacts_in(&a.out)?;
    rec.finish(&a.out)?;
    eprintln!(
        "train: {} epochs logged to {}; test reward {:.4}",
        outcome.log.len(),
        a.out.join(METRICS_FILE).display(),
        test.reward
    );
    Ok(())
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let data = data_root(a.data)?;
    let which: SplitName = serde_json::from_value(json!(a.split))
        .with_context(|| format!("generate: unknown split `{}`", a.split))?;
    let settings = json!({ "split": a.split, "max_len": a.max_len });
    let mut rec = Recorder::start("generate", &config::canonical_bytes(&settings)?, None);
    rec.input(&data);
    rec.input(&a.checkpoint);
    let ds = load_data(&data).context("generate")?;
    let model = load_captioner(&a.checkpoint).context("generate")?;
    ensure!(
        model.config().vocab_size == ds.vocab.len(),
        "generate: checkpoint vocabulary size {} differs from the dataset's {}",
        model.config().vocab_size,
        ds.vocab.len()
    );
    let items = ds.select(which)?;
    let mut rows = Vec::with_capacity(items.len());
    for chunk in items.chunks(64) {
        let grids = chunk
            .iter()
            .map(|i| i.features())
            .collect::<semcap::Result<Vec<_>>>()?;
        let caps = model
            .greedy_decode(&grids, a.max_len)
            .context("generate: decoding")?;
        for (item, ids) in chunk.iter().zip(caps) {
            rows.push(CaptionRecord {
                id: item.id.clone(),
                caption: ds.vocab.decode(&ids)?.join(" "),
                category: None,
                attributes: None,
            });
        }
    }
    write_captions(&a.out, &rows).context("generate")?;
    rec.artifact(&a.out);
    if let Some(p) = &a.refs {
        let refs: Vec<CaptionRecord> = items
            .iter()
            .map(|i| CaptionRecord::reference(i, &ds.attributes, &ds.categories))
            .collect();
        write_captions(p, &refs).context("generate")?;
        rec.artifact(p);
    }
    rec.finish(&parent_dir(&a.out))?;
    eprintln!(
        "generate: {} captions written to {}",
        rows.len(),
        a.out.display()
    );
    Ok(())
}

/// Per-caption reward report of `score`.
#[derive(Serialize)]
struct PairScore {
    id: String,
    /// Absent for an empty generated caption, which earns no attribute reward.
    als: Option<AttributeMatchReport>,
    r_als: f64,
    r_sls: Option<f64>,
    r: f64,
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let weights = RewardConfig {
        als_weight: a.als_weight,
        sls_weight: a.sls_weight,
    };
    weights.validate().context("score")?;
    let mut rec = Recorder::start("score", &config::canonical_bytes(&weights)?, None);
    for p in [&a.generated, &a.reference, &a.attributes] {
        rec.input(p);
    }
    let hyps = read_captions(&a.generated).context("score")?;
    let refs = read_captions(&a.reference).context("score")?;
    let pairs = align(&hyps, &refs).context("score")?;
    let attrs = AttributeVocab::load(&a.attributes)
        .with_context(|| format!("score: reading {}", a.attributes.display()))?;
    let matcher = AttributeMatcher::from_vocab(&attrs);

    let words: Vec<(Vec<String>, Vec<String>)> =
        pairs.iter().map(|(h, r)| (h.words(), r.words())).collect();
    let sls = match &a.classifier {
        Some(path) => {
            rec.input(path);
            let bundle = ClassifierBundle::load(path).context("score: classifier")?;
            let cats = pairs
                .iter()
                .map(|(_, r)| {
                    let name = r
                        .category
                        .as_deref()
                        .with_context(|| format!("reference `{}` has no category", r.id))?;
                    bundle.category_id(name)
                })
                .collect::<Result<Vec<_>>>()
                .context("score")?;
            let ids: Vec<Vec<usize>> = words
                .iter()
                .map(|(h, _)| bundle.vocab.encode_words(h))
                .collect();
            let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
            Some(sls_rewards(&bundle.classifier, &refs, &cats).context("score: category reward")?)
        }
        None => None,
    };

    let mut out = String::new();
    for (k, ((h, r), (hw, rw))) in pairs.iter().zip(&words).enumerate() {
        let als = if hw.is_empty() {
            None
        } else {
            Some(als_reward(hw, rw, &matcher).with_context(|| format!("score: pair `{}`", r.id))?)
        };
        let r_als = als.as_ref().map_or(0.0, |x| x.reward);
        let r_sls = sls.as_ref().map(|s| s[k]);
        let row = PairScore {
            id: h.id.clone(),
            r: combined_reward(r_als, r_sls.unwrap_or(0.0), &weights),
            als,
            r_als,
            r_sls,
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    match &a.out {
        Some(p) => {
            fs::write(p, out).with_context(|| format!("score: writing {}", p.display()))?;
            rec.artifact(p);
            rec.finish(&parent_dir(p))?;
        }
        None => std::io::stdout().write_all(out.as_bytes())?,
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut rec = Recorder::start("eval", b"{}", None);
    for p in [&a.hyp, &a.r#ref, &a.attributes, &a.classifier] {
        rec.input(p);
    }
    let hyps = read_captions(&a.hyp).context("eval")?;
    let refs = read_captions(&a.r#ref).context("eval")?;
    let pairs = align(&hyps, &refs).context("eval")?;
    let attrs = AttributeVocab::load(&a.attributes)
        .with_context(|| format!("eval: reading {}", a.attributes.display()))?;
    let bundle = ClassifierBundle::load(&a.classifier).context("eval: classifier")?;

    let hyp_words: Vec<Vec<String>> = pairs.iter().map(|(h, _)| h.words()).collect();
    let ref_words: Vec<Vec<String>> = pairs.iter().map(|(_, r)| r.words()).collect();
    let mut truth = Vec::with_capacity(pairs.len());
    let mut cats = Vec::with_capacity(pairs.len());
    for (_, r) in &pairs {
        let names = r
            .attributes
            .as_ref()
            .with_context(|| format!("eval: reference `{}` has no attributes", r.id))?;
        let mut ids = names
            .iter()
            .map(|n| {
                attrs
                    .id(n)
                    .with_context(|| format!("eval: reference `{}`: unknown attribute `{n}`", r.id))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.sort_unstable();
        ids.dedup();
        truth.push(ids);
        let cat = r
            .category
            .as_deref()
            .with_context(|| format!("eval: reference `{}` has no category", r.id))?;
        cats.push(bundle.category_id(cat).context("eval")?);
    }
    let phrases: Vec<Vec<String>> = attrs.iter().map(|(_, p)| p.to_vec()).collect();
    let hyp_ids: Vec<Vec<usize>> = hyp_words
        .iter()
        .map(|w| bundle.vocab.encode_words(w))
        .collect();
    let report = (|| -> Result<EvalReport> {
        Ok(EvalReport {
            bleu4: bleu4(&hyp_words, &ref_words)?,
            rouge_l: rouge_l(&hyp_words, &ref_words)?,
            cider: cider(&hyp_words, &ref_words)?,
            map: attribute_map(&hyp_words, &truth, &phrases)?,
            acc: category_acc(&hyp_ids, &cats, &bundle.classifier)?,
        })
    })()
    .context("eval: metrics")?;

    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => {
            fs::write(p, &text).with_context(|| format!("eval: writing {}", p.display()))?;
            rec.artifact(p);
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    if let Some(p) = &a.plot {
        let bars = [
            ("BLEU-4", report.bleu4),
            ("ROUGE-L", report.rouge_l),
            ("CIDEr", report.cider),
            ("mAP", report.map),
            ("ACC", report.acc),
        ];
        fs::write(p, plot::bar_chart("evaluation", &bars))
            .with_context(|| format!("eval: writing {}", p.display()))?;
        rec.artifact(p);
    }
    if let Some(dir) = a.out.as_deref().or(a.plot.as_deref()).map(parent_dir) {
        rec.finish(&dir)?;
    }
    Ok(())
}

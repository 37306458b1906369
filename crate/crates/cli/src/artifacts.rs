use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use semcap::dataset::{AttributeVocab, CategorySet, Item};
use semcap::models::{Captioner, CaptionerConfig, ClassifierConfig, TextClassifier};
use semcap::tensor::{load_checkpoint, save_checkpoint};
use semcap::text::{tokenize_words, Vocab};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// One line of a caption file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<String>>,
}

impl CaptionRecord {
    pub fn words(&self) -> Vec<String> {
        tokenize_words(&self.caption)
    }

    /// Reference record of a labeled item.
    pub fn reference(item: &Item, attributes: &AttributeVocab, categories: &CategorySet) -> Self {
        Self {
            id: item.id.clone(),
            caption: item.caption.join(" "),
            category: Some(categories.name(item.category).to_string()),
            attributes: Some(
                item.attributes
                    .iter()
                    .map(|&a| attributes.phrase_text(a))
                    .collect(),
            ),
        }
    }
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed caption record", path.display(), i + 1))?;
        out.push(rec);
    }
    ensure!(
        !out.is_empty(),
        "{} holds no caption records",
        path.display()
    );
    Ok(out)
}

pub fn write_captions(path: &Path, rows: &[CaptionRecord]) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Pairs hypotheses with references by id, in reference order.
pub fn align<'a>(
    hyps: &'a [CaptionRecord],
    refs: &'a [CaptionRecord],
) -> Result<Vec<(&'a CaptionRecord, &'a CaptionRecord)>> {
    let by_id: std::collections::HashMap<&str, &CaptionRecord> =
        hyps.iter().map(|h| (h.id.as_str(), h)).collect();
    ensure!(
        by_id.len() == hyps.len(),
        "duplicate ids among the generated captions"
    );
    refs.iter()
        .map(|r| {
            by_id
                .get(r.id.as_str())
                .map(|h| (*h, r))
                .with_context(|| format!("no generated caption for reference `{}`", r.id))
        })
        .collect()
}

/// A pretrained category classifier with the word and category
/// vocabularies it was trained on.
pub struct ClassifierBundle {
    pub classifier: TextClassifier,
    pub vocab: Vocab,
    pub categories: Vec<String>,
}

impl ClassifierBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = json!({
            "kind": "classifier",
            "config": self.classifier.config(),
            "vocab": self.vocab.words(),
            "categories": self.categories,
        });
        save_checkpoint(path, self.classifier.store(), meta)
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) =
            load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
        if meta["kind"] != "classifier" {
            bail!("{} is not a classifier checkpoint", path.display());
        }
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .with_context(|| format!("{}: meta lacks `{k}`", path.display()))
        };
        let config: ClassifierConfig = serde_json::from_value(field("config")?)?;
        let words: Vec<String> = serde_json::from_value(field("vocab")?)?;
        let categories: Vec<String> = serde_json::from_value(field("categories")?)?;
        let vocab = Vocab::from_tokens(words)?;
        ensure!(
            vocab.len() == config.vocab_size && categories.len() == config.n_categories,
            "{}: vocabulary or category count disagrees with the model config",
            path.display()
        );
        Ok(Self {
            classifier: TextClassifier::from_store(config, &store)?,
            vocab,
            categories,
        })
    }

    pub fn category_id(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == name)
            .with_context(|| format!("category `{name}` unknown to the classifier"))
    }

    /// Checks the classifier was trained on this word and category vocabulary.
    pub fn check_matches(&self, vocab: &Vocab, categories: &CategorySet) -> Result<()> {
        ensure!(
            self.vocab.words() == vocab.words(),
            "classifier vocabulary differs from the dataset vocabulary"
        );
        ensure!(
            self.categories == categories.names(),
            "classifier categories differ from the dataset categories"
        );
        Ok(())
    }
}

pub fn load_captioner(path: &Path) -> Result<Captioner> {
    let (store, meta) =
        load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    if meta["kind"] != "captioner" {
        bail!("{} is not a captioner checkpoint", path.display());
    }
    let config: CaptionerConfig = serde_json::from_value(meta["config"].clone())
        .with_context(|| format!("{}: captioner config", path.display()))?;
    Ok(Captioner::from_store(config, &store)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, caption: &str) -> CaptionRecord {
        CaptionRecord {
            id: id.into(),
            caption: caption.into(),
            category: None,
            attributes: None,
        }
    }

    #[test]
    fn captions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let rows = vec![rec("a", "red dress"), rec("b", "blue coat")];
        write_captions(&p, &rows).unwrap();
        assert_eq!(read_captions(&p).unwrap(), rows);
    }

    #[test]
    fn malformed_lines_name_their_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"id\":\"a\",\"caption\":\"x\"}\n{\"id\":3}\n").unwrap();
        let err = format!("{:#}", read_captions(&p).unwrap_err());
        assert!(err.contains("c.jsonl:2"), "{err}");
    }

    #[test]
    fn alignment_follows_reference_order() {
        let hyps = vec![rec("b", "x"), rec("a", "y")];
        let refs = vec![rec("a", "p"), rec("b", "q")];
        let pairs = align(&hyps, &refs).unwrap();
        assert_eq!(pairs[0].0.caption, "y");
        assert!(align(&hyps[..1], &refs).is_err());
    }
}

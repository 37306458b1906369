//! JSONL records and the on-disk dataset directory.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::{AttributeVocab, CategorySet};
use super::split::DatasetSplit;
use super::{FeatureGrid, Item};
use crate::error::{Error, Result};
use crate::text::Vocab;

pub const ITEMS_FILE: &str = "dataset.jsonl";
pub const ATTRIBUTES_FILE: &str = "attributes.txt";
pub const CATEGORIES_FILE: &str = "categories.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPLIT_FILE: &str = "split.json";

/// One input record before labeling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub meta: String,
    #[serde(default)]
    pub color: String,
    /// `B` rows of `D` image features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw_records(path: &Path) -> Result<Vec<RawRecord>> {
    read_jsonl(path)
}

pub fn write_raw_records(path: &Path, records: &[RawRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// A labeled item as stored in `dataset.jsonl`; labels are written by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessedRecord {
    pub id: String,
    pub title: Vec<String>,
    pub caption: Vec<String>,
    pub meta: Vec<String>,
    pub color: Vec<String>,
    pub category: String,
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
}

impl ProcessedRecord {
    pub fn from_item(item: &Item, attributes: &AttributeVocab, categories: &CategorySet) -> Self {
        Self {
            id: item.id.clone(),
            title: item.title.clone(),
            caption: item.caption.clone(),
            meta: item.meta.clone(),
            color: item.color.clone(),
            category: categories.name(item.category).to_string(),
            attributes: item
                .attributes
                .iter()
                .map(|&a| attributes.phrase_text(a))
                .collect(),
            features: item.features.as_ref().map(FeatureGrid::to_rows),
        }
    }

    pub fn into_item(self, attributes: &AttributeVocab, categories: &CategorySet) -> Result<Item> {
        let category = categories.id(&self.category).ok_or_else(|| {
            Error::Config(format!(
                "item `{}` has unknown category `{}`",
                self.id, self.category
            ))
        })?;
        let mut attrs = self
            .attributes
            .iter()
            .map(|p| {
                attributes.id(p).ok_or_else(|| {
                    Error::Config(format!("item `{}` has unknown attribute `{p}`", self.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        attrs.sort_unstable();
        attrs.dedup();
        let features = self
            .features
            .as_deref()
            .map(FeatureGrid::from_rows)
            .transpose()?;
        Ok(Item {
            id: self.id,
            title: self.title,
            caption: self.caption,
            meta: self.meta,
            color: self.color,
            category,
            attributes: attrs,
            features,
        })
    }
}

/// Labeled items with their label sets, split and word vocabulary.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub attributes: AttributeVocab,
    pub categories: CategorySet,
    pub split: DatasetSplit,
    pub vocab: Vocab,
}

impl Dataset {
    /// Splits `items` and builds the word vocabulary from the training
    /// captions.
    pub fn build(
        items: Vec<Item>,
        attributes: AttributeVocab,
        categories: CategorySet,
        fractions: [f64; 3],
        min_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let split = super::split_dataset(&items, fractions, seed)?;
        let train = split.select(&items, super::SplitName::Train)?;
        let captions: Vec<&[String]> = train.iter().map(|i| i.caption.as_slice()).collect();
        let vocab = Vocab::build(&captions, min_count)?;
        Ok(Self {
            items,
            attributes,
            categories,
            split,
            vocab,
        })
    }

    pub fn select(&self, which: super::SplitName) -> Result<Vec<&Item>> {
        self.split.select(&self.items, which)
    }
}

pub fn write_dataset_dir(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rows: Vec<ProcessedRecord> = ds
        .items
        .iter()
        .map(|i| ProcessedRecord::from_item(i, &ds.attributes, &ds.categories))
        .collect();
    write_jsonl(&dir.join(ITEMS_FILE), &rows)?;
    ds.attributes.save(&dir.join(ATTRIBUTES_FILE))?;
    ds.categories.save(&dir.join(CATEGORIES_FILE))?;
    ds.vocab.save(&dir.join(VOCAB_FILE))?;
    fs::write(
        dir.join(SPLIT_FILE),
        serde_json::to_string_pretty(&ds.split)?,
    )?;
    Ok(())
}

pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    let attributes = AttributeVocab::load(&dir.join(ATTRIBUTES_FILE))?;
    let categories = CategorySet::load(&dir.join(CATEGORIES_FILE))?;
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    let split: DatasetSplit = serde_json::from_str(&fs::read_to_string(dir.join(SPLIT_FILE))?)?;
    let items = read_jsonl::<ProcessedRecord>(&dir.join(ITEMS_FILE))?
        .into_iter()
        .map(|r| r.into_item(&attributes, &categories))
        .collect::<Result<Vec<_>>>()?;
    for which in [
        super::SplitName::Train,
        super::SplitName::Val,
        super::SplitName::Test,
    ] {
        split.select(&items, which)?;
    }
    Ok(Dataset {
        items,
        attributes,
        categories,
        split,
        vocab,
    })
}

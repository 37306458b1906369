use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::RawRecord;
use super::{FeatureGrid, Item};
use crate::error::{Error, Result};
use crate::text::tokenize_words;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosTag {
    Noun,
    Adjective,
    Other,
}

impl PosTag {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noun" | "n" | "nn" => Some(Self::Noun),
            "adjective" | "adj" | "a" | "jj" => Some(Self::Adjective),
            "other" | "o" => Some(Self::Other),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Noun => "noun",
            Self::Adjective => "adjective",
            Self::Other => "other",
        }
    }
}

/// Token to part-of-speech table. Unlisted tokens count as [`PosTag::Other`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PosLexicon {
    tags: HashMap<String, PosTag>,
}

impl PosLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: impl Into<String>, tag: PosTag) {
        self.tags.insert(token.into(), tag);
    }

    pub fn tag(&self, token: &str) -> PosTag {
        self.tags.get(token).copied().unwrap_or(PosTag::Other)
    }

    pub fn is_attribute_pos(&self, token: &str) -> bool {
        matches!(self.tag(token), PosTag::Noun | PosTag::Adjective)
    }

    /// `token<TAB>tag` per line; `#` starts a comment.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(tok), Some(tag)) = (parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected `token<TAB>tag`".into(),
                });
            };
            let tag = PosTag::parse(tag).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("unknown tag `{tag}` (noun, adjective, other)"),
            })?;
            lex.insert(tok.trim().to_lowercase(), tag);
        }
        Ok(lex)
    }

    pub fn to_text(&self) -> String {
        let mut rows: Vec<_> = self.tags.iter().collect();
        rows.sort();
        rows.iter()
            .map(|(t, g)| format!("{t}\t{}\n", g.as_str()))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, path)
    }
}

/// Explicit category merges, `from<TAB>to` per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AliasMap {
    map: HashMap<String, String>,
}

impl AliasMap {
    pub fn insert(&mut self, from: impl Into<String>, to: impl Into<String>) {
        self.map.insert(from.into(), to.into());
    }

    pub fn resolve<'a>(&'a self, token: &'a str) -> &'a str {
        self.map.get(token).map_or(token, String::as_str)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m = Self::default();
        for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((a, b)) => m.insert(a.trim().to_lowercase(), b.trim().to_lowercase()),
                None => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: "expected `from<TAB>to`".into(),
                    })
                }
            }
        }
        Ok(m)
    }
}

/// The category token of an item: the last word of its title.
pub fn derive_category<S: AsRef<str>>(title: &[S]) -> Result<String> {
    title
        .last()
        .map(|t| t.as_ref().to_string())
        .ok_or(Error::Empty("title"))
}

/// Title nouns and adjectives that also occur in both the caption and the
/// meta text. Two such words adjacent in the title that also appear adjacent
/// in the caption are merged into one two-word phrase. Phrases come back in
/// title order without duplicates.
pub fn extract_attributes<S: AsRef<str>>(
    title: &[S],
    caption: &[S],
    meta: &[S],
    lexicon: &PosLexicon,
) -> Vec<String> {
    let cap: HashSet<&str> = caption.iter().map(AsRef::as_ref).collect();
    let met: HashSet<&str> = meta.iter().map(AsRef::as_ref).collect();
    let cap_bigrams: HashSet<(&str, &str)> = caption
        .windows(2)
        .map(|w| (w[0].as_ref(), w[1].as_ref()))
        .collect();
    let hit: Vec<bool> = title
        .iter()
        .map(|t| {
            let t = t.as_ref();
            lexicon.is_attribute_pos(t) && cap.contains(t) && met.contains(t)
        })
        .collect();

    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < title.len() {
        if !hit[i] {
            i += 1;
            continue;
        }
        let a = title[i].as_ref();
        if i + 1 < title.len() && hit[i + 1] && cap_bigrams.contains(&(a, title[i + 1].as_ref())) {
            out.push(format!("{a} {}", title[i + 1].as_ref()));
            i += 2;
        } else {
            out.push(a.to_string());
            i += 1;
        }
    }
    let mut seen = HashSet::new();
    out.retain(|p| seen.insert(p.clone()));
    out
}

/// Attribute phrases of one or two tokens; the id is the position.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeVocab {
    phrases: Vec<Vec<String>>,
    item_counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl AttributeVocab {
    /// Phrases in id order; `"notched lapel"` is a two-token phrase.
    pub fn from_phrases<S: AsRef<str>>(phrases: &[S]) -> Result<Self> {
        Self::with_counts(
            phrases
                .iter()
                .map(|p| (p.as_ref().to_string(), 0))
                .collect(),
        )
    }

    fn with_counts(rows: Vec<(String, usize)>) -> Result<Self> {
        let mut phrases = Vec::with_capacity(rows.len());
        let mut item_counts = Vec::with_capacity(rows.len());
        let mut index = HashMap::new();
        for (i, (p, c)) in rows.into_iter().enumerate() {
            let toks = tokenize_words(&p);
            if toks.is_empty() || toks.len() > 2 {
                return Err(Error::Config(format!(
                    "attribute `{p}` must have one or two tokens"
                )));
            }
            let key = toks.join(" ");
            if index.insert(key.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate attribute `{key}`")));
            }
            phrases.push(toks);
            item_counts.push(c);
        }
        Ok(Self {
            phrases,
            item_counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrase(&self, id: usize) -> &[String] {
        &self.phrases[id]
    }

    pub fn phrase_text(&self, id: usize) -> String {
        self.phrases[id].join(" ")
    }

    pub fn id(&self, phrase: &str) -> Option<usize> {
        self.index.get(phrase).copied()
    }

    pub fn item_count(&self, id: usize) -> usize {
        self.item_counts[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[String])> {
        self.phrases
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.as_slice()))
    }

    /// Single-token attributes.
    pub fn unigrams(&self) -> HashSet<&str> {
        self.phrases
            .iter()
            .filter(|p| p.len() == 1)
            .map(|p| p[0].as_str())
            .collect()
    }

    /// Two-token attributes.
    pub fn bigrams(&self) -> HashSet<(&str, &str)> {
        self.phrases
            .iter()
            .filter(|p| p.len() == 2)
            .map(|p| (p[0].as_str(), p[1].as_str()))
            .collect()
    }

    /// `phrase<TAB>item_count` per line; the line index is the id.
    pub fn to_text(&self) -> String {
        self.phrases
            .iter()
            .zip(&self.item_counts)
            .map(|(p, c)| format!("{}\t{c}\n", p.join(" ")))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| match l.split_once('\t') {
                Some((p, c)) => (p.to_string(), c.trim().parse().unwrap_or(0)),
                None => (l.to_string(), 0),
            })
            .collect();
        Self::with_counts(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

/// Keeps phrases seen in at least `min_item_count` distinct items. Ids are
/// ordered by item count (descending), then phrase.
pub fn build_attribute_vocab<S: AsRef<str>>(
    item_phrases: &[Vec<S>],
    min_item_count: usize,
) -> Result<AttributeVocab> {
    let rows = count_and_filter(
        item_phrases.iter().map(|p| {
            p.iter()
                .map(|s| s.as_ref().to_string())
                .collect::<BTreeSet<_>>()
        }),
        min_item_count,
    )?;
    AttributeVocab::with_counts(rows)
}

fn count_and_filter(
    per_item: impl Iterator<Item = BTreeSet<String>>,
    min_count: usize,
) -> Result<Vec<(String, usize)>> {
    if min_count == 0 {
        return Err(Error::Config(
            "item-count threshold must be at least 1".into(),
        ));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for set in per_item {
        for p in set {
            *counts.entry(p).or_default() += 1;
        }
    }
    let mut rows: Vec<(String, usize)> = counts.into_iter().filter(|r| r.1 >= min_count).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategorySet {
    names: Vec<String>,
    item_counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl CategorySet {
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::with_counts(names.iter().map(|n| (n.as_ref().to_string(), 0)).collect())
    }

    fn with_counts(rows: Vec<(String, usize)>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, (n, _)) in rows.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate category `{n}`")));
            }
        }
        let (names, item_counts) = rows.into_iter().unzip();
        Ok(Self {
            names,
            item_counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn item_count(&self, id: usize) -> usize {
        self.item_counts[id]
    }

    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .zip(&self.item_counts)
            .map(|(n, c)| format!("{n}\t{c}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::with_counts(
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| match l.split_once('\t') {
                    Some((n, c)) => (n.to_string(), c.trim().parse().unwrap_or(0)),
                    None => (l.to_string(), 0),
                })
                .collect(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Keeps categories with at least `min_items` items, most frequent first.
pub fn build_category_set<S: AsRef<str>>(
    categories: &[S],
    min_items: usize,
) -> Result<CategorySet> {
    let rows = count_and_filter(
        categories
            .iter()
            .map(|c| BTreeSet::from([c.as_ref().to_string()])),
        min_items,
    )?;
    CategorySet::with_counts(rows)
}

#[derive(Clone, Debug)]
pub struct IngestConfig {
    pub min_attr_items: usize,
    pub min_cat_items: usize,
    pub aliases: AliasMap,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_attr_items: 10,
            min_cat_items: 200,
            aliases: AliasMap::default(),
        }
    }
}

/// Tokenizes raw records, derives categories and attributes, applies the
/// frequency thresholds, and drops items whose category was filtered out.
pub fn ingest(
    records: &[RawRecord],
    lexicon: &PosLexicon,
    cfg: &IngestConfig,
) -> Result<(Vec<Item>, AttributeVocab, CategorySet)> {
    struct Staged {
        rec: usize,
        title: Vec<String>,
        caption: Vec<String>,
        meta: Vec<String>,
        color: Vec<String>,
        category: String,
        phrases: Vec<String>,
    }
    let mut staged = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let title = tokenize_words(&r.title);
        let caption = tokenize_words(&r.description);
        let meta = tokenize_words(&r.meta);
        let category = cfg
            .aliases
            .resolve(
                &derive_category(&title)
                    .map_err(|_| Error::Config(format!("record `{}` has an empty title", r.id)))?,
            )
            .to_string();
        let phrases = extract_attributes(&title, &caption, &meta, lexicon);
        staged.push(Staged {
            rec: i,
            color: tokenize_words(&r.color),
            title,
            caption,
            meta,
            category,
            phrases,
        });
    }

    let cats: Vec<&str> = staged.iter().map(|s| s.category.as_str()).collect();
    let categories = build_category_set(&cats, cfg.min_cat_items)?;
    staged.retain(|s| categories.id(&s.category).is_some());

    let phrase_lists: Vec<&Vec<String>> = staged.iter().map(|s| &s.phrases).collect();
    let phrase_lists: Vec<Vec<&str>> = phrase_lists
        .iter()
        .map(|p| p.iter().map(String::as_str).collect())
        .collect();
    let attributes = build_attribute_vocab(&phrase_lists, cfg.min_attr_items)?;

    let mut items = Vec::with_capacity(staged.len());
    for s in staged {
        let r = &records[s.rec];
        let features = match &r.features {
            Some(rows) => Some(
                FeatureGrid::from_rows(rows)
                    .map_err(|e| Error::Config(format!("record `{}` features: {e}", r.id)))?,
            ),
            None => None,
        };
        let mut attrs: Vec<usize> = s.phrases.iter().filter_map(|p| attributes.id(p)).collect();
        attrs.sort_unstable();
        attrs.dedup();
        items.push(Item {
            id: r.id.clone(),
            title: s.title,
            caption: s.caption,
            meta: s.meta,
            color: s.color,
            category: categories.id(&s.category).expect("retained"),
            attributes: attrs,
            features,
        });
    }
    Ok((items, attributes, categories))
}

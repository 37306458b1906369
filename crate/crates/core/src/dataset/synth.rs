//! Seeded synthetic product corpora with known labels.
//!
//! Each category owns a pool of attributes; an item draws its category
//! uniformly and its attributes from that pool, so items of one category
//! share attribute statistics. Captions come from templates that mention the
//! category word and the attributes in a fixed global order; mention rates
//! let captions leave some of them out. Features put the category embedding in
//! every grid cell and spread the attribute embeddings across cells, plus
//! Gaussian noise.

use rand::seq::{index::sample, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::io::RawRecord;
use super::labels::{build_attribute_vocab, build_category_set, PosLexicon, PosTag};
use super::{AttributeVocab, CategorySet, FeatureGrid, Item};
use crate::error::{Error, Result};
use crate::text::tokenize_words;

const CATEGORY_WORDS: &[&str] = &[
    "dress", "coat", "skirt", "blouse", "sweater", "jacket", "jeans", "shorts", "cardigan",
    "hoodie", "blazer", "vest", "jumpsuit", "romper", "tunic", "camisole", "parka", "trench",
    "kimono", "poncho", "leggings", "trousers", "chinos", "sneakers", "boots", "sandals",
    "loafers", "scarf", "beanie", "tote", "backpack", "belt", "gloves", "pajamas", "robe",
    "bodysuit", "bikini", "overalls", "peacoat", "anorak",
];

const SINGLE_ATTRIBUTES: &[&str] = &[
    "pink",
    "lace",
    "floral",
    "cotton",
    "silk",
    "wool",
    "denim",
    "leather",
    "striped",
    "plaid",
    "black",
    "white",
    "navy",
    "red",
    "green",
    "yellow",
    "beige",
    "ivory",
    "velvet",
    "linen",
    "knit",
    "ribbed",
    "pleated",
    "ruffled",
    "embroidered",
    "sequined",
    "quilted",
    "cropped",
    "oversized",
    "slim",
    "stretch",
    "sheer",
    "satin",
    "chiffon",
    "cashmere",
    "fleece",
    "suede",
    "mesh",
    "tweed",
    "corduroy",
    "gingham",
    "paisley",
    "houndstooth",
    "metallic",
    "neon",
    "pastel",
    "vintage",
    "ombre",
    "tiered",
    "wrap",
    "asymmetric",
    "belted",
    "hooded",
    "zip",
    "button",
    "pocket",
    "drawstring",
    "fringe",
    "tassel",
    "bow",
    "scalloped",
    "crochet",
    "eyelet",
    "smocked",
    "ruched",
    "draped",
    "fitted",
    "flared",
    "tapered",
    "midi",
    "maxi",
    "mini",
    "sleeveless",
    "strapless",
    "halter",
    "printed",
    "washed",
    "distressed",
    "faux",
    "organic",
    "recycled",
    "waterproof",
    "padded",
    "lined",
    "ribbon",
    "beaded",
    "studded",
    "graphic",
    "camo",
    "leopard",
    "burgundy",
    "olive",
    "mustard",
    "teal",
    "coral",
    "lilac",
    "charcoal",
    "khaki",
    "rust",
    "mint",
    "lavender",
];

const PHRASE_MODIFIERS: &[&str] = &[
    "notched",
    "puff",
    "side",
    "high",
    "raw",
    "cap",
    "square",
    "snap",
    "shawl",
    "peak",
    "bishop",
    "cowl",
    "mock",
    "boat",
    "sweetheart",
    "keyhole",
    "funnel",
    "bell",
    "kick",
    "welt",
];

const PHRASE_HEADS: &[&str] = &[
    "lapel",
    "sleeve",
    "slit",
    "waist",
    "hem",
    "shoulder",
    "neckline",
    "front",
    "collar",
    "closure",
    "cuff",
    "drape",
    "turtleneck",
    "placket",
    "bodice",
    "cutout",
    "funnelneck",
    "flare",
    "pleat",
    "seam",
];

/// Template words the generator can emit besides category and attribute words.
const FILLER_WORDS: &[&str] = &[
    "this",
    "is",
    "finished",
    "with",
    "a",
    "relaxed",
    "fit",
    "in",
    "for",
    "easy",
    "everyday",
    "wear",
    "details",
    "define",
    "classic",
    "designed",
    "pairs",
    "well",
    "everything",
    "the",
    "features",
    "and",
    "clean",
    "silhouette",
    "care",
    "dry",
    "clean",
    "only",
    "piece",
    "simple",
];

/// Stands in for the category word in captions that leave it out.
const GENERIC_NOUN: &str = "piece";
/// Stands in for the attribute list when a caption mentions none.
const GENERIC_ATTRS: &str = "simple";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_categories: usize,
    pub n_attributes: usize,
    pub attributes_per_item: usize,
    /// Attributes available to each category.
    pub pool_size: usize,
    /// Share of attributes rendered as two-word phrases.
    pub two_token_fraction: f64,
    pub grid_cells: usize,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    /// Probability that a caption names each of its item's attributes.
    /// Titles and metadata always list all of them.
    pub mention_rate: f64,
    /// Probability that a caption names the category rather than a generic
    /// noun.
    pub category_mention_rate: f64,
    /// Caption templates; `{cat}` and `{attrs}` are substituted.
    pub templates: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_categories: 20,
            n_attributes: 60,
            attributes_per_item: 3,
            pool_size: 8,
            two_token_fraction: 0.2,
            grid_cells: 4,
            feature_dim: 32,
            noise: 0.0,
            mention_rate: 1.0,
            category_mention_rate: 1.0,
            templates: vec![
                "this {attrs} {cat} is finished with a relaxed fit".into(),
                "a {cat} in {attrs} for easy everyday wear".into(),
                "{attrs} details define this classic {cat}".into(),
                "designed with {attrs} this {cat} pairs well with everything".into(),
                "the {cat} features {attrs} and a clean silhouette".into(),
            ],
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_items == 0 || self.n_categories == 0 {
            return bad("synthetic corpus needs at least one item and one category".into());
        }
        if self.pool_size > self.n_attributes {
            return bad(format!(
                "pool_size {} exceeds n_attributes {}",
                self.pool_size, self.n_attributes
            ));
        }
        if self.attributes_per_item > self.pool_size {
            return bad(format!(
                "attributes_per_item {} exceeds pool_size {}",
                self.attributes_per_item, self.pool_size
            ));
        }
        if self.grid_cells == 0 || self.feature_dim == 0 {
            return bad("feature grid must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.two_token_fraction) || self.noise < 0.0 {
            return bad("two_token_fraction must be in [0, 1] and noise >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.mention_rate)
            || !(0.0..=1.0).contains(&self.category_mention_rate)
        {
            return bad("mention rates must be in [0, 1]".into());
        }
        if self.templates.is_empty() || self.templates.iter().any(|t| !t.contains("{cat}")) {
            return bad("every template must contain {cat}".into());
        }
        Ok(())
    }
}

/// Generated items plus the bookkeeping needed to re-derive their labels.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub items: Vec<Item>,
    pub attributes: AttributeVocab,
    pub categories: CategorySet,
    /// The records as raw text, suitable for the ingest pipeline.
    pub raw: Vec<RawRecord>,
    /// Tags attribute words as adjectives/nouns and everything else as other.
    pub lexicon: PosLexicon,
}

fn attribute_names(cfg: &SynthConfig) -> Vec<String> {
    let n_two = (cfg.n_attributes as f64 * cfg.two_token_fraction).round() as usize;
    let n_one = cfg.n_attributes - n_two;
    let mut out: Vec<String> = (0..n_one)
        .map(|i| {
            SINGLE_ATTRIBUTES
                .get(i)
                .map_or_else(|| format!("attr{i}"), |s| s.to_string())
        })
        .collect();
    out.extend(
        (0..n_two).map(|i| match (PHRASE_MODIFIERS.get(i), PHRASE_HEADS.get(i)) {
            (Some(m), Some(h)) => format!("{m} {h}"),
            _ => format!("mod{i} part{i}"),
        }),
    );
    out
}

fn category_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            CATEGORY_WORDS
                .get(i)
                .map_or_else(|| format!("cat{i}"), |s| s.to_string())
        })
        .collect()
}

fn join_attrs(attrs: &[&str]) -> String {
    match attrs {
        [] => String::new(),
        [a] => a.to_string(),
        [rest @ .., last] => format!("{} and {last}", rest.join(", ")),
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn generate_synthetic_corpus(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attr_names = attribute_names(cfg);
    let cat_names = category_names(cfg.n_categories);
    let d = cfg.feature_dim;

    let pools: Vec<Vec<usize>> = (0..cfg.n_categories)
        .map(|_| sample(&mut rng, cfg.n_attributes, cfg.pool_size).into_vec())
        .collect();
    let attr_emb: Vec<Vec<f64>> = (0..cfg.n_attributes)
        .map(|_| gaussian_vec(&mut rng, d))
        .collect();
    let cat_emb: Vec<Vec<f64>> = (0..cfg.n_categories)
        .map(|_| gaussian_vec(&mut rng, d))
        .collect();

    struct Draft {
        cat: usize,
        attrs: Vec<usize>,
        raw: RawRecord,
    }
    let width = cfg.n_items.to_string().len();
    let mut drafts = Vec::with_capacity(cfg.n_items);
    for n in 0..cfg.n_items {
        let cat = rng.random_range(0..cfg.n_categories);
        let pool = &pools[cat];
        // Attributes are always listed in one global order, the way
        // adjectives follow a conventional order.
        let mut attrs: Vec<usize> = sample(&mut rng, pool.len(), cfg.attributes_per_item)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        attrs.sort_unstable();
        let template = cfg.templates.choose(&mut rng).expect("validated non-empty");
        let names: Vec<&str> = attrs.iter().map(|&a| attr_names[a].as_str()).collect();
        let mentioned: Vec<&str> = names
            .iter()
            .copied()
            .filter(|_| rng.random_bool(cfg.mention_rate))
            .collect();
        let noun = if rng.random_bool(cfg.category_mention_rate) {
            cat_names[cat].as_str()
        } else {
            GENERIC_NOUN
        };
        let attr_text = if mentioned.is_empty() && !names.is_empty() {
            GENERIC_ATTRS.to_string()
        } else {
            join_attrs(&mentioned)
        };
        let caption = template
            .replace("{attrs}", &attr_text)
            .replace("{cat}", noun);
        let title = if names.is_empty() {
            cat_names[cat].clone()
        } else {
            format!("{} {}", names.join(" and "), cat_names[cat])
        };
        let meta = format!("details: {}. care: dry clean only", names.join("; "));

        let mut grid = vec![0.0; cfg.grid_cells * d];
        for cell in grid.chunks_mut(d) {
            cell.copy_from_slice(&cat_emb[cat]);
        }
        for (j, &a) in attrs.iter().enumerate() {
            let cell = j % cfg.grid_cells;
            for (g, e) in grid[cell * d..(cell + 1) * d].iter_mut().zip(&attr_emb[a]) {
                *g += e;
            }
        }
        if cfg.noise > 0.0 {
            for g in &mut grid {
                *g += cfg.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let features = FeatureGrid::new(cfg.grid_cells, d, grid)?;
        drafts.push(Draft {
            cat,
            attrs,
            raw: RawRecord {
                id: format!("syn{n:0width$}"),
                title,
                description: caption,
                meta,
                color: "as shown".into(),
                features: Some(features.to_rows()),
            },
        });
    }

    let cats: Vec<&str> = drafts.iter().map(|d| cat_names[d.cat].as_str()).collect();
    let categories = build_category_set(&cats, 1)?;
    let phrase_lists: Vec<Vec<&str>> = drafts
        .iter()
        .map(|d| d.attrs.iter().map(|&a| attr_names[a].as_str()).collect())
        .collect();
    let attributes = build_attribute_vocab(&phrase_lists, 1)?;

    let mut lexicon = PosLexicon::new();
    for name in &attr_names {
        let toks = tokenize_words(name);
        match toks.as_slice() {
            [one] => lexicon.insert(one.clone(), PosTag::Adjective),
            [m, h] => {
                lexicon.insert(m.clone(), PosTag::Adjective);
                lexicon.insert(h.clone(), PosTag::Noun);
            }
            _ => {}
        }
    }
    for w in cat_names
        .iter()
        .map(String::as_str)
        .chain(FILLER_WORDS.iter().copied())
    {
        lexicon.insert(w, PosTag::Other);
    }

    let mut items = Vec::with_capacity(drafts.len());
    let mut raw = Vec::with_capacity(drafts.len());
    for d in drafts {
        let mut attrs: Vec<usize> = d
            .attrs
            .iter()
            .map(|&a| attributes.id(&attr_names[a]).expect("counted above"))
            .collect();
        attrs.sort_unstable();
        let r = d.raw;
        items.push(Item {
            id: r.id.clone(),
            title: tokenize_words(&r.title),
            caption: tokenize_words(&r.description),
            meta: tokenize_words(&r.meta),
            color: tokenize_words(&r.color),
            category: categories.id(&cat_names[d.cat]).expect("counted above"),
            attributes: attrs,
            features: Some(FeatureGrid::from_rows(
                r.features.as_ref().expect("set above"),
            )?),
        });
        raw.push(r);
    }
    Ok(SyntheticCorpus {
        items,
        attributes,
        categories,
        raw,
        lexicon,
    })
}

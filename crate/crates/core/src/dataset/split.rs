use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Item;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// Disjoint train/val/test item ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn ids(&self, which: SplitName) -> &[String] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    /// Items of one split in manifest order.
    pub fn select<'a>(&self, items: &'a [Item], which: SplitName) -> Result<Vec<&'a Item>> {
        let by_id: HashMap<&str, &Item> = items.iter().map(|i| (i.id.as_str(), i)).collect();
        self.ids(which)
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Config(format!("split lists unknown item `{id}`")))
            })
            .collect()
    }
}

/// Groups items by caption, shuffles the groups with `seed`, then hands each
/// group to the split furthest below its target size. Items sharing a caption
/// always land in the same split.
pub fn split_dataset(items: &[Item], fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if items.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&str>> = HashMap::new();
    for it in items {
        let key = it.caption.join(" ");
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(&it.id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = items.len() as f64;
    let targets = fractions.map(|f| f * n);
    let mut out: [Vec<String>; 3] = Default::default();
    for key in order {
        let ids = &groups[&key];
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (s, t) in targets.iter().enumerate() {
            let deficit = t - out[s].len() as f64;
            if deficit > best_deficit {
                best = s;
                best_deficit = deficit;
            }
        }
        out[best].extend(ids.iter().map(|s| s.to_string()));
    }
    let [train, val, test] = out;
    Ok(DatasetSplit { train, val, test })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn item(id: usize, caption: &str) -> Item {
        Item {
            id: format!("i{id}"),
            title: vec!["x".into()],
            caption: caption.split(' ').map(String::from).collect(),
            meta: vec![],
            color: vec![],
            category: 0,
            attributes: vec![],
            features: None,
        }
    }

    #[test]
    fn everything_in_train() {
        let items: Vec<Item> = (0..10).map(|i| item(i, &format!("c{i}"))).collect();
        let s = split_dataset(&items, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(s.train.len(), 10);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn rejects_empty_and_bad_fractions() {
        assert!(split_dataset(&[], [1.0, 0.0, 0.0], 0).is_err());
        assert!(split_dataset(&[item(0, "a")], [0.5, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn proportions_are_close() {
        let items: Vec<Item> = (0..1000).map(|i| item(i, &format!("c{i}"))).collect();
        let s = split_dataset(&items, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (800, 100, 100));
    }

    proptest! {
        #[test]
        fn shared_captions_stay_together(caps in prop::collection::vec(0u8..12, 1..60), seed in 0u64..1000) {
            let items: Vec<Item> = caps.iter().enumerate().map(|(i, c)| item(i, &format!("cap {c}"))).collect();
            let s = split_dataset(&items, [0.6, 0.2, 0.2], seed).unwrap();
            prop_assert_eq!(&s, &split_dataset(&items, [0.6, 0.2, 0.2], seed).unwrap());
            let mut where_: HashMap<String, usize> = HashMap::new();
            let mut seen = 0;
            for (k, part) in [&s.train, &s.val, &s.test].iter().enumerate() {
                for id in part.iter() {
                    seen += 1;
                    let idx: usize = id[1..].parse().unwrap();
                    let prev = where_.insert(items[idx].caption.join(" "), k);
                    prop_assert!(prev.is_none() || prev == Some(k));
                }
            }
            prop_assert_eq!(seen, items.len());
        }
    }
}

//! Item records, attribute/category labeling, splits, and synthetic corpora.

mod io;
mod labels;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_dataset_dir, read_raw_records, write_dataset_dir, write_raw_records, Dataset,
    ProcessedRecord, RawRecord,
};
pub use labels::{
    build_attribute_vocab, build_category_set, derive_category, extract_attributes, ingest,
    AliasMap, AttributeVocab, CategorySet, IngestConfig, PosLexicon, PosTag,
};
pub use split::{split_dataset, DatasetSplit, SplitName};
pub use synth::{generate_synthetic_corpus, SynthConfig, SyntheticCorpus};

/// `B` feature vectors of dimension `D`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    cells: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(cells: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if cells == 0 || dim == 0 || data.len() != cells * dim {
            return Err(Error::Config(format!(
                "feature grid {cells}x{dim} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { cells, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Config("feature rows have unequal lengths".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }
}

/// One labeled product record.
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: String,
    pub title: Vec<String>,
    pub caption: Vec<String>,
    pub meta: Vec<String>,
    pub color: Vec<String>,
    pub category: usize,
    /// Sorted, deduplicated attribute ids.
    pub attributes: Vec<usize>,
    pub features: Option<FeatureGrid>,
}

impl Item {
    pub fn features(&self) -> Result<&FeatureGrid> {
        self.features
            .as_ref()
            .ok_or_else(|| Error::Config(format!("item `{}` has no feature grid", self.id)))
    }

    /// Multi-hot attribute label vector of length `n_attributes`.
    pub fn attribute_labels(&self, n_attributes: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_attributes];
        for &a in &self.attributes {
            v[a] = 1.0;
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub cells: usize,
    pub dim: usize,
}

/// Checks every item has a feature grid of one common shape.
pub fn common_grid_shape(items: &[Item]) -> Result<GridShape> {
    let first = items.first().ok_or(Error::Empty("item list"))?.features()?;
    let shape = GridShape {
        cells: first.cells(),
        dim: first.dim(),
    };
    for it in items {
        let g = it.features()?;
        if g.cells() != shape.cells || g.dim() != shape.dim {
            return Err(Error::Config(format!(
                "item `{}` has a {}x{} grid, expected {}x{}",
                it.id,
                g.cells(),
                g.dim(),
                shape.cells,
                shape.dim
            )));
        }
    }
    Ok(shape)
}

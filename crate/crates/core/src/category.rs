//! Layout categories and the dataset-driven name/id table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four layout element kinds a page is decomposed into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    Paragraph,
    TextBox,
    Image,
    Table,
}

impl CategoryKind {
    pub const ALL: [CategoryKind; 4] = [
        CategoryKind::Paragraph,
        CategoryKind::TextBox,
        CategoryKind::Image,
        CategoryKind::Table,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CategoryKind::Paragraph => "paragraph",
            CategoryKind::TextBox => "text_box",
            CategoryKind::Image => "image",
            CategoryKind::Table => "table",
        }
    }
}

impl fmt::Display for CategoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CategoryKind {
    type Err = CategoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CategoryKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CategoryError::UnknownName(s.to_string()))
    }
}

/// A category as numbered by a particular dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayoutCategory {
    pub id: u32,
    pub kind: CategoryKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CategoryError {
    #[error("unknown category name {0:?}")]
    UnknownName(String),
    #[error("expected exactly 4 categories, found {0}")]
    WrongCount(usize),
    #[error("duplicate category name {0:?}")]
    DuplicateName(String),
    #[error("duplicate category id {0}")]
    DuplicateId(u32),
    #[error("category ids are not dense: {0:?}")]
    NotDense(Vec<u32>),
    #[error("unknown category id {0}")]
    UnknownId(u32),
}

/// Name↔id mapping loaded from a dataset's category list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTable {
    by_id: BTreeMap<u32, CategoryKind>,
}

impl Default for CategoryTable {
    /// Ids 1 to 4 for paragraph, text_box, image and table.
    fn default() -> Self {
        Self {
            by_id: CategoryKind::ALL.iter().zip(1..).map(|(&k, id)| (id, k)).collect(),
        }
    }
}

impl CategoryTable {
    /// Builds the table from `(id, name)` pairs, enforcing four unique names
    /// and dense unique ids starting at the smallest id.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (u32, &'a str)>,
    ) -> Result<Self, CategoryError> {
        let mut by_id = BTreeMap::new();
        let mut seen = Vec::new();
        let mut count = 0;
        for (id, name) in pairs {
            count += 1;
            let kind: CategoryKind = name.parse()?;
            if seen.contains(&kind) {
                return Err(CategoryError::DuplicateName(name.to_string()));
            }
            seen.push(kind);
            if by_id.insert(id, kind).is_some() {
                return Err(CategoryError::DuplicateId(id));
            }
        }
        if count != 4 {
            return Err(CategoryError::WrongCount(count));
        }
        let ids: Vec<u32> = by_id.keys().copied().collect();
        if ids.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(CategoryError::NotDense(ids));
        }
        Ok(Self { by_id })
    }

    pub fn get(&self, id: u32) -> Result<LayoutCategory, CategoryError> {
        self.by_id
            .get(&id)
            .map(|&kind| LayoutCategory { id, kind })
            .ok_or(CategoryError::UnknownId(id))
    }

    pub fn by_kind(&self, kind: CategoryKind) -> LayoutCategory {
        let id = self
            .by_id
            .iter()
            .find(|(_, &k)| k == kind)
            .map(|(&id, _)| id)
            .expect("table holds all four kinds");
        LayoutCategory { id, kind }
    }

    /// Categories in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = LayoutCategory> + '_ {
        self.by_id.iter().map(|(&id, &kind)| LayoutCategory { id, kind })
    }
}

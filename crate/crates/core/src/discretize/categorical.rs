use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense category map. Index `categories.len()` is the missing-value category.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "CategoricalRepr", into = "CategoricalRepr")]
pub struct CategoricalEncoder {
    categories: Vec<String>,
    lookup: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct CategoricalRepr {
    categories: Vec<String>,
}

impl From<CategoricalRepr> for CategoricalEncoder {
    fn from(r: CategoricalRepr) -> Self {
        Self::from_categories(r.categories)
    }
}

impl From<CategoricalEncoder> for CategoricalRepr {
    fn from(e: CategoricalEncoder) -> Self {
        Self { categories: e.categories }
    }
}

impl PartialEq for CategoricalEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.categories == other.categories
    }
}

impl CategoricalEncoder {
    /// Most frequent value first; ties broken lexicographically.
    pub fn fit<'a>(values: impl Iterator<Item = Option<&'a str>>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for v in values.flatten() {
            *counts.entry(v).or_default() += 1;
        }
        let mut cats: Vec<(&str, usize)> = counts.into_iter().collect();
        cats.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_categories(cats.into_iter().map(|(s, _)| s.to_string()).collect())
    }

    pub fn from_categories(categories: Vec<String>) -> Self {
        let lookup = categories.iter().enumerate().map(|(i, c)| (c.clone(), i as u32)).collect();
        Self { categories, lookup }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn missing_index(&self) -> u32 {
        self.categories.len() as u32
    }

    pub fn cardinality(&self) -> u32 {
        self.categories.len() as u32 + 1
    }

    /// `None` if the value is not in the vocabulary.
    pub fn encode(&self, value: Option<&str>) -> Option<u32> {
        match value {
            None => Some(self.missing_index()),
            Some(v) => self.lookup.get(v).copied(),
        }
    }

    pub fn decode(&self, index: u32) -> Result<Option<String>> {
        let i = index as usize;
        if i < self.categories.len() {
            Ok(Some(self.categories[i].clone()))
        } else if index == self.missing_index() {
            Ok(None)
        } else {
            Err(Error::Encoding(format!("category index {index} out of range")))
        }
    }
}

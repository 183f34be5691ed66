use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::norm;

/// Space an embedding table lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Flat,
    Ball,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Flat => "flat",
            Space::Ball => "ball",
        }
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Space::Flat),
            "ball" => Ok(Space::Ball),
            other => Err(Error::arg(format!("unknown space tag {other:?}"))),
        }
    }
}

/// Node id → vector lookup, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    space: Space,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, dim: usize, space: Space, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("embedding dimension must be positive"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::arg(format!("{} values do not fill {} rows of dimension {dim}", data.len(), ids.len())));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::arg(format!("duplicate embedding id {id:?}")));
            }
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("embedding value {v}")));
        }
        let t = EmbeddingTable { ids, index, dim, space, data };
        if space == Space::Ball {
            for i in 0..t.len() {
                let n = norm(t.row(i));
                if n >= 1.0 {
                    return Err(Error::domain(format!("ball embedding {} has norm {n}", t.ids[i])));
                }
            }
        }
        Ok(t)
    }

    pub fn from_rows(ids: Vec<String>, space: Space, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::arg("embedding rows differ in dimension"));
        }
        EmbeddingTable::new(ids, dim, space, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Largest row norm.
    pub fn max_norm(&self) -> f64 {
        (0..self.len()).map(|i| norm(self.row(i))).fold(0.0, f64::max)
    }

    /// Reorders rows to follow `ids`, failing on any missing id.
    pub fn reindexed(&self, ids: &[String]) -> Result<EmbeddingTable> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let row = self.get(id).ok_or_else(|| Error::arg(format!("embedding table has no entry for {id:?}")))?;
            data.extend_from_slice(row);
        }
        EmbeddingTable::new(ids.to_vec(), self.dim, self.space, data)
    }
}

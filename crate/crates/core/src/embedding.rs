use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{norm, Rng, Vector};

/// Class name → unit vector. Iteration order is sorted by name.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    names: Vec<String>,
    vectors: Vec<Vector>,
}

/// Loader tolerance before a non-unit input vector is reported.
pub const NORM_WARN_TOL: f64 = 1e-3;

impl EmbeddingTable {
    /// Normalizes every vector; returns the table and the names whose input
    /// norm deviated from 1 by more than [`NORM_WARN_TOL`].
    pub fn from_map(map: BTreeMap<String, Vector>) -> Result<(Self, Vec<String>)> {
        Self::normalize(map, true)
    }

    fn normalize(map: BTreeMap<String, Vector>, report: bool) -> Result<(Self, Vec<String>)> {
        let dim = map.values().next().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Data("embedding table is empty".into()));
        }
        let mut names = Vec::with_capacity(map.len());
        let mut vectors = Vec::with_capacity(map.len());
        let mut off_norm = Vec::new();
        for (name, v) in map {
            if v.len() != dim {
                return Err(Error::dim(format!(
                    "embedding `{name}` has length {}, expected {dim}",
                    v.len()
                )));
            }
            let n = norm(&v);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Degenerate(format!("embedding `{name}` has norm {n}")));
            }
            if report && (n - 1.0).abs() > NORM_WARN_TOL {
                log::warn!("embedding `{name}` has norm {n:.6}; normalizing");
                off_norm.push(name.clone());
            }
            vectors.push(v.iter().map(|x| x / n).collect());
            names.push(name);
        }
        Ok((Self { names, vectors }, off_norm))
    }

    /// Random directions, uniform on the sphere.
    pub fn random(names: &[String], dim: usize, rng: &mut Rng) -> Self {
        let map = names
            .iter()
            .map(|n| {
                let v: Vector = (0..dim).map(|_| rng.normal()).collect();
                (n.clone(), v)
            })
            .collect();
        Self::normalize(map, false).expect("gaussian draws are nonzero").0
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, Vector> =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_map(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: BTreeMap<&str, &Vector> = self
            .names
            .iter()
            .map(String::as_str)
            .zip(&self.vectors)
            .collect();
        let json = serde_json::to_string_pretty(&map)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.vectors[index]
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.vector(i))
    }

    /// Sub-table over the given class names, in sorted order.
    pub fn restrict(&self, names: &[String]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for n in names {
            let v = self
                .get(n)
                .ok_or_else(|| Error::Data(format!("class `{n}` missing from embedding table")))?;
            map.insert(n.clone(), v.to_vec());
        }
        Ok(Self::from_map(map)?.0)
    }
}
